"""
实验矩阵: 单初值时域扫描、75 初值网格、控制延迟扫描、SHFM 定速跟车、驾驶工况测试。

每个回合是一个可 pickle 的 EpisodeTask，交给 services.executor 并行执行；
所有汇总都由原始回合代价重新计算，与回合执行顺序无关。
"""
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import settings
from core.models import (
    AccParams,
    BarrierOptions,
    DriveCycle,
    EpisodeTrace,
    IcGrid,
    KinematicState,
    MethodSpec,
    ModelSpec,
    ParamValidationError,
    SummaryRow,
    SurrogateParams,
)
from services.cycles import preceding_acceleration, resample
from services.drl.agent import ActorCritic
from services.executor import run_tasks
from services.factories import create_factory
from services.simulation import run_episode
from services.sysid import identify_time_constant

IPO = MethodSpec('IPO')
DRL = MethodSpec('DRL')


@dataclass(eq=False)
class RunContext:
    """一次实验共享的运行时依赖"""
    p: AccParams = field(default_factory=AccParams)
    nets: Optional[ActorCritic] = None
    options: Optional[BarrierOptions] = None
    warm_start: bool = settings.MPC_WARM_START
    jobs: int = 1
    progress: bool = False


@dataclass(eq=False)
class EpisodeTask:
    method: MethodSpec
    model: ModelSpec
    s0: KinematicState
    T: int
    p: AccParams
    scenario: str = ''
    a_prec: Optional[np.ndarray] = None
    v_ego0: float = 0.0
    nets: Optional[ActorCritic] = None
    options: Optional[BarrierOptions] = None
    warm_start: bool = settings.MPC_WARM_START


def run_task(task: EpisodeTask) -> EpisodeTrace:
    if task.method.kind == 'IPO' and task.model.variant != 'com':
        raise ParamValidationError("the IPO benchmark is only defined on the exact COM")
    factory = create_factory(task.method, task.T, task.nets, task.options, task.warm_start)
    return run_episode(
        factory.create_controller(task.p), task.model, task.s0, task.T, task.p,
        a_prec=task.a_prec, v_ego0=task.v_ego0, scenario=task.scenario,
    )


def make_task(method: MethodSpec, model: ModelSpec, s0: KinematicState, T: int, ctx: RunContext, **kwargs) -> EpisodeTask:
    return EpisodeTask(
        method=method, model=model, s0=s0, T=T, p=ctx.p,
        nets=ctx.nets if method.kind == 'DRL' else None,
        options=ctx.options, warm_start=ctx.warm_start, **kwargs,
    )


def run_episodes(tasks: Sequence[EpisodeTask], ctx: RunContext, desc: str = 'episodes') -> List[EpisodeTrace]:
    traces = run_tasks(run_task, tasks, jobs=ctx.jobs, progress=ctx.progress, desc=desc)
    warnings = sum(t.solver_warnings for t in traces)
    if warnings:
        logging.warning(f"{desc}: {warnings} solver steps did not converge")
    return traces


def _mean(values: Sequence[float]) -> float:
    # fsum 与求和顺序无关
    return math.fsum(values) / len(values)


def summarize(
    traces: Sequence[EpisodeTrace],
    scenario: str,
    method: str,
    baseline_cost: Optional[float] = None,
    baseline_method: Optional[str] = None,
) -> SummaryRow:
    """单回合或多回合的统计行; 多回合时 episode_cost 为平均值"""
    if not traces:
        raise ValueError(f"no traces to summarize for {scenario}/{method}")
    return SummaryRow(
        scenario=scenario,
        method=method,
        episode_cost=_mean([t.cost for t in traces]),
        e_min=float(min(t.e.min() for t in traces)),
        e_mean=_mean([math.fsum(t.e) / len(t) for t in traces]),
        e_max=float(max(t.e.max() for t in traces)),
        j_min=float(min(t.jerk.min() for t in traces)),
        j_mean=_mean([math.fsum(t.jerk) / len(t) for t in traces]),
        j_max=float(max(t.jerk.max() for t in traces)),
        baseline_cost=baseline_cost,
        baseline_method=baseline_method,
        controller_seconds=_mean([t.controller_seconds for t in traces]),
    )


def increase_pct(cost: float, baseline: float) -> float:
    return (cost / baseline - 1.0) * 100.0


# --- 单初值时域扫描 ---

@dataclass(eq=False)
class HorizonSweepResult:
    rows: List[SummaryRow]
    traces: Dict[str, EpisodeTrace]
    ipo_cost: float
    horizons: List[int]

    def cost(self, label: str) -> float:
        return self.traces[label].cost

    def time_ratio(self, label: str) -> Optional[float]:
        """MPC 与 DRL 单回合控制器耗时之比"""
        if 'DRL' not in self.traces:
            return None
        drl = self.traces['DRL'].controller_seconds
        return self.traces[label].controller_seconds / drl if drl > 0 else None


def horizon_sweep(
    ic: KinematicState,
    horizons: Sequence[int],
    T: int,
    ctx: RunContext,
    scenario: str = 'horizon',
) -> HorizonSweepResult:
    methods = [IPO] + [MethodSpec('MPC', h) for h in horizons]
    if ctx.nets is not None:
        methods.append(DRL)
    tasks = [make_task(m, ModelSpec.com(), ic, T, ctx, scenario=scenario) for m in methods]
    traces = dict(zip([m.label for m in methods], run_episodes(tasks, ctx, desc='horizon sweep')))

    ipo_cost = traces['IPO'].cost
    rows = [
        summarize([trace], scenario, label, None if label == 'IPO' else ipo_cost, None if label == 'IPO' else 'IPO')
        for label, trace in traces.items()
    ]
    for h in horizons:
        label = MethodSpec('MPC', h).label
        logging.info(f"{label}: cost={traces[label].cost:.4f} ({increase_pct(traces[label].cost, ipo_cost):+.1f}% vs IPO)")
    return HorizonSweepResult(rows=rows, traces=traces, ipo_cost=ipo_cost, horizons=list(horizons))


# --- 初值网格 ---

@dataclass(eq=False)
class GridResult:
    grid: IcGrid
    model: ModelSpec
    traces: Dict[str, List[EpisodeTrace]]
    rows: List[SummaryRow]

    def mean_cost(self, label: str) -> float:
        return _mean([t.cost for t in self.traces[label]])

    def increase(self, label: str, baseline: str = 'IPO') -> float:
        return increase_pct(self.mean_cost(label), self.mean_cost(baseline))

    def per_e0_increase(self, label: str, baseline: str = 'IPO') -> Dict[float, float]:
        """按 e0 分组的平均代价增幅"""
        costs: Dict[float, List[float]] = defaultdict(list)
        base: Dict[float, List[float]] = defaultdict(list)
        ics = self.grid.initial_conditions()
        for ic, trace, ref in zip(ics, self.traces[label], self.traces[baseline]):
            costs[ic.e].append(trace.cost)
            base[ic.e].append(ref.cost)
        return {e0: increase_pct(_mean(costs[e0]), _mean(base[e0])) for e0 in sorted(costs)}


def grid_eval(
    grid: IcGrid,
    methods: Sequence[MethodSpec],
    model: ModelSpec,
    T: int,
    ctx: RunContext,
    scenario: Optional[str] = None,
) -> GridResult:
    """
    每种方法跑完整个网格。COM 上以 IPO 为基准，其余模型以 DRL 为基准比较 MPC。
    """
    scenario = scenario or (f"grid-{grid.name}" if model.variant == 'com' else f"grid-{grid.name}-{model.label}")
    methods = list(methods)
    if model.variant != 'com' and IPO in methods:
        logging.warning(f"Dropping IPO from {scenario}: the benchmark is only defined on the COM")
        methods.remove(IPO)
    ics = grid.initial_conditions()
    tasks = [make_task(m, model, ic, T, ctx, scenario=scenario) for m in methods for ic in ics]
    flat = run_episodes(tasks, ctx, desc=scenario)
    traces = {m.label: flat[i * len(ics):(i + 1) * len(ics)] for i, m in enumerate(methods)}

    baseline = 'IPO' if 'IPO' in traces else ('DRL' if 'DRL' in traces else None)
    base_cost = _mean([t.cost for t in traces[baseline]]) if baseline else None
    rows = [
        summarize(
            traces[m.label], scenario, m.label,
            None if m.label == baseline else base_cost,
            None if m.label == baseline else baseline,
        )
        for m in methods
    ]
    result = GridResult(grid=grid, model=model, traces=traces, rows=rows)
    for row in rows:
        suffix = f" ({row.increase_pct:+.2f}% vs {baseline})" if row.increase_pct is not None else ''
        logging.info(f"{scenario} {row.method}: average cost {row.episode_cost:.4f}{suffix}")
    return result


# --- 控制延迟 ---

@dataclass(eq=False)
class DelaySweepResult:
    results: Dict[float, GridResult]

    @property
    def rows(self) -> List[SummaryRow]:
        return [row for tau in sorted(self.results) for row in self.results[tau].rows]

    def averages(self) -> Dict[float, Dict[str, float]]:
        return {
            tau: {label: result.mean_cost(label) for label in result.traces}
            for tau, result in sorted(self.results.items())
        }


def delay_sweep(
    tau_values: Sequence[float],
    grid: IcGrid,
    methods: Sequence[MethodSpec],
    T: int,
    ctx: RunContext,
) -> DelaySweepResult:
    """两种控制器都保持无延迟的内部模型，只有仿真对象带延迟"""
    results = {}
    for tau_d in tau_values:
        model = ModelSpec.delayed(tau_d)
        results[float(tau_d)] = grid_eval(grid, methods, model, T, ctx, scenario=f"delay-{tau_d:g}")
    return DelaySweepResult(results=results)


# --- SHFM 定速跟车 ---

@dataclass(eq=False)
class ShfmSpeedResult:
    traces: Dict[float, Dict[str, EpisodeTrace]]
    com_reference: Dict[str, EpisodeTrace]
    rows: List[SummaryRow]

    def costs(self) -> Dict[float, Dict[str, float]]:
        return {v: {label: t.cost for label, t in by.items()} for v, by in sorted(self.traces.items())}

    def power_limited(self) -> Dict[float, Dict[str, bool]]:
        return {v: {label: bool(t.power_limited.any()) for label, t in by.items()} for v, by in sorted(self.traces.items())}


def _baseline_rows(traces: Dict[str, EpisodeTrace], scenario: str) -> List[SummaryRow]:
    """MPC 对 DRL 的比较行 (非 COM 实验没有 IPO)"""
    base = traces.get('DRL')
    return [
        summarize(
            [trace], scenario, label,
            base.cost if base is not None and label != 'DRL' else None,
            'DRL' if base is not None and label != 'DRL' else None,
        )
        for label, trace in traces.items()
    ]


def shfm_constant_speed(
    speeds: Sequence[float],
    ic: KinematicState,
    T: int,
    ctx: RunContext,
    methods: Sequence[MethodSpec],
    surrogate: Optional[SurrogateParams] = None,
) -> ShfmSpeedResult:
    """前车以 v_i0 + e_v0 匀速行驶，本车初速 v_i0"""
    model = ModelSpec.surrogate_hfm(surrogate)
    methods = [m for m in methods if m.kind != 'IPO']
    tasks = [
        make_task(m, model, ic, T, ctx, scenario=f"shfm-v{v:g}", v_ego0=float(v))
        for v in speeds for m in methods
    ]
    tasks += [make_task(m, ModelSpec.com(), ic, T, ctx, scenario='shfm-com-reference') for m in methods]
    flat = run_episodes(tasks, ctx, desc='shfm speeds')

    traces: Dict[float, Dict[str, EpisodeTrace]] = {}
    rows: List[SummaryRow] = []
    it = iter(flat)
    for v in speeds:
        traces[float(v)] = {m.label: next(it) for m in methods}
        rows += _baseline_rows(traces[float(v)], f"shfm-v{v:g}")
    com_reference = {m.label: next(it) for m in methods}
    rows += _baseline_rows(com_reference, 'shfm-com-reference')

    for v, by in sorted(traces.items()):
        flags = ', '.join(f"{label}{' (power-limited)' if t.power_limited.any() else ''}={t.cost:.3f}" for label, t in by.items())
        logging.info(f"SHFM v_i0={v:g} m/s: {flags}")
    return ShfmSpeedResult(traces=traces, com_reference=com_reference, rows=rows)


# --- 驾驶工况 ---

@dataclass(eq=False)
class CycleResult:
    cycle: str
    traces: Dict[str, EpisodeTrace]
    rows: List[SummaryRow]
    identified_tau: Dict[str, float]

    def cost_gap(self, label: str, baseline: str = 'DRL') -> float:
        return increase_pct(self.traces[label].cost, self.traces[baseline].cost)


def drive_cycle_eval(
    cycle: DriveCycle,
    methods: Sequence[MethodSpec],
    ctx: RunContext,
    surrogate: Optional[SurrogateParams] = None,
) -> CycleResult:
    """前车跟随工况速度 (a_prec 由差分得到)，初值 [0, 0, 0]，回合覆盖整个工况"""
    p = ctx.p
    model = ModelSpec.surrogate_hfm(surrogate)
    t, v = resample(cycle, p.dt)
    a_prec = preceding_acceleration(v, p.dt)
    T = len(t) - 1
    if T < 1:
        raise ParamValidationError(f"cycle '{cycle.name}' is shorter than one control step")
    methods = [m for m in methods if m.kind != 'IPO']
    scenario = f"cycle-{cycle.name}"
    tasks = [
        make_task(m, model, KinematicState(0.0, 0.0, 0.0), T, ctx, scenario=scenario, a_prec=a_prec, v_ego0=float(v[0]))
        for m in methods
    ]
    traces = dict(zip([m.label for m in methods], run_episodes(tasks, ctx, desc=scenario)))
    delay_steps = int(round(model.tau_d / p.dt))
    identified = {label: identify_time_constant(tr.u, tr.a, p.dt, delay_steps) for label, tr in traces.items()}
    for label, tau in identified.items():
        logging.info(f"{scenario} {label}: cost={traces[label].cost:.3f}, identified tau={tau:.3f} s")
    return CycleResult(cycle=cycle.name, traces=traces, rows=_baseline_rows(traces, scenario), identified_tau=identified)
