"""
命令行适配器: 把子命令映射到训练和各项实验，并把异常映射成退出码。

退出码: 0 成功, 2 配置/输入错误, 3 求解器或训练失败。
"""
import argparse
import asyncio
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Sequence

import httpx
import numpy as np
import pandas as pd

from config import settings
from config.experiment import ConfigError, ExperimentConfig, load_experiment_config
from core.models import IcGrid, KinematicState, MethodSpec, ModelSpec, ParamValidationError, SummaryRow
from services import harness, reporting
from services.cycles import EPA_DURATIONS, CycleFormatError, fetch_cycles, get_cycle
from services.drl.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from services.drl.trainer import TrainingDivergedError, train_seeds
from services.harness import RunContext

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3

DEFAULT_CYCLES = tuple(EPA_DURATIONS)


def _ic(raw: str) -> KinematicState:
    try:
        values = [float(x) for x in raw.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--ic expects three numbers e,e_v,a_i, got '{raw}'")
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"--ic expects three numbers e,e_v,a_i, got '{raw}'")
    return KinematicState(*values)


def _int_list(raw: str) -> List[int]:
    try:
        return [int(x) for x in raw.split(',') if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{raw}'")


def _float_list(raw: str) -> List[float]:
    try:
        return [float(x) for x in raw.split(',') if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{raw}'")


def _methods(raw: str) -> List[MethodSpec]:
    try:
        return [MethodSpec.parse(x) for x in raw.split(',') if x.strip()]
    except ParamValidationError as e:
        raise argparse.ArgumentTypeError(str(e))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=0, help='base random seed')
    common.add_argument('--config', default=None, help='key=value experiment config file')
    common.add_argument('--out', default=settings.DEFAULT_OUT_DIR, help='output directory')
    common.add_argument('--jobs', type=int, default=os.cpu_count() or 1, help='parallel episodes')
    common.add_argument('--format', choices=['csv', 'json'], default=None, help='summary format')
    common.add_argument('--checkpoint', default=None, help='DDPG weight checkpoint (.npz)')
    common.add_argument('--no-progress', action='store_true', help='hide progress bars')

    parser = argparse.ArgumentParser(prog='run.py', description='DRL vs MPC adaptive cruise control benchmark')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', parents=[common], help='train DDPG seeds and keep the best policy')
    p.add_argument('--steps', type=int, default=None, help='environment steps per seed')
    p.add_argument('--seeds', type=_int_list, default=None, help='explicit seed list')

    p = sub.add_parser('evaluate', parents=[common], help='run methods on one initial condition')
    p.add_argument('--ic', type=_ic, default=None)
    p.add_argument('--model', choices=['com', 'delayed', 'shfm'], default='com')
    p.add_argument('--delay', type=float, default=0.2, help='tau_d for --model delayed')
    p.add_argument('--steps', type=int, default=None, help='episode length T')
    p.add_argument('--methods', type=_methods, default=None)

    p = sub.add_parser('horizon-sweep', parents=[common], help='single-IC horizon study against IPO')
    p.add_argument('--ic', type=_ic, default=None)
    p.add_argument('--horizons', type=_int_list, default=None)

    p = sub.add_parser('grid', parents=[common], help='75-IC grid evaluation')
    p.add_argument('--range', choices=['in', 'cutin'], default='in')
    p.add_argument('--methods', type=_methods, default=None)

    p = sub.add_parser('delay-sweep', parents=[common], help='control delay sweep on the DelayedCOM')
    p.add_argument('--delays', type=_float_list, default=None)
    p.add_argument('--range', choices=['in', 'cutin'], default='in')
    p.add_argument('--methods', type=_methods, default=None)

    p = sub.add_parser('shfm', parents=[common], help='constant-speed following on the surrogate HFM')
    p.add_argument('--speeds', type=_float_list, default=None)
    p.add_argument('--ic', type=_ic, default=None)

    p = sub.add_parser('cycle', parents=[common], help='drive-cycle tests on the surrogate HFM')
    p.add_argument('--cycles', default=','.join(DEFAULT_CYCLES), help='cycle names or CSV paths')
    p.add_argument('--horizon', type=int, default=None)
    p.add_argument('--offline', action='store_true', help='do not download missing cycles')

    p = sub.add_parser('fetch-cycles', parents=[common], help='download the EPA schedules into the cycle resources')
    p.add_argument('--cycles', default=','.join(DEFAULT_CYCLES), help='EPA cycle names')
    p.add_argument('--cycles-dir', default=settings.CYCLES_DIR)

    sub.add_parser('report', parents=[common], help='print all summaries in --out')
    return parser


# --- 公共步骤 ---

def _checkpoint_path(args, cfg: ExperimentConfig) -> str:
    return args.checkpoint or cfg.checkpoint_path


def _resolve_methods(args, cfg: ExperimentConfig, include_ipo: bool) -> List[MethodSpec]:
    explicit = getattr(args, 'methods', None)
    methods = list(explicit or cfg.default_methods(include_ipo))
    if not include_ipo:
        methods = [m for m in methods if m.kind != 'IPO']
    if any(m.kind == 'DRL' for m in methods) and not os.path.isfile(_checkpoint_path(args, cfg)):
        if explicit or cfg.methods:
            raise CheckpointError(f"checkpoint '{_checkpoint_path(args, cfg)}' does not exist (run 'train' first)")
        logging.warning(f"No checkpoint at {_checkpoint_path(args, cfg)}, running without DRL")
        methods = [m for m in methods if m.kind != 'DRL']
    return methods


def _context(args, cfg: ExperimentConfig, methods: Sequence[MethodSpec]) -> RunContext:
    nets = None
    if any(m.kind == 'DRL' for m in methods):
        nets = load_checkpoint(_checkpoint_path(args, cfg), cfg.acc, cfg.train)
    return RunContext(
        p=cfg.acc, nets=nets, options=cfg.solver, warm_start=cfg.warm_start,
        jobs=max(1, args.jobs), progress=not args.no_progress,
    )


def _grid(name: str) -> IcGrid:
    return IcGrid.in_range() if name == 'in' else IcGrid.cut_in()


def _series(out: str, name: str, trace) -> None:
    reporting.write_dat(
        os.path.join(out, f"{name}_series.dat"),
        {'t': trace.t, 'e': trace.e, 'ev': trace.ev, 'u': trace.u, 'a': trace.a},
        comment=f"{trace.scenario} {trace.method}",
    )
    reporting.write_trace_csv(trace, os.path.join(out, f"{name}_trace.csv"))


def _failure_code(traces) -> int:
    """IPO 基准没收敛时返回 3 (输出照常写出)"""
    failed = [t for t in traces if t.method == 'IPO' and t.solver_warnings]
    if failed:
        logging.error(f"IPO benchmark did not converge for {len(failed)} episode(s)")
        return EXIT_FAILURE
    return EXIT_OK


# --- 子命令 ---

def cmd_train(args, cfg: ExperimentConfig) -> int:
    seeds = tuple(args.seeds) if args.seeds else tuple(s + args.seed for s in cfg.train.seeds)
    steps = cfg.train.total_steps if args.steps is None else args.steps
    train_cfg = replace(cfg.train, seeds=seeds, total_steps=steps)
    logging.info(f"Training seeds {list(seeds)} for {steps} steps each")

    best, results = train_seeds(train_cfg, cfg.acc, jobs=max(1, args.jobs), progress=not args.no_progress)
    save_checkpoint(_checkpoint_path(args, cfg), best.nets)

    summary = {'selected_seed': best.seed, 'total_steps': steps, 'seeds': {}}
    for r in results:
        reporting.write_dat(
            os.path.join(args.out, f"training_curve_seed{r.seed}.dat"),
            {'episode': np.arange(len(r.curve)), 'reward': r.curve},
            comment=f"undiscounted episode reward, seed {r.seed}",
        )
        summary['seeds'][str(r.seed)] = {
            'episodes': int(len(r.curve)),
            'eval_cost': r.eval_cost,
            'failed': r.failed,
            'final_reward': float(r.curve[-1]) if len(r.curve) else None,
        }
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, 'training_summary.json'), 'w', encoding='utf-8') as f:
        json.dump(summary, f, sort_keys=True, indent=2)
    print(f"selected seed {best.seed}, evaluation cost {best.eval_cost:.4f}, checkpoint {_checkpoint_path(args, cfg)}")
    return EXIT_OK


def cmd_evaluate(args, cfg: ExperimentConfig) -> int:
    if args.model == 'com':
        model = ModelSpec.com()
    elif args.model == 'delayed':
        model = ModelSpec.delayed(args.delay)
    else:
        model = ModelSpec.surrogate_hfm(cfg.surrogate)
    methods = _resolve_methods(args, cfg, include_ipo=model.variant == 'com')
    ctx = _context(args, cfg, methods)
    ic = args.ic or cfg.ic
    T = args.steps or cfg.episode_steps
    scenario = f"evaluate-{model.variant}"

    tasks = [harness.make_task(m, model, ic, T, ctx, scenario=scenario) for m in methods]
    traces = dict(zip([m.label for m in methods], harness.run_episodes(tasks, ctx, desc=scenario)))
    base = 'IPO' if 'IPO' in traces else ('DRL' if 'DRL' in traces else None)
    rows = [
        harness.summarize([t], scenario, label, traces[base].cost if base and label != base else None,
                          base if base and label != base else None)
        for label, t in traces.items()
    ]
    for label, trace in traces.items():
        _series(args.out, f"{scenario}_{reporting.slug(label)}", trace)
    reporting.write_summary(rows, args.out, 'evaluate', args.format or 'csv')
    print(reporting.TextRenderer().render(rows), end='')
    return _failure_code(traces.values())


def cmd_horizon_sweep(args, cfg: ExperimentConfig) -> int:
    methods = _resolve_methods(args, cfg, include_ipo=True)
    ctx = _context(args, cfg, methods)
    horizons = args.horizons or list(cfg.sweep_horizons)
    result = harness.horizon_sweep(args.ic or cfg.ic, horizons, cfg.episode_steps, ctx)

    reporting.write_summary(result.rows, args.out, 'horizon', args.format or 'csv')
    labels = [MethodSpec('MPC', h).label for h in horizons]
    reporting.write_dat(
        os.path.join(args.out, 'horizon_cost.dat'),
        {
            'h_s': [h * cfg.acc.dt for h in horizons],
            'cost': [result.cost(l) for l in labels],
            'increase_pct': [harness.increase_pct(result.cost(l), result.ipo_cost) for l in labels],
        },
        comment='MPC episode cost versus prediction horizon',
    )
    reporting.write_dat(
        os.path.join(args.out, 'horizon_time.dat'),
        {'h_s': [h * cfg.acc.dt for h in horizons], 'controller_s': [result.traces[l].controller_seconds for l in labels]},
        comment='controller wall-clock per episode',
    )
    for label, trace in result.traces.items():
        _series(args.out, f"horizon_{reporting.slug(label)}", trace)
    for label in labels:
        ratio = result.time_ratio(label)
        if ratio is not None:
            logging.info(f"{label} spends {ratio:.0f}x the DRL controller time per episode")
    print(reporting.TextRenderer().render(result.rows), end='')
    return _failure_code(result.traces.values())


def _write_episode_table(path: str, result: harness.GridResult) -> None:
    ics = result.grid.initial_conditions()
    records = [
        {'method': label, 'e0': ic.e, 'ev0': ic.e_v, 'ai0': ic.a_i, 'cost': trace.cost}
        for label, traces in result.traces.items()
        for ic, trace in zip(ics, traces)
    ]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pd.DataFrame(records).to_csv(path, index=False, float_format='%.10g')


def cmd_grid(args, cfg: ExperimentConfig) -> int:
    methods = _resolve_methods(args, cfg, include_ipo=True)
    ctx = _context(args, cfg, methods)
    grid = _grid(args.range)
    result = harness.grid_eval(grid, methods, ModelSpec.com(), cfg.episode_steps, ctx)

    name = f"grid_{grid.name}"
    reporting.write_summary(result.rows, args.out, name, args.format or 'csv')
    _write_episode_table(os.path.join(args.out, f"{name}_episodes.csv"), result)
    if 'IPO' in result.traces:
        for label in result.traces:
            if label == 'IPO':
                continue
            per_e0 = result.per_e0_increase(label)
            reporting.write_dat(
                os.path.join(args.out, f"{name}_e0_{reporting.slug(label)}.dat"),
                {'e0': list(per_e0), 'increase_pct': list(per_e0.values())},
                comment=f"{label} average cost increase versus IPO by initial gap error",
            )
    print(reporting.TextRenderer().render(result.rows), end='')
    return _failure_code([t for traces in result.traces.values() for t in traces])


def cmd_delay_sweep(args, cfg: ExperimentConfig) -> int:
    methods = _resolve_methods(args, cfg, include_ipo=False)
    ctx = _context(args, cfg, methods)
    delays = args.delays or list(cfg.delay_values)
    result = harness.delay_sweep(delays, _grid(args.range), methods, cfg.episode_steps, ctx)

    reporting.write_summary(result.rows, args.out, 'delay', args.format or 'csv')
    averages = result.averages()
    for m in methods:
        reporting.write_dat(
            os.path.join(args.out, f"delay_{reporting.slug(m.label)}.dat"),
            {'tau_d': list(averages), 'avg_cost': [averages[tau][m.label] for tau in averages]},
            comment=f"{m.label} average episode cost versus control delay",
        )
    print(reporting.TextRenderer().render(result.rows), end='')
    return EXIT_OK


def cmd_shfm(args, cfg: ExperimentConfig) -> int:
    methods = _resolve_methods(args, cfg, include_ipo=False)
    ctx = _context(args, cfg, methods)
    speeds = args.speeds or list(cfg.shfm_speeds)
    result = harness.shfm_constant_speed(speeds, args.ic or cfg.ic, cfg.episode_steps, ctx, methods, cfg.surrogate)

    reporting.write_summary(result.rows, args.out, 'shfm', args.format or 'csv')
    costs, flags = result.costs(), result.power_limited()
    for m in methods:
        reporting.write_dat(
            os.path.join(args.out, f"shfm_speed_{reporting.slug(m.label)}.dat"),
            {
                'v_i0': list(costs),
                'cost': [costs[v][m.label] for v in costs],
                'power_limited': [int(flags[v][m.label]) for v in costs],
            },
            comment=f"{m.label} episode cost versus initial speed on the surrogate HFM",
        )
    top = max(result.traces)
    for label, trace in result.traces[top].items():
        _series(args.out, f"shfm_v{top:g}_{reporting.slug(label)}", trace)
    print(reporting.TextRenderer().render(result.rows), end='')
    return EXIT_OK


def cmd_cycle(args, cfg: ExperimentConfig) -> int:
    horizon = args.horizon or cfg.mpc_horizon
    methods = _resolve_methods(args, cfg, include_ipo=False)
    methods = [MethodSpec('MPC', horizon) if m.kind == 'MPC' else m for m in methods]
    ctx = _context(args, cfg, methods)

    rows: List[SummaryRow] = []
    identified: Dict[str, Dict[str, float]] = {}
    for name in [c.strip() for c in args.cycles.split(',') if c.strip()]:
        cycle = get_cycle(name, allow_download=not args.offline)
        result = harness.drive_cycle_eval(cycle, methods, ctx, cfg.surrogate)
        rows += result.rows
        identified[cycle.name] = result.identified_tau
        for label, trace in result.traces.items():
            _series(args.out, f"cycle_{cycle.name}_{reporting.slug(label)}", trace)

    reporting.write_summary(rows, args.out, 'cycle', args.format or 'csv')
    with open(os.path.join(args.out, 'cycle_identified_tau.json'), 'w', encoding='utf-8') as f:
        json.dump(identified, f, sort_keys=True, indent=2)
    print(reporting.TextRenderer().render(rows), end='')
    return EXIT_OK


def cmd_fetch_cycles(args, cfg: ExperimentConfig) -> int:
    names = [c.strip() for c in args.cycles.split(',') if c.strip()]
    cycles = asyncio.run(fetch_cycles(names, args.cycles_dir))
    for cycle in cycles:
        print(f"{cycle.name}: {len(cycle.t)} samples, {cycle.duration:g} s, peak {cycle.v.max():.2f} m/s")
    return EXIT_OK


def cmd_report(args, cfg: ExperimentConfig) -> int:
    print(reporting.render_report(args.out, args.format or 'text'), end='')
    return EXIT_OK


HANDLERS: Dict[str, Callable[[argparse.Namespace, ExperimentConfig], int]] = {
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'horizon-sweep': cmd_horizon_sweep,
    'grid': cmd_grid,
    'delay-sweep': cmd_delay_sweep,
    'shfm': cmd_shfm,
    'cycle': cmd_cycle,
    'fetch-cycles': cmd_fetch_cycles,
    'report': cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """命令行主函数; argparse 遇到未知参数时自行以 2 退出"""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_experiment_config(args.config)
        return HANDLERS[args.command](args, cfg)
    except (ConfigError, CycleFormatError, CheckpointError, ParamValidationError, httpx.HTTPError) as e:
        logging.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, FloatingPointError) as e:
        logging.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
