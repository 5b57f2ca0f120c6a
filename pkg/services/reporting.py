"""
结果输出: 汇总表渲染 (文本 / CSV / JSON)、逐步轨迹 CSV、gnuplot 数据文件。
"""
import glob
import io
import json
import logging
import os
import re
from dataclasses import asdict, fields
from typing import Dict, List, Protocol, Sequence

import numpy as np
import pandas as pd

from core.models import EpisodeTrace, SummaryRow

TRACE_COLUMNS = ('t', 'e', 'ev', 'a', 'u', 'jerk', 'stage_cost', 'power_limited')
SUMMARY_SUFFIX = '_summary.json'
# 耗时不进汇总文件，单独写 *_timing.dat，保证同样的调用产生同样的汇总
_ROW_FIELDS = [f.name for f in fields(SummaryRow) if f.name != 'controller_seconds']


def slug(label: str) -> str:
    """MPC(H=50) -> mpc_h50"""
    return re.sub(r'[^a-z0-9.]+', '_', re.sub(r'=', '', label.lower())).strip('_')


def row_to_dict(row: SummaryRow) -> Dict:
    data = {k: v for k, v in asdict(row).items() if k in _ROW_FIELDS}
    data['increase_pct'] = row.increase_pct
    return data


def row_from_dict(data: Dict) -> SummaryRow:
    # increase_pct 总是由原始代价重算
    return SummaryRow(**{k: data.get(k) for k in _ROW_FIELDS if k in data})


def _sorted(rows: Sequence[SummaryRow]) -> List[SummaryRow]:
    return sorted(rows, key=lambda r: (r.scenario, r.method))


class SummaryRenderer(Protocol):
    def render(self, rows: List[SummaryRow]) -> str: ...


class TextRenderer:
    def render(self, rows: List[SummaryRow]) -> str:
        lines = []
        current = None
        for r in _sorted(rows):
            if r.scenario != current:
                current = r.scenario
                if lines:
                    lines.append('')
                lines.append(f"== {current} ==")
                lines.append(
                    f"{'method':<12} {'cost':>12} {'increase':>10} {'vs':>5} "
                    f"{'e_min':>8} {'e_mean':>8} {'e_max':>8} {'j_min':>8} {'j_mean':>8} {'j_max':>8}"
                )
            inc = f"{r.increase_pct:+.2f}%" if r.increase_pct is not None else '-'
            lines.append(
                f"{r.method:<12} {r.episode_cost:>12.4f} {inc:>10} {r.baseline_method or '-':>5} "
                f"{r.e_min:>8.3f} {r.e_mean:>8.3f} {r.e_max:>8.3f} {r.j_min:>8.3f} {r.j_mean:>8.3f} {r.j_max:>8.3f}"
            )
        return "\n".join(lines) + "\n"


class CsvRenderer:
    def render(self, rows: List[SummaryRow]) -> str:
        frame = pd.DataFrame([row_to_dict(r) for r in _sorted(rows)], columns=_ROW_FIELDS + ['increase_pct'])
        buf = io.StringIO()
        frame.to_csv(buf, index=False, float_format='%.10g')
        return buf.getvalue()


class JsonRenderer:
    def render(self, rows: List[SummaryRow]) -> str:
        nested: Dict[str, Dict[str, Dict]] = {}
        for r in rows:
            nested.setdefault(r.scenario, {})[r.method] = row_to_dict(r)
        return json.dumps(nested, sort_keys=True, indent=2) + "\n"


RENDERERS: Dict[str, SummaryRenderer] = {
    'text': TextRenderer(),
    'csv': CsvRenderer(),
    'json': JsonRenderer(),
}


def rows_from_json(text: str) -> List[SummaryRow]:
    nested = json.loads(text)
    return [row_from_dict(data) for scenario in nested.values() for data in scenario.values()]


def _write(path: str, text: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(text)
    return path


def write_summary(rows: Sequence[SummaryRow], out_dir: str, name: str, fmt: str = 'csv') -> List[str]:
    """JSON 总是写 (report 读取它)，fmt == 'csv' 时再写一份 CSV"""
    rows = list(rows)
    paths = [_write(os.path.join(out_dir, f"{name}{SUMMARY_SUFFIX}"), RENDERERS['json'].render(rows))]
    if fmt == 'csv':
        paths.append(_write(os.path.join(out_dir, f"{name}_summary.csv"), RENDERERS['csv'].render(rows)))
    logging.info(f"Summary for {name} written to {', '.join(paths)}")
    return paths


def load_summaries(out_dir: str) -> List[SummaryRow]:
    rows: List[SummaryRow] = []
    for path in sorted(glob.glob(os.path.join(out_dir, f"*{SUMMARY_SUFFIX}"))):
        with open(path, encoding='utf-8') as f:
            rows.extend(rows_from_json(f.read()))
    return rows


def render_report(out_dir: str, fmt: str = 'text') -> str:
    rows = load_summaries(out_dir)
    if not rows:
        return f"no summaries found in {out_dir}\n"
    return RENDERERS[fmt].render(rows)


def trace_frame(trace: EpisodeTrace) -> pd.DataFrame:
    frame = pd.DataFrame({name: getattr(trace, name) for name in TRACE_COLUMNS})
    frame['power_limited'] = frame['power_limited'].astype(int)
    return frame


def write_trace_csv(trace: EpisodeTrace, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    trace_frame(trace).to_csv(path, index=False, float_format='%.10g')
    return path


def write_dat(path: str, columns: Dict[str, Sequence[float]], comment: str = '') -> str:
    """gnuplot 用的空白分隔数据，首行以 # 开头给出列名"""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    header = (f"# {comment}\n" if comment else '') + "# " + ' '.join(names) + "\n"
    body = "\n".join(' '.join(f"{x:.10g}" for x in row) for row in data)
    return _write(path, header + body + "\n")
