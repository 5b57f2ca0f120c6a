"""
驾驶工况: CSV 读写 (t_s,v_mps)、按控制周期重采样、前车加速度差分，以及 EPA 公开工况下载。
"""
import asyncio
import logging
import os
from typing import List, Optional, Sequence, Tuple

import httpx
import numpy as np
import pandas as pd

from config import settings
from core.models import DriveCycle

MPH_TO_MPS = 0.44704
CSV_COLUMNS = ('t_s', 'v_mps')
# EPA 公布的标称时长 (s); 下载的文件末尾可能多几秒静止
EPA_DURATIONS = {'hwfet': 765.0, 'ftp75': 1874.0, 'us06': 596.0}
DURATION_SLACK = 5.0


class CycleFormatError(ValueError):
    """工况文件格式错误，消息中给出文件和出错行号"""
    pass


def load_cycle_csv(path: str, name: Optional[str] = None) -> DriveCycle:
    name = name or os.path.splitext(os.path.basename(path))[0]
    try:
        df = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except FileNotFoundError as e:
        raise CycleFormatError(f"{path}: file not found") from e
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise CycleFormatError(f"{path}: {e}") from e

    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise CycleFormatError(f"{path}: line 1: missing column(s) {', '.join(missing)}")
    if len(df) < 2:
        raise CycleFormatError(f"{path}: needs at least two samples")

    values = {}
    for column in CSV_COLUMNS:
        parsed = pd.to_numeric(df[column], errors='coerce')
        bad = parsed.isna().to_numpy().nonzero()[0]
        if bad.size:
            # 表头占第 1 行
            line = int(bad[0]) + 2
            raise CycleFormatError(f"{path}: line {line}: field '{column}' is not a number ({df[column].iloc[bad[0]]!r})")
        values[column] = parsed.to_numpy(dtype=float)

    t, v = values['t_s'], values['v_mps']
    step_back = np.nonzero(np.diff(t) <= 0)[0]
    if step_back.size:
        raise CycleFormatError(f"{path}: line {int(step_back[0]) + 3}: field 't_s' is not strictly increasing")
    negative = np.nonzero(v < 0)[0]
    if negative.size:
        raise CycleFormatError(f"{path}: line {int(negative[0]) + 2}: field 'v_mps' is negative")
    return DriveCycle(name=name, t=t, v=v)


def write_cycle_csv(cycle: DriveCycle, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pd.DataFrame({'t_s': cycle.t, 'v_mps': cycle.v}).to_csv(path, index=False)


def resample(cycle: DriveCycle, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """线性插值到 dt 网格，起点和终点保持不变"""
    n = int(np.floor(cycle.duration / dt + 1e-9)) + 1
    t = cycle.t[0] + dt * np.arange(n)
    t[-1] = min(t[-1], cycle.t[-1])
    return t, np.interp(t, cycle.t, cycle.v)


def preceding_acceleration(v: np.ndarray, dt: float) -> np.ndarray:
    """内部点中心差分，两端单侧差分"""
    return np.gradient(np.asarray(v, dtype=float), dt)


def parse_epa_schedule(text: str, name: str) -> DriveCycle:
    """EPA 工况文本: 若干表头行后是 '秒 mph' 两列"""
    t, v = [], []
    for raw in text.splitlines():
        tokens = raw.replace(',', ' ').split()
        if len(tokens) < 2:
            continue
        try:
            secs, mph = float(tokens[0]), float(tokens[1])
        except ValueError:
            continue
        t.append(secs)
        v.append(mph * MPH_TO_MPS)
    if len(t) < 2:
        raise CycleFormatError(f"{name}: no speed samples found in downloaded schedule")
    return DriveCycle(name=name, t=np.array(t), v=np.array(v))


def cycle_path(name: str, cycles_dir: Optional[str] = None) -> str:
    return os.path.join(cycles_dir or settings.CYCLES_DIR, f"{name}.csv")


async def download_cycle(
    name: str,
    timeout: float = 30.0,
    transport: Optional[httpx.AsyncBaseTransport] = None,
) -> DriveCycle:
    url = settings.CYCLE_URLS.get(name)
    if url is None:
        raise CycleFormatError(f"unknown drive cycle '{name}', known: {', '.join(sorted(settings.CYCLE_URLS))}")
    logging.info(f"Downloading drive cycle '{name}' from {url}")
    async with httpx.AsyncClient(follow_redirects=True, transport=transport) as client:
        resp = await client.get(url, timeout=timeout)
        resp.raise_for_status()
    return parse_epa_schedule(resp.text, name)


def save_cycle(cycle: DriveCycle, cycles_dir: Optional[str] = None) -> str:
    path = cycle_path(cycle.name, cycles_dir)
    write_cycle_csv(cycle, path)
    logging.info(f"Drive cycle '{cycle.name}' saved to {path} ({cycle.duration:.0f} s)")
    return path


async def fetch_cycle(
    name: str,
    cycles_dir: Optional[str] = None,
    timeout: float = 30.0,
    transport: Optional[httpx.AsyncBaseTransport] = None,
) -> DriveCycle:
    cycle = await download_cycle(name, timeout, transport)
    save_cycle(cycle, cycles_dir)
    return cycle


def check_epa_cycle(cycle: DriveCycle) -> None:
    """核对 EPA 工况: 1 Hz 采样、时长与标称值一致、从静止开始"""
    nominal = EPA_DURATIONS.get(cycle.name)
    if nominal is None:
        raise CycleFormatError(f"'{cycle.name}' is not an EPA schedule ({', '.join(sorted(EPA_DURATIONS))})")
    if not np.allclose(np.diff(cycle.t), 1.0):
        raise CycleFormatError(f"{cycle.name}: expected 1 Hz samples")
    if abs(cycle.duration - nominal) > DURATION_SLACK:
        raise CycleFormatError(f"{cycle.name}: duration {cycle.duration:g} s, EPA schedule lasts {nominal:g} s")
    if cycle.v[0] != 0.0:
        raise CycleFormatError(f"{cycle.name}: schedule does not start at rest")


async def fetch_cycles(
    names: Sequence[str] = tuple(EPA_DURATIONS),
    cycles_dir: Optional[str] = None,
    transport: Optional[httpx.AsyncBaseTransport] = None,
) -> List[DriveCycle]:
    """并发下载 EPA 工况，全部校验通过后才覆盖资源目录中的文件"""
    cycles = await asyncio.gather(*(download_cycle(name, transport=transport) for name in names))
    for cycle in cycles:
        check_epa_cycle(cycle)
    for cycle in cycles:
        save_cycle(cycle, cycles_dir)
    return list(cycles)


def get_cycle(name_or_path: str, cycles_dir: Optional[str] = None, allow_download: bool = True) -> DriveCycle:
    """优先读本地 CSV (路径或资源目录下的 <name>.csv)，否则下载"""
    if os.path.isfile(name_or_path):
        return load_cycle_csv(name_or_path)
    path = cycle_path(name_or_path, cycles_dir)
    if os.path.isfile(path):
        return load_cycle_csv(path, name_or_path)
    if not allow_download:
        raise CycleFormatError(f"{path}: file not found")
    logging.warning(f"Drive cycle resource {path} missing, fetching it")
    return asyncio.run(fetch_cycle(name_or_path, cycles_dir))
