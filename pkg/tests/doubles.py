from typing import Dict, Optional

import httpx
import numpy as np

from config import settings
from core.interfaces import IController
from services.cycles import EPA_DURATIONS


class ConstantController(IController):
    """始终输出同一个指令"""

    def __init__(self, u: float, name: str = 'CONST'):
        self.u = u
        self.name = name

    def reset(self, world) -> None:
        pass

    def act(self, world) -> float:
        return self.u


def epa_schedule_text(seconds: int, peak_mph: float = 50.0) -> str:
    """EPA 格式 (表头 + '秒 mph') 的梯形速度表"""
    t = np.arange(seconds + 1)
    mph = np.interp(t, [0, seconds * 0.2, seconds * 0.8, seconds], [0.0, peak_mph, peak_mph, 0.0])
    rows = "\n".join(f"{ti}\t{v:.1f}" for ti, v in zip(t, mph))
    return f"Synthetic Driving Schedule\nTest Time, secs\tSpeed, mph\n{rows}\n"


def epa_transport(overrides: Optional[Dict[str, str]] = None) -> httpx.MockTransport:
    """按 CYCLE_URLS 返回合成的 EPA 速度表; overrides 按工况名替换响应正文"""
    pages = {url: epa_schedule_text(int(EPA_DURATIONS[name])) for name, url in settings.CYCLE_URLS.items()}
    for name, text in (overrides or {}).items():
        pages[settings.CYCLE_URLS[name]] = text

    def handler(request: httpx.Request) -> httpx.Response:
        text = pages.get(str(request.url))
        return httpx.Response(200, text=text) if text is not None else httpx.Response(404)

    return httpx.MockTransport(handler)
