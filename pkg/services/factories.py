"""
控制器工厂: 把 MethodSpec 和运行时依赖 (训练好的网络、求解器参数) 组装成 IController。
"""
from typing import Optional

from config import settings
from core.interfaces import IController, IControllerFactory
from core.models import AccParams, BarrierOptions, MethodSpec
from services.drl.agent import ActorCritic, DrlController
from services.mpc import IpoController, MpcController


class DrlControllerFactory(IControllerFactory):
    """训练好的 actor 只读共享，每个回合创建一个新的控制器"""

    def __init__(self, nets: ActorCritic):
        self.nets = nets

    def create_controller(self, p: AccParams) -> IController:
        return DrlController(self.nets)


class MpcControllerFactory(IControllerFactory):
    def __init__(self, horizon: int, options: Optional[BarrierOptions] = None, warm_start: bool = settings.MPC_WARM_START):
        self.horizon = horizon
        self.options = options
        self.warm_start = warm_start

    def create_controller(self, p: AccParams) -> IController:
        return MpcController(self.horizon, p, options=self.options, warm_start=self.warm_start)


class IpoControllerFactory(IControllerFactory):
    def __init__(self, T: int, options: Optional[BarrierOptions] = None):
        self.T = T
        self.options = options

    def create_controller(self, p: AccParams) -> IController:
        return IpoController(self.T, p, self.options)


def create_factory(
    method: MethodSpec,
    T: int,
    nets: Optional[ActorCritic] = None,
    options: Optional[BarrierOptions] = None,
    warm_start: bool = settings.MPC_WARM_START,
) -> IControllerFactory:
    if method.kind == 'DRL':
        if nets is None:
            raise ValueError("DRL method needs trained networks (load a checkpoint first)")
        return DrlControllerFactory(nets)
    if method.kind == 'MPC':
        return MpcControllerFactory(method.horizon, options, warm_start)
    return IpoControllerFactory(T, options)
