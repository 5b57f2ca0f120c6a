from abc import ABC, abstractmethod
from typing import Optional

from .models import AccParams, SolveReport, WorldState


class IController(ABC):
    name: str = ''

    @abstractmethod
    def reset(self, world: WorldState) -> None:
        pass

    @abstractmethod
    def act(self, world: WorldState) -> float:
        pass

    @property
    def last_report(self) -> Optional[SolveReport]:
        return None

    @property
    def solver_warnings(self) -> int:
        """本回合内未收敛的求解次数"""
        return 0


class IControllerFactory(ABC):
    @abstractmethod
    def create_controller(self, p: AccParams) -> IController:
        pass
