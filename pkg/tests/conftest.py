import numpy as np
import pytest

from core.models import AccParams, TrainConfig
from services.drl.agent import ActorCritic


@pytest.fixture
def p() -> AccParams:
    return AccParams()


@pytest.fixture
def small_cfg() -> TrainConfig:
    return TrainConfig(hidden=8, batch=8, buffer_size=1000, total_steps=0, episode_len=20, warmup_batches=2, seeds=(0,))


@pytest.fixture
def tiny_nets(p, small_cfg) -> ActorCritic:
    return ActorCritic.initialize(p, small_cfg, np.random.default_rng(7))
