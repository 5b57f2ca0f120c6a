from .agent import ActorCritic, DrlController, actor_update, critic_update, policy_act, soft_update
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .replay import ReplayBuffer, TransitionBatch
from .trainer import TrainResult, TrainingDivergedError, train, train_seeds

__all__ = [
    'ActorCritic', 'DrlController', 'actor_update', 'critic_update', 'policy_act', 'soft_update',
    'CheckpointError', 'load_checkpoint', 'save_checkpoint',
    'ReplayBuffer', 'TransitionBatch',
    'TrainResult', 'TrainingDivergedError', 'train', 'train_seeds',
]
