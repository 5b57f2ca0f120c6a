"""
权重存档: numpy .npz，带格式版本号。只保存网络权重和输入缩放常数，不保存优化器状态。
"""
import logging
import os
from typing import Dict, Optional

import numpy as np

from core.models import AccParams, TrainConfig
from services.drl.agent import ActorCritic
from services.drl.mlp import Mlp

FORMAT_VERSION = 1
_NETWORKS = ('actor', 'critic', 'actor_target', 'critic_target')


class CheckpointError(ValueError):
    """存档缺失、版本不符或形状不一致"""
    pass


def _pack(prefix: str, net: Mlp, out: Dict[str, np.ndarray]) -> None:
    out[f"{prefix}.n_layers"] = np.array(len(net.weights))
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.W{i}"] = w
        out[f"{prefix}.b{i}"] = b


def _unpack(prefix: str, data, output_activation: str) -> Mlp:
    n = int(data[f"{prefix}.n_layers"])
    weights = [data[f"{prefix}.W{i}"] for i in range(n)]
    biases = [data[f"{prefix}.b{i}"] for i in range(n)]
    for i in range(n):
        if biases[i].shape != (weights[i].shape[1],):
            raise CheckpointError(f"{prefix} layer {i}: bias shape {biases[i].shape} does not match weights")
        if i > 0 and weights[i].shape[0] != weights[i - 1].shape[1]:
            raise CheckpointError(f"{prefix} layer {i}: input size does not match previous layer")
    return Mlp(weights, biases, output_activation)


def save_checkpoint(path: str, nets: ActorCritic) -> None:
    arrays: Dict[str, np.ndarray] = {
        'format_version': np.array(FORMAT_VERSION),
        'state_offset': nets.state_offset,
        'state_scale': nets.state_scale,
        'u_bounds': np.array([nets.u_mid, nets.u_half]),
    }
    for name in _NETWORKS:
        _pack(name, getattr(nets, name), arrays)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as f:
        np.savez(f, **arrays)
    logging.info(f"Checkpoint written to {path}")


def load_checkpoint(path: str, p: Optional[AccParams] = None, cfg: Optional[TrainConfig] = None) -> ActorCritic:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint '{path}' does not exist")
    try:
        data = np.load(path)
    except (OSError, ValueError) as e:
        raise CheckpointError(f"checkpoint '{path}' is not a readable archive: {e}") from e
    with data:
        if 'format_version' not in data.files:
            raise CheckpointError(f"checkpoint '{path}' has no format_version")
        version = int(data['format_version'])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"checkpoint '{path}' has format_version {version}, expected {FORMAT_VERSION}")
        try:
            nets = {
                name: _unpack(name, data, 'tanh' if name.startswith('actor') else 'identity')
                for name in _NETWORKS
            }
            u_mid, u_half = (float(x) for x in data['u_bounds'])
            state_offset = np.array(data['state_offset'])
            state_scale = np.array(data['state_scale'])
        except KeyError as e:
            raise CheckpointError(f"checkpoint '{path}' is missing {e}") from e

    if nets['actor'].sizes[0] != 3 or nets['critic'].sizes[0] != 4:
        raise CheckpointError(f"checkpoint '{path}' has unexpected input sizes")
    p = p or AccParams()
    if not (np.isclose(u_mid, p.u_mid) and np.isclose(u_half, p.u_half)):
        raise CheckpointError(f"checkpoint '{path}' was trained for a different command range")

    restored = ActorCritic.from_networks(
        nets['actor'], nets['critic'], p, cfg or TrainConfig(),
        actor_target=nets['actor_target'], critic_target=nets['critic_target'],
    )
    restored.state_offset = state_offset
    restored.state_scale = state_scale
    return restored
