"""
纯 numpy 多层感知机: ReLU 隐藏层，输出层 tanh 或恒等，手写反向传播。
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

FINAL_LAYER_INIT = 3e-3


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, 0.0)


@dataclass
class ForwardCache:
    """反向传播需要的逐层输入和预激活"""
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    output: np.ndarray


class Mlp:
    """
    x (N, n_in) -> y (N, n_out)，权重 W_l 形状 (n_l, n_{l+1})。
    output_activation: 'tanh' (actor) 或 'identity' (critic)。
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], output_activation: str = 'identity'):
        if output_activation not in ('tanh', 'identity'):
            raise ValueError(f"unknown output activation '{output_activation}'")
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must be non-empty and of equal length")
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        self.output_activation = output_activation

    @classmethod
    def initialize(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        output_activation: str = 'identity',
        final_scale: float = FINAL_LAYER_INIT,
    ) -> "Mlp":
        """隐藏层按 fan-in 均匀初始化，最后一层取 [-final_scale, final_scale]"""
        weights, biases = [], []
        n_layers = len(sizes) - 1
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = final_scale if i == n_layers - 1 else 1.0 / np.sqrt(n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            biases.append(rng.uniform(-bound, bound, size=n_out))
        return cls(weights, biases, output_activation)

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    def parameters(self) -> List[np.ndarray]:
        """按 W0, b0, W1, b1, ... 排列，返回的是引用"""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.output_activation)

    def forward(self, x: np.ndarray) -> ForwardCache:
        h = np.atleast_2d(np.asarray(x, dtype=float))
        inputs, pre = [], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            pre.append(z)
            if i < last:
                h = relu(z)
            else:
                h = np.tanh(z) if self.output_activation == 'tanh' else z
        return ForwardCache(inputs=inputs, pre_activations=pre, output=h)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x).output

    def backward(self, cache: ForwardCache, grad_output: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """
        给定 dL/dy，返回与 parameters() 同序的梯度以及 dL/dx。
        """
        delta = np.asarray(grad_output, dtype=float).reshape(cache.output.shape)
        if self.output_activation == 'tanh':
            delta = delta * (1.0 - cache.output ** 2)
        grads: List[Optional[np.ndarray]] = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = cache.inputs[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = delta * relu_grad(cache.pre_activations[i - 1])
        return grads, delta


class Adam:
    """Adam 优化器，原地更新参数"""

    def __init__(self, params: Sequence[np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
