from typing import Dict, Mapping

import numpy as np

from models.genotype import Optimizer as OptimizerKind
from nn.autodiff import Tensor


class SGD:
    def __init__(self, parameters: Mapping[str, Tensor], lr: float):
        self.parameters = dict(parameters)
        self.lr = lr

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, p in self.parameters.items():
            if p.requires_grad:
                p.assign(p.data - self.lr * grads[name])


class Adam:
    """Adam with bias correction; state is per parameter name"""

    def __init__(self, parameters: Mapping[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.parameters = dict(parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {name: np.zeros(p.shape) for name, p in self.parameters.items()}
        self.v: Dict[str, np.ndarray] = {name: np.zeros(p.shape) for name, p in self.parameters.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.parameters.items():
            if not p.requires_grad:
                continue
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.assign(p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


def make_optimizer(kind: OptimizerKind, parameters: Mapping[str, Tensor], lr: float):
    if kind == OptimizerKind.ADAM:
        return Adam(parameters, lr)
    return SGD(parameters, lr)
