"""Adam with the polynomial ("poly") learning-rate decay."""

from dataclasses import dataclass, field

import numpy as np

from .layers import ShapeError


def poly_lr(iteration, base_lr, power, max_iter):
    """``base_lr * (1 - iteration / max_iter) ** power``, zero once past ``max_iter``."""
    if max_iter <= 0:
        raise ValueError("max_iter must be positive")
    if iteration >= max_iter:
        return 0.0
    return base_lr * (1.0 - max(iteration, 0) / max_iter) ** power


@dataclass
class AdamState:
    base_lr: float = 0.1
    power: float = 0.99
    max_iter: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @property
    def momentum(self):
        return self.beta1

    def init(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        return self

    def current_lr(self):
        return poly_lr(self.t, self.base_lr, self.power, self.max_iter)


def adam_step(params, grads, state):
    """One Adam update of ``params`` (arrays, modified in place).

    The step size comes from :func:`poly_lr` at the state's current step
    counter, which is then incremented. Returns ``params``.
    """
    if not state.m:
        state.init(params)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam: params, grads and moments differ in length")
    lr = state.current_lr()
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"adam: parameter {p.shape} vs gradient {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params


class Adam:
    """Adam over a fixed list of :class:`~egunet.nn.layers.Param` objects."""

    def __init__(self, params, base_lr=0.1, power=0.99, max_iter=1, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(base_lr, power, max_iter, betas[0], betas[1], eps)
        self.state.init([p.value for p in self.params])

    @property
    def lr(self):
        return self.state.current_lr()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step([p.value for p in self.params], [p.grad for p in self.params], self.state)
