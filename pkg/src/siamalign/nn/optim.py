"""SGD with momentum."""

from __future__ import annotations

import numpy as np


def sgd_step(params, grads, velocity, lr, momentum=0.9):
    """One in-place momentum step: ``v <- momentum * v + g``; ``p <- p - lr * v``.

    ``params``, ``grads`` and ``velocity`` are dicts keyed alike; missing
    velocity entries start at zero. Returns ``params``.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= momentum
        v += g
        p -= (lr * v).astype(p.dtype, copy=False)
    return params


class SGD:
    """Stateful wrapper around :func:`sgd_step` bound to a model."""

    def __init__(self, model, lr=1e-3, momentum=0.9):
        self.model = model
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self):
        sgd_step(self.model.params(), self.model.grads(), self.velocity, self.lr, self.momentum)
