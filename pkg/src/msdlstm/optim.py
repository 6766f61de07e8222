"""Adamax: the infinity-norm variant of Adam.

Per parameter entry, with gradient g and step counter t:

    m <- beta1 * m + (1 - beta1) * g
    u <- max(beta2 * u, |g|)
    theta <- theta - lr / (1 - beta1^t) * m / (u + eps)

u is nonnegative and nondecreasing under constant-magnitude gradients, so a
single step never moves an entry by more than lr / (1 - beta1^t).
"""

import numpy as np

from .errors import NumericError


class Adamax:
    def __init__(self, named_params, lr=2e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for _, p in self.named_params]
        self._u = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self):
        self.t += 1
        scale = self.lr / (1.0 - self.beta1 ** self.t)
        for (name, p), m, u in zip(self.named_params, self._m, self._u):
            g = p.grad
            if not np.isfinite(g).all():
                raise NumericError("non-finite gradient", op=name)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            np.maximum(self.beta2 * u, np.abs(g), out=u)
            p.data -= scale * m / (u + self.eps)

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()
