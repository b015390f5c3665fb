"""Adam for lists of numpy arrays (gradient ascent)."""

import numpy as np


class Adam:
    """Adaptive moment ascent on a fixed list of arrays.

    ``step`` updates the arrays in place.  State is plain arrays so it can be
    checkpointed and restored bit-for-bit.
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p += self.lr * corr * m / (np.sqrt(v) + self.eps)

    def reset_for(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def state_arrays(self):
        return {"m": self.m or [], "v": self.v or []}


def sgd_update(params, grads, lr, state):
    """Apply one ascent step to ``params`` (in place) with an Adam ``state``."""
    state.lr = lr
    state.step(params, grads)
    return params
