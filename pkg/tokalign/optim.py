"""
Adam with decoupled weight decay, and a linear warmup/decay schedule.
"""

import numpy as np

from tokalign.align_exception import ConfigurationError, NumericError


class LinearWarmupDecay:
    """
    Learning rate rising linearly to ``base_lr`` over ``warmup_steps`` and
    then falling linearly to zero at ``total_steps``.

    Steps are 0-based: step ``s`` of a warmup of ``w`` uses
    ``base_lr * (s + 1) / w``, and after warmup
    ``base_lr * (total_steps - s) / (total_steps - w)``.
    """

    def __init__(self, base_lr, warmup_steps, total_steps):
        if total_steps < 1 or warmup_steps < 0 or base_lr <= 0:
            raise ConfigurationError(
                "need base_lr > 0, warmup_steps >= 0 and total_steps >= 1"
            )
        self.base_lr = base_lr
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps

    def __call__(self, step):
        if step < self.warmup_steps:
            return self.base_lr * (step + 1) / self.warmup_steps
        remaining = max(0, self.total_steps - step)
        span = max(1, self.total_steps - self.warmup_steps)
        return self.base_lr * remaining / span

    def __repr__(self):
        return "LinearWarmupDecay({}, warmup={}, total={})".format(
            self.base_lr, self.warmup_steps, self.total_steps
        )


class Adam:
    """
    Adam with bias-corrected moments; weight decay is applied directly to the
    parameters (``p -= lr * weight_decay * p``), not through the gradient.

    :param params: list of `.Tensor` parameters
    """

    def __init__(
        self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr=None):
        """
        Apply one update from the accumulated gradients. Parameters without a
        gradient are left alone apart from weight decay.

        :raises: `.NumericError` -- on a non-finite gradient
        """
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError("non-finite gradient")
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
