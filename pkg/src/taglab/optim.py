"""Named parameter store with hand-rolled Adam updates."""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass
class OptimConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta coefficients must lie in (0, 1)")


class ParamStore:
    """Owns the trainable tensors of one model plus their Adam state."""

    def __init__(self, params: dict):
        for name, p in params.items():
            if not isinstance(p, Tensor) or not p.requires_grad:
                raise ValueError(f"parameter {name!r} must be a trainable Tensor")
        self.params = dict(params)
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.step_count = 0
        self._grads_ready = False

    def names(self):
        return list(self.params)

    def __getitem__(self, name):
        return self.params[name]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
        self._grads_ready = False

    def backward(self, loss: Tensor):
        """Populate gradient buffers with d(loss)/d(param) for every param."""
        if not np.isfinite(loss.value):
            self.zero_grad()
            raise FloatingPointError("non-finite loss")
        self.zero_grad()
        loss.backward()
        for p in self.params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.value)
        self._grads_ready = True

    def adam_step(self, config: OptimConfig):
        """Bias-corrected Adam update in place; clears gradients after."""
        if not self._grads_ready:
            raise RuntimeError("adam_step called without fresh gradients")
        config.validate()
        self.step_count += 1
        t = self.step_count
        b1, b2 = config.beta1, config.beta2
        for name, p in self.params.items():
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1**t)
            v_hat = self.v[name] / (1 - b2**t)
            p.value -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        self.zero_grad()
