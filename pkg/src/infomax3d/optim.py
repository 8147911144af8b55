"""Adam with bias correction and decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    """Standard Adam; weight decay is the decoupled multiplier (1 - lr*wd)
    applied to the parameter before the gradient step, when wd > 0.
    """

    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = dict(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in self.params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def step(self, lr_for):
        """One update; `lr_for(name)` gives the learning rate per parameter
        (a float is accepted for a uniform rate)."""
        if not callable(lr_for):
            rate = float(lr_for)
            lr_for = lambda name: rate
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if np.any(np.isnan(g)):
                raise ValueError(f"NaN gradient for parameter {name!r}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            lr = lr_for(name)
            if self.weight_decay > 0.0:
                p.data = p.data * (1.0 - lr * self.weight_decay)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam_step": np.array([float(self.step_count)])}
        for name in self.params:
            out[f"adam_m/{name}"] = self.m[name].copy()
            out[f"adam_v/{name}"] = self.v[name].copy()
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        self.step_count = int(arrays["adam_step"][0])
        for name in self.params:
            self.m[name] = np.asarray(arrays[f"adam_m/{name}"], dtype=np.float64).copy()
            self.v[name] = np.asarray(arrays[f"adam_v/{name}"], dtype=np.float64).copy()
