"""Per-group Adam updates and the log-linear position learning-rate decay."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from ..config import MappingConfig
from ..splat.gaussians import PARAM_GROUPS, GaussianSet


def lr_schedule(n: int, lr_init: float, lr_final: float, tau: float) -> float:
    """``exp((1 - t) ln lr_init + t ln lr_final)`` with ``t = min(n / tau, 1)``."""
    if n < 0:
        raise ValueError("iteration must be >= 0")
    t = min(n / tau, 1.0)
    if t == 0.0:
        return lr_init
    if t == 1.0:
        return lr_final
    return math.exp((1.0 - t) * math.log(lr_init) + t * math.log(lr_final))


def group_learning_rates(cfg: MappingConfig, iteration: int) -> Dict[str, float]:
    return {
        "positions": lr_schedule(iteration, cfg.position_lr_init, cfg.position_lr_final, cfg.position_lr_decay_iters),
        "rotations": cfg.rotation_lr,
        "log_scales": cfg.scale_lr,
        "opacity_logits": cfg.opacity_lr,
        "colors": cfg.color_lr,
    }


@dataclass
class _Moments:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    state: Dict[str, _Moments] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: MappingConfig) -> "Adam":
        return cls(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    def sync(self, gaussians: GaussianSet) -> None:
        """Re-align moment rows to ``gaussians.ids``; unseen ids start from zero."""
        if np.array_equal(self.ids, gaussians.ids):
            return
        pos = {int(g): k for k, g in enumerate(self.ids)}
        src = np.array([pos.get(int(g), -1) for g in gaussians.ids], dtype=np.int64)
        have = src >= 0
        for name, mom in self.state.items():
            shape = (len(gaussians),) + mom.m.shape[1:]
            m = np.zeros(shape)
            v = np.zeros(shape)
            m[have] = mom.m[src[have]]
            v[have] = mom.v[src[have]]
            self.state[name] = _Moments(m, v, mom.step)
        self.ids = gaussians.ids.copy()

    def step(self, gaussians: GaussianSet, grads: Mapping[str, np.ndarray], lrs: Mapping[str, float]) -> None:
        self.sync(gaussians)
        for name in PARAM_GROUPS:
            param = getattr(gaussians, name)
            g = np.asarray(grads[name], dtype=float)
            mom = self.state.get(name)
            if mom is None or mom.m.shape != param.shape:
                mom = _Moments(np.zeros_like(param), np.zeros_like(param))
            mom.step += 1
            mom.m = self.beta1 * mom.m + (1.0 - self.beta1) * g
            mom.v = self.beta2 * mom.v + (1.0 - self.beta2) * g * g
            m_hat = mom.m / (1.0 - self.beta1**mom.step)
            v_hat = mom.v / (1.0 - self.beta2**mom.step)
            param -= lrs[name] * m_hat / (np.sqrt(v_hat) + self.eps)
            self.state[name] = mom
        np.clip(gaussians.colors, 0.0, 1.0, out=gaussians.colors)
