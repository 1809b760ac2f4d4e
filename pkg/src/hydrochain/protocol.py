"""Boundary tension paths."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


@numba.njit(cache=True)
def smoothstep_tension(t, tau0, tau1, t_star):
    if t_star <= 0.0 or t >= t_star:
        return tau1
    if t <= 0.0:
        return tau0
    u = t / t_star
    return tau0 + (tau1 - tau0) * u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


@dataclass(frozen=True)
class TensionProtocol:
    """tau(t) moving from tau0 to tau1 on [0, t_star] along the quintic
    smoothstep u^3 (10 - 15 u + 6 u^2), constant afterwards.

    The smoothstep has vanishing first and second derivatives at both
    ends, so the boundary data are C^2 in time.
    """

    tau0: float = 0.0
    tau1: float = 1.0
    t_star: float = 1.0

    def __post_init__(self):
        if not self.t_star > 0:
            raise ValueError(f"t_star must be positive, got {self.t_star}")

    @classmethod
    def constant(cls, tau: float) -> "TensionProtocol":
        return cls(tau, tau, 1.0)

    @property
    def is_constant(self) -> bool:
        return self.tau0 == self.tau1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        u = np.clip(t / self.t_star, 0.0, 1.0)
        out = self.tau0 + (self.tau1 - self.tau0) * u**3 * (10.0 - 15.0 * u + 6.0 * u**2)
        return out[()] if out.ndim == 0 else out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        u = np.clip(t / self.t_star, 0.0, 1.0)
        out = (self.tau1 - self.tau0) * 30.0 * u**2 * (1.0 - u) ** 2 / self.t_star
        return out[()] if out.ndim == 0 else out

    def kernel_args(self):
        return (float(self.tau0), float(self.tau1), float(self.t_star))
