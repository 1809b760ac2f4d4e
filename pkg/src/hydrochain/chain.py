"""Microscopic chain configuration and its thermodynamic ledger."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ThermoLedger:
    """Running totals along one trajectory.

    energy0: E_N at the start; work: W_N = int tau d L_N; heat_direct:
    Q_N accumulated from its own Ito expression (not as a difference);
    length: current L_N.
    """

    energy0: float = 0.0
    work: float = 0.0
    heat_direct: float = 0.0
    length: float = 0.0


@dataclass(frozen=True)
class ChainState:
    """Distances r_i = q_i - q_{i-1} and momenta p_i, i = 1..n, at macroscopic time t."""

    r: np.ndarray
    p: np.ndarray
    t: float = 0.0
    ledger: ThermoLedger = field(default_factory=ThermoLedger)

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        p = np.array(self.p, dtype=float)
        if r.ndim != 1 or r.shape != p.shape:
            raise ValueError(f"r and p must be 1-d of equal length, got {r.shape} and {p.shape}")
        if r.size < 3:
            raise ValueError(f"a chain needs at least 3 sites, got n={r.size}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
            raise FloatingPointError("chain state contains non-finite entries")
        r.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.r.size

    def positions(self) -> np.ndarray:
        """q_0 = 0, q_i = r_1 + ... + r_i."""
        return np.concatenate([[0.0], np.cumsum(self.r)])
