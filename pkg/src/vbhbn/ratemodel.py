"""Four-level rate model of optically pumped nuclear polarization.

States, in order: |0,up>, |0,down>, |-1,up>, |-1,down> (electron m_s,
single nuclear spin). Flip-flops at gamma_plus connect |0,down> and
|-1,up>; flip-flips at gamma_minus connect |0,up> and |-1,down>; optical
pumping at gamma_l returns |-1,x> to |0,x>.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import null_space

STATES = ("0,up", "0,down", "-1,up", "-1,down")


@dataclass(frozen=True)
class FourLevelRates:
    gamma_plus: float
    gamma_minus: float
    gamma_l: float

    def __post_init__(self):
        for name in ("gamma_plus", "gamma_minus", "gamma_l"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_tensor(cls, tensor, gamma_l: float = 0.0) -> FourLevelRates:
        """Rates proportional to |A+| and |A-| (MHz)."""
        return cls(abs(tensor.a_plus), abs(tensor.a_minus), gamma_l)


def rate_matrix(r: FourLevelRates) -> np.ndarray:
    """Generator M with dp/dt = M p; columns sum to zero."""
    m = np.zeros((4, 4))

    def link(src, dst, rate):
        m[dst, src] += rate
        m[src, src] -= rate

    link(1, 2, r.gamma_plus)
    link(2, 1, r.gamma_plus)
    link(0, 3, r.gamma_minus)
    link(3, 0, r.gamma_minus)
    link(2, 0, r.gamma_l)
    link(3, 1, r.gamma_l)
    return m


def steady_state_populations(r: FourLevelRates) -> np.ndarray:
    """Normalized stationary populations in `STATES` order.

    When the rates leave several stationary states (e.g. no pumping), the
    long-time limit starting from equal populations is returned.
    """
    if r.gamma_plus == r.gamma_minus == r.gamma_l == 0:
        raise ValueError("all rates are zero; the steady state is not unique")
    m = rate_matrix(r)
    m = m / np.abs(m).max()
    if np.linalg.matrix_rank(m) == 3:
        a = m.copy()
        a[0, :] = 1.0
        b = np.zeros(4)
        b[0] = 1.0
        return np.linalg.solve(a, b)
    # projector onto the stationary subspace along the range of m
    right = null_space(m)
    left = null_space(m.T)
    proj = right @ np.linalg.solve(left.T @ right, left.T)
    p = proj @ np.full(4, 0.25)
    return p / p.sum()


def polarization(populations) -> float:
    """Nuclear polarization within the m_s=0 manifold."""
    up, down = populations[0], populations[1]
    return float((up - down) / (up + down))


def saturation_polarization(a_plus: float, a_minus: float) -> float:
    """Polarization reached for infinite pumping with rates ~ |A+|, |A-|."""
    if a_plus == 0:
        raise ValueError("a_plus must be nonzero")
    ratio = abs(a_minus / a_plus)
    return (1 - ratio) / (1 + ratio)


def polarization_vs_power(template: FourLevelRates, powers_mw, k: float) -> np.ndarray:
    """Steady-state polarization for gamma_l = k * P_L over a power grid."""
    if k <= 0:
        raise ValueError("k must be positive")
    return np.array(
        [
            polarization(steady_state_populations(replace(template, gamma_l=k * p)))
            for p in np.asarray(powers_mw, dtype=float)
        ]
    )
