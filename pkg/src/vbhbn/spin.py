"""Angular momentum matrices and tensor-product embedding.

Every operator uses the |m> basis ordered with m descending (+S first).
Matrices are dense complex numpy arrays; the largest space in this package
is 56-dimensional.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import NamedTuple, Sequence

import numpy as np


@dataclass(frozen=True)
class SpinSpec:
    """A spin species identified by twice its quantum number."""

    two_s: int

    def __post_init__(self):
        if not isinstance(self.two_s, (int, np.integer)) or self.two_s < 1:
            raise ValueError(f"two_s must be an integer >= 1, got {self.two_s!r}")
        if self.two_s > 12:
            raise ValueError(f"two_s={self.two_s} is above the supported maximum of 12")

    @property
    def s(self) -> float:
        return self.two_s / 2

    @property
    def dim(self) -> int:
        return self.two_s + 1

    def projections(self) -> np.ndarray:
        """m values in basis order (+S ... -S)."""
        return self.s - np.arange(self.dim)


class SpinOperators(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    plus: np.ndarray
    minus: np.ndarray


def spin_operators(spec: SpinSpec) -> SpinOperators:
    """Return Sx, Sy, Sz, S+, S- for `spec` (hbar = 1)."""
    s = spec.s
    m = spec.projections()
    # S+|m> = sqrt(S(S+1) - m(m+1)) |m+1>; |m+1> sits one index earlier
    coeff = np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1))
    plus = np.diag(coeff, k=1).astype(complex)
    minus = plus.conj().T
    x = 0.5 * (plus + minus)
    y = -0.5j * (plus - minus)
    z = np.diag(m).astype(complex)
    return SpinOperators(x, y, z, plus, minus)


@dataclass(frozen=True)
class CompositeSpace:
    """Ordered tensor product of spins (electron first, then nuclei)."""

    factors: tuple[SpinSpec, ...]

    def __init__(self, factors: Sequence[SpinSpec]):
        object.__setattr__(self, "factors", tuple(factors))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.dim for f in self.factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=int)) if self.factors else 1

    def __len__(self):
        return len(self.factors)


def embed(op: np.ndarray, site: int, space: CompositeSpace) -> np.ndarray:
    """Place the single-site operator `op` at position `site` of `space`."""
    if not 0 <= site < len(space):
        raise ValueError(f"site {site} out of range for a {len(space)}-factor space")
    op = np.asarray(op)
    d = space.dims[site]
    if op.shape != (d, d):
        raise ValueError(
            f"operator of shape {op.shape} does not match site {site} (dimension {d})"
        )
    parts = [np.eye(k, dtype=complex) for k in space.dims]
    parts[site] = op
    return reduce(np.kron, parts)


def site_operators(space: CompositeSpace, site: int) -> SpinOperators:
    """Spin operators of one factor, embedded in the full space."""
    ops = spin_operators(space.factors[site])
    return SpinOperators(*(embed(o, site, space) for o in ops))
