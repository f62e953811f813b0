"""Isotopes, hyperfine tensors and the V_B- spin Hamiltonian.

Hamiltonians are returned in MHz (ordinary frequency). Fields are given in
mT, zero-field splittings in GHz and the electron gyromagnetic ratio in
GHz/T, so that ``gamma_e * B`` with B in mT is directly in MHz.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .spin import CompositeSpace, SpinSpec, site_operators

GROUND = "ground"
EXCITED = "excited"
MANIFOLDS = (GROUND, EXCITED)


@dataclass(frozen=True)
class IsotopeSpec:
    name: str
    spin: SpinSpec
    gamma_n: float  # MHz/T, signed
    natural_abundance: float


ISOTOPES = {
    "10B": IsotopeSpec("10B", SpinSpec(6), 4.575, 0.20),
    "11B": IsotopeSpec("11B", SpinSpec(3), 13.66, 0.80),
    "14N": IsotopeSpec("14N", SpinSpec(2), 3.07, 0.996),
    "15N": IsotopeSpec("15N", SpinSpec(1), -4.3, 0.004),
}


def isotope(name: str) -> IsotopeSpec:
    try:
        return ISOTOPES[name]
    except KeyError:
        raise ValueError(
            f"unknown isotope {name!r}; expected one of {sorted(ISOTOPES)}"
        ) from None


@dataclass(frozen=True)
class HyperfineTensor:
    """Diagonal hyperfine tensor in MHz."""

    axx: float
    ayy: float
    azz: float

    @property
    def a_plus(self) -> float:
        return (self.axx + self.ayy) / 4

    @property
    def a_minus(self) -> float:
        return (self.axx - self.ayy) / 4

    def scaled(self, factor: float) -> HyperfineTensor:
        return HyperfineTensor(self.axx * factor, self.ayy * factor, self.azz * factor)


def scale_tensor_by_isotope(
    t: HyperfineTensor, src: IsotopeSpec, dst: IsotopeSpec
) -> HyperfineTensor:
    """Rescale a tensor from one isotope to another by the signed gamma ratio."""
    for iso in (src, dst):
        if ISOTOPES.get(iso.name) != iso:
            raise ValueError(f"isotope {iso.name!r} is not registered")
    if src == dst:
        return t
    return t.scaled(dst.gamma_n / src.gamma_n)


@dataclass(frozen=True)
class FieldConfig:
    b_mag: float  # mT
    tilt_deg: float = 0.0
    azimuth_deg: float = 0.0

    @property
    def b_z(self) -> float:
        return self.b_mag * np.cos(np.radians(self.tilt_deg))

    @property
    def b_perp(self) -> float:
        return self.b_mag * np.sin(np.radians(self.tilt_deg))

    @property
    def b_x(self) -> float:
        return self.b_perp * np.cos(np.radians(self.azimuth_deg))

    @property
    def b_y(self) -> float:
        return self.b_perp * np.sin(np.radians(self.azimuth_deg))


@dataclass(frozen=True)
class DefectModel:
    d_gs: float = 3.47  # GHz
    d_es: float = 2.1  # GHz
    gamma_e: float = 28.0  # GHz/T
    nitrogen: IsotopeSpec = ISOTOPES["15N"]
    tensors_gs: tuple[HyperfineTensor, ...] = field(default_factory=tuple)
    tensors_es: tuple[HyperfineTensor, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "tensors_gs", tuple(self.tensors_gs))
        object.__setattr__(self, "tensors_es", tuple(self.tensors_es))

    def zfs(self, manifold: str) -> float:
        """Zero-field splitting in MHz."""
        _check_manifold(manifold)
        return 1e3 * (self.d_gs if manifold == GROUND else self.d_es)

    def tensors(self, manifold: str) -> tuple[HyperfineTensor, ...]:
        _check_manifold(manifold)
        return self.tensors_gs if manifold == GROUND else self.tensors_es

    def lac_field(self, manifold: str) -> float:
        """Bare-electron m_s=0 / m_s=-1 crossing field in mT."""
        return self.zfs(manifold) / self.gamma_e

    def with_tensors(self, gs=None, es=None) -> DefectModel:
        return replace(
            self,
            tensors_gs=self.tensors_gs if gs is None else tuple(gs),
            tensors_es=self.tensors_es if es is None else tuple(es),
        )


def _check_manifold(manifold: str):
    if manifold not in MANIFOLDS:
        raise ValueError(f"manifold must be one of {MANIFOLDS}, got {manifold!r}")


@lru_cache(maxsize=32)
def _operators(two_s: tuple[int, ...]):
    space = CompositeSpace([SpinSpec(2)] + [SpinSpec(k) for k in two_s])
    ops = [site_operators(space, i) for i in range(len(space))]
    for o in ops:
        for m in o:
            m.flags.writeable = False
    return space, ops


def build_hamiltonian(
    model: DefectModel,
    manifold: str,
    field: FieldConfig,
    nuclei: Sequence[IsotopeSpec] | None = None,
    tensors: Sequence[HyperfineTensor] | None = None,
) -> np.ndarray:
    """Spin Hamiltonian (MHz) over [S=1, nuclei...].

    `nuclei` defaults to three copies of the model's nitrogen isotope and
    `tensors` to the model's tensors for `manifold`.
    """
    zfs = model.zfs(manifold)
    if nuclei is None:
        nuclei = [model.nitrogen] * 3
    nuclei = list(nuclei)
    if len(nuclei) > 3:
        raise ValueError(f"at most 3 nuclei are supported, got {len(nuclei)}")
    if tensors is None:
        available = model.tensors(manifold)
        if len(available) < len(nuclei):
            raise ValueError(
                f"{len(nuclei)} nuclei but the model has {len(available)} "
                f"{manifold}-state tensors"
            )
        tensors = available[: len(nuclei)]
    tensors = list(tensors)
    if len(tensors) != len(nuclei):
        raise ValueError(f"{len(tensors)} tensors given for {len(nuclei)} nuclei")

    space, ops = _operators(tuple(n.spin.two_s for n in nuclei))
    s = ops[0]
    ge = model.gamma_e  # MHz/mT
    bz, bx, by = field.b_z, field.b_x, field.b_y
    h = zfs * (s.z @ s.z) + ge * (bz * s.z + bx * s.x + by * s.y)
    for iso, t, i in zip(nuclei, tensors, ops[1:]):
        gn = iso.gamma_n * 1e-3  # MHz/mT
        h = h - gn * (bz * i.z + bx * i.x + by * i.y)
        h = h + t.axx * (s.x @ i.x) + t.ayy * (s.y @ i.y) + t.azz * (s.z @ i.z)
    return 0.5 * (h + h.conj().T)


def total_jz(nuclei: Sequence[IsotopeSpec]) -> np.ndarray:
    _, ops = _operators(tuple(n.spin.two_s for n in nuclei))
    return sum(o.z for o in ops)


class LacNotFoundError(RuntimeError):
    pass


def lac_gap(
    model: DefectModel,
    manifold: str,
    b_z: float,
    nuclei: Sequence[IsotopeSpec] | None = None,
) -> float:
    """Gap (MHz) between the m_s=0 and m_s=-1 adiabatic manifolds at `b_z`.

    The lowest 2n levels (n nuclear states) split into a lower and an upper
    group of n; the gap is the difference of their mean energies. Without
    nuclei this is the plain two-level splitting.
    """
    if nuclei is None:
        nuclei = [model.nitrogen] * 3
    h = build_hamiltonian(model, manifold, FieldConfig(b_z), nuclei)
    n = h.shape[0] // 3
    e = np.linalg.eigvalsh(h)[: 2 * n]
    return float(e[n:].mean() - e[:n].mean())


def locate_lac(
    model: DefectModel,
    manifold: str,
    nuclei: Sequence[IsotopeSpec] | None = None,
    window: tuple[float, float] = (0.0, 300.0),
    step: float = 0.5,
) -> float:
    """Field (mT) of minimum m_s=0 / m_s=-1 gap inside `window` (tilt 0)."""
    grid = np.arange(window[0], window[1] + step / 2, step)
    gaps = np.array([lac_gap(model, manifold, b, nuclei) for b in grid])
    k = int(np.argmin(gaps))
    if k == 0 or k == len(grid) - 1:
        raise LacNotFoundError(
            f"no {manifold}-state anticrossing inside {window[0]}-{window[1]} mT"
        )
    res = minimize_scalar(
        lambda b: lac_gap(model, manifold, b, nuclei),
        bounds=(grid[k - 1], grid[k + 1]),
        method="bounded",
        options={"xatol": 1e-6},
    )
    return float(res.x)
