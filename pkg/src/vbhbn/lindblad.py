"""Open-system steady state of the V_B- optical cycle with nitrogen nuclei.

Electronic levels, in index order: ground triplet (m_s = +1, 0, -1),
excited triplet (+1, 0, -1), metastable singlet. Each is tensored with the
nuclear spins, giving 7 * 2**3 = 56 states for three 15N nuclei.

Density matrices are vectorized row-major, so vec(A rho B) = (A kron B.T)
vec(rho). Rates are in MHz (inverse microseconds); Hamiltonians in MHz are
multiplied by 2 pi in the commutator.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.linalg.lapack import zgecon

from .model import EXCITED, GROUND, DefectModel, FieldConfig, build_hamiltonian
from .spin import CompositeSpace, SpinSpec, site_operators

log = logging.getLogger(__name__)

ELECTRONIC_LEVELS = (
    ("GS", 1), ("GS", 0), ("GS", -1),
    ("ES", 1), ("ES", 0), ("ES", -1),
    ("SS", 0),
)  # fmt: skip
N_ELECTRONIC = len(ELECTRONIC_LEVELS)
# dense Liouvillians above this many states do not fit in memory
MAX_STATES = 64


@dataclass(frozen=True)
class LevelScheme:
    """Index map (block, m_s, nuclear configuration) <-> flat index."""

    n_nuclei: int = 3
    nuclear_two_s: int = 1

    @property
    def nuclear_dim(self) -> int:
        return (self.nuclear_two_s + 1) ** self.n_nuclei

    @property
    def dim(self) -> int:
        return N_ELECTRONIC * self.nuclear_dim

    def nuclear_configs(self) -> list[tuple[Fraction, ...]]:
        """Per-site m_I tuples in nuclear index order."""
        ms = [Fraction(self.nuclear_two_s - 2 * k, 2) for k in range(self.nuclear_two_s + 1)]
        configs = [()]
        for _ in range(self.n_nuclei):
            configs = [c + (m,) for c in configs for m in ms]
        return configs

    def index(self, block: str, m_s: int, nuc: int) -> int:
        try:
            e = ELECTRONIC_LEVELS.index((block, m_s))
        except ValueError:
            raise KeyError(f"no electronic level {block} m_s={m_s}") from None
        if not 0 <= nuc < self.nuclear_dim:
            raise KeyError(f"nuclear index {nuc} out of range")
        return e * self.nuclear_dim + nuc

    def label(self, idx: int) -> tuple[str, int, tuple[Fraction, ...]]:
        e, nuc = divmod(idx, self.nuclear_dim)
        block, m_s = ELECTRONIC_LEVELS[e]
        return block, m_s, self.nuclear_configs()[nuc]

    def labels(self) -> list[str]:
        out = []
        for idx in range(self.dim):
            block, m_s, conf = self.label(idx)
            spins = " ".join(str(m) for m in conf)
            out.append(f"{block} ms={m_s:+d} mI=[{spins}]")
        return out


@dataclass(frozen=True)
class RateSet:
    """Incoherent rates in MHz."""

    gamma_pump: float = 10.0
    gamma_rad: float = 1000.0
    k_isc_0: float = 100.0
    k_isc_1: float = 1000.0
    k_s0: float = 300.0
    k_s1: float = 30.0
    gamma_deph_e: float = 10.0  # ground state
    gamma_deph_es: float = 1e5
    gamma_deph_n: float = 0.01
    gamma_relax_n: float = 1.0  # nuclear longitudinal relaxation, 1/T1

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"rate {name} must be >= 0, got {value}")


def _transition(scheme: LevelScheme, src: int, dst: int) -> np.ndarray:
    e = np.zeros((N_ELECTRONIC, N_ELECTRONIC))
    e[dst, src] = 1.0
    return np.kron(e, np.eye(scheme.nuclear_dim))


def jump_operators(scheme: LevelScheme, rates: RateSet) -> list[np.ndarray]:
    """Jump operators with the square root of their rate folded in."""
    lv = ELECTRONIC_LEVELS.index
    ops = []

    def add(rate, op):
        if rate > 0:
            ops.append(np.sqrt(rate) * op)

    for m in (1, 0, -1):
        gs, es = lv(("GS", m)), lv(("ES", m))
        add(rates.gamma_pump, _transition(scheme, gs, es))
        add(rates.gamma_rad, _transition(scheme, es, gs))
        add(rates.k_isc_0 if m == 0 else rates.k_isc_1, _transition(scheme, es, lv(("SS", 0))))
        add(rates.k_s0 if m == 0 else rates.k_s1, _transition(scheme, lv(("SS", 0)), gs))

    for block, rate in (("GS", rates.gamma_deph_e), ("ES", rates.gamma_deph_es)):
        sz = np.zeros((N_ELECTRONIC, N_ELECTRONIC))
        for m in (1, 0, -1):
            k = lv((block, m))
            sz[k, k] = m
        add(rate, np.kron(sz, np.eye(scheme.nuclear_dim)))

    if scheme.n_nuclei:
        nspace = CompositeSpace([SpinSpec(scheme.nuclear_two_s)] * scheme.n_nuclei)
        for i in range(scheme.n_nuclei):
            ops_i = site_operators(nspace, i)
            add(rates.gamma_deph_n, np.kron(np.eye(N_ELECTRONIC), ops_i.z))
            # equal up/down rates; polarization decays at gamma_relax_n
            for ladder in (ops_i.plus, ops_i.minus):
                add(rates.gamma_relax_n / 2, np.kron(np.eye(N_ELECTRONIC), ladder))
    return ops


@lru_cache(maxsize=2)
def _dissipator(scheme: LevelScheme, rates: RateSet) -> np.ndarray:
    n = scheme.dim
    eye = np.eye(n)
    d = np.zeros((n * n, n * n), dtype=complex)
    cdc = np.zeros((n, n), dtype=complex)
    for c in jump_operators(scheme, rates):
        d += np.kron(c, c.conj())
        cdc += c.conj().T @ c
    d -= 0.5 * np.kron(cdc, eye)
    d -= 0.5 * np.kron(eye, cdc.T)
    d.flags.writeable = False
    return d


def dissipator(scheme: LevelScheme, rates: RateSet) -> np.ndarray:
    return _dissipator(scheme, rates)


def full_hamiltonian(
    model: DefectModel, field: FieldConfig, scheme: LevelScheme
) -> np.ndarray:
    """Block-diagonal H_GS + H_ES + H_singlet in MHz."""
    nuclei = [model.nitrogen] * scheme.n_nuclei
    if scheme.n_nuclei and model.nitrogen.spin.two_s != scheme.nuclear_two_s:
        raise ValueError("model nitrogen spin does not match the level scheme")
    nd = scheme.nuclear_dim
    h = np.zeros((scheme.dim, scheme.dim), dtype=complex)
    h[: 3 * nd, : 3 * nd] = build_hamiltonian(model, GROUND, field, nuclei)
    h[3 * nd : 6 * nd, 3 * nd : 6 * nd] = build_hamiltonian(model, EXCITED, field, nuclei)
    # singlet: nuclear Zeeman only
    if scheme.n_nuclei:
        nspace = CompositeSpace([model.nitrogen.spin] * scheme.n_nuclei)
        gn = model.nitrogen.gamma_n * 1e-3  # MHz/mT
        hs = np.zeros((nd, nd), dtype=complex)
        for i in range(scheme.n_nuclei):
            ops = site_operators(nspace, i)
            hs -= gn * (field.b_z * ops.z + field.b_x * ops.x + field.b_y * ops.y)
        h[6 * nd :, 6 * nd :] = hs
    return h


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> -i 2 pi [h, rho]."""
    eye = np.eye(h.shape[0])
    return -2j * np.pi * (np.kron(h, eye) - np.kron(eye, h.T))


def build_liouvillian(
    model: DefectModel,
    field: FieldConfig,
    rates: RateSet,
    scheme: LevelScheme | None = None,
) -> np.ndarray:
    """Dense Liouvillian acting on row-major vec(rho)."""
    scheme = scheme or LevelScheme()
    if scheme.dim > MAX_STATES:
        raise ValueError(
            f"{scheme.dim}-state level scheme exceeds the dense limit of {MAX_STATES} states"
        )
    lv = commutator_superop(full_hamiltonian(model, field, scheme))
    lv += dissipator(scheme, rates)
    return lv


class DegenerateSteadyStateError(RuntimeError):
    """The Liouvillian has more than one stationary state."""


class SteadyStateError(RuntimeError):
    pass


@dataclass
class SteadyState:
    rho: np.ndarray
    residual_norm: float
    scheme: LevelScheme = field(default_factory=LevelScheme)
    degenerate: bool = False

    def populations(self) -> np.ndarray:
        return self.rho.diagonal().real.copy()

    def labeled_populations(self) -> list[tuple[str, float]]:
        return list(zip(self.scheme.labels(), self.populations()))

    def ground_ms0_populations(self) -> dict[Fraction, float]:
        """GS m_s=0 populations summed by total nuclear projection."""
        pops = self.populations()
        out: dict[Fraction, float] = {}
        for nuc, conf in enumerate(self.scheme.nuclear_configs()):
            m = sum(conf, Fraction(0))
            out[m] = out.get(m, 0.0) + pops[self.scheme.index("GS", 0, nuc)]
        return dict(sorted(out.items()))


RCOND_DEGENERATE = 1e-13
RESIDUAL_TOL = 1e-8
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-9


def _relative_residual(lv: np.ndarray, x: np.ndarray) -> float:
    r = lv @ x
    norm_l = np.abs(lv).sum(axis=1).max()
    return float(np.abs(r).max() / (norm_l * np.abs(x).max()))


def steady_state(
    lv: np.ndarray,
    scheme: LevelScheme | None = None,
    rho0: np.ndarray | None = None,
) -> SteadyState:
    """Solve L vec(rho) = 0 with the trace condition replacing one row.

    A degenerate Liouvillian raises DegenerateSteadyStateError unless
    `rho0` is given, in which case the long-time limit reached from `rho0`
    is returned (flagged ``degenerate=True``).
    """
    n2 = lv.shape[0]
    n = int(round(np.sqrt(n2)))
    if n * n != n2:
        raise ValueError("Liouvillian dimension is not a perfect square")
    scheme = scheme or LevelScheme()
    if scheme.dim != n:
        raise ValueError(f"scheme dimension {scheme.dim} does not match Liouvillian ({n})")

    scale = np.abs(lv).max()
    trace_row = np.eye(n).ravel()
    a = lv.copy()
    a[0, :] = scale * trace_row
    anorm = np.abs(a).sum(axis=0).max()
    lu, piv = lu_factor(a, overwrite_a=True, check_finite=False)
    rcond, info = zgecon(lu, anorm, norm="1")
    degenerate = info != 0 or rcond < RCOND_DEGENERATE
    if degenerate:
        del lu, piv
        if rho0 is None:
            raise DegenerateSteadyStateError(
                f"Liouvillian has a degenerate stationary subspace (rcond={rcond:.2e})"
            )
        x = _long_time_limit(lv, np.asarray(rho0, dtype=complex).ravel(), scale)
    else:
        b = np.zeros(n2, dtype=complex)
        b[0] = scale
        x = lu_solve((lu, piv), b, check_finite=False)
        del lu, piv

    residual = _relative_residual(lv, x)
    rho = x.reshape(n, n)
    rho = 0.5 * (rho + rho.conj().T)
    tr = rho.trace().real
    if residual > RESIDUAL_TOL:
        raise SteadyStateError(f"steady-state residual {residual:.2e} exceeds {RESIDUAL_TOL}")
    if abs(tr - 1) > TRACE_TOL:
        raise SteadyStateError(f"steady-state trace {tr!r} differs from 1")
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -POSITIVITY_TOL:
        raise SteadyStateError(f"steady state has negative eigenvalue {evals.min():.2e}")
    return SteadyState(rho, residual, scheme, degenerate)


def _long_time_limit(lv: np.ndarray, x0: np.ndarray, scale: float) -> np.ndarray:
    # Abel limit eps (eps - L)^-1 x0 -> projection of x0 on the kernel of L
    eps = 1e-11 * scale
    a = -lv
    a[np.diag_indices_from(a)] += eps
    y = np.linalg.solve(a, x0)
    x = eps * y
    n = int(round(np.sqrt(x.size)))
    return x / x.reshape(n, n).trace()


def nuclear_polarization(ss: SteadyState) -> float:
    """Average per-nucleus polarization from GS m_s=0 line weights."""
    s = ss.ground_ms0_populations()
    total = sum(s.values())
    full = Fraction(ss.scheme.n_nuclei * ss.scheme.nuclear_two_s, 2)
    return float(sum(float(m) * w for m, w in s.items()) / (float(full) * total))


def solve_point(
    model: DefectModel,
    field: FieldConfig,
    rates: RateSet,
    scheme: LevelScheme | None = None,
) -> SteadyState:
    scheme = scheme or LevelScheme()
    return steady_state(build_liouvillian(model, field, rates, scheme), scheme)


@dataclass
class SweepPoint:
    b_mt: float
    polarization: float
    residual_norm: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _sweep_one(args) -> SweepPoint:
    model, rates, b, tilt, azimuth, scheme = args
    try:
        ss = solve_point(model, FieldConfig(b, tilt, azimuth), rates, scheme)
    except (SteadyStateError, DegenerateSteadyStateError, np.linalg.LinAlgError) as e:
        log.warning("steady state failed at %.6g mT: %s", b, e)
        return SweepPoint(float(b), float("nan"), float("nan"), str(e))
    return SweepPoint(float(b), nuclear_polarization(ss), ss.residual_norm)


def sweep_field(
    model: DefectModel,
    rates: RateSet,
    b_grid: Sequence[float],
    tilt_deg: float = 0.0,
    azimuth_deg: float = 0.0,
    scheme: LevelScheme | None = None,
    workers: int = 1,
) -> list[SweepPoint]:
    """Steady-state nuclear polarization at each field; grid order preserved."""
    scheme = scheme or LevelScheme()
    b_grid = [float(b) for b in b_grid]
    bad = [b for b in b_grid if not 0 <= b <= 200]
    if bad:
        raise ValueError(f"fields outside [0, 200] mT: {bad}")
    jobs = [(model, rates, b, tilt_deg, azimuth_deg, scheme) for b in b_grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_one, jobs))
    return [_sweep_one(j) for j in jobs]
