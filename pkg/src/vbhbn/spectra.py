"""Hyperfine ESR spectrum synthesis.

Line positions and weights come from enumerating the total z-projection of
the three first-shell nitrogen spins. The six second-shell boron spins are
not resolved; they enter as a Gaussian broadening whose variance matches the
A_zz-only offset distribution.
"""

from __future__ import annotations

import io
import itertools
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .model import IsotopeSpec
from .spin import SpinSpec

FWHM_PER_SIGMA = 2 * np.sqrt(2 * np.log(2))


def sigma_to_fwhm(sigma):
    return FWHM_PER_SIGMA * sigma


def fwhm_to_sigma(fwhm):
    return fwhm / FWHM_PER_SIGMA


@dataclass(frozen=True)
class HyperfineLine:
    m_i_total: Fraction
    offset_mhz: float
    weight: int
    area_scale: float


def _projections(spin: SpinSpec) -> list[Fraction]:
    return [Fraction(spin.two_s - 2 * k, 2) for k in range(spin.dim)]


def nitrogen_lines(
    nitrogen: IsotopeSpec, a_zz: float, n_sites: int = 3
) -> list[HyperfineLine]:
    """One line per distinct total m_I of `n_sites` equivalent nuclei.

    Lines are ordered by increasing m_I; offsets are m_I * |a_zz|.
    """
    if not a_zz:
        raise ValueError("a_zz must be nonzero")
    counts = Counter(
        sum(c) for c in itertools.product(_projections(nitrogen.spin), repeat=n_sites)
    )
    total = sum(counts.values())
    return [
        HyperfineLine(m, float(m) * abs(a_zz), counts[m], counts[m] / total)
        for m in sorted(counts)
    ]


def boron_broadening(boron: IsotopeSpec, a_zz_boron: float, n_sites: int = 6) -> float:
    """Gaussian sigma (MHz) of the summed boron-shell A_zz offsets."""
    i = boron.spin.s
    var_m = i * (i + 1) / 3
    return float(np.sqrt(n_sites * var_m) * abs(a_zz_boron))


def calibrate_boron(
    fwhm_10b: float,
    fwhm_11b: float,
    boron_10: IsotopeSpec,
    boron_11: IsotopeSpec,
    gamma_ratio: float = 3.0,
) -> tuple[float, float]:
    """Solve for (a_zz(11B), intrinsic sigma) reproducing two linewidths.

    a_zz(10B) is taken as a_zz(11B) / gamma_ratio. Linewidths add in
    quadrature with the boron sigma. Returns MHz values.
    """
    s10, s11 = fwhm_to_sigma(fwhm_10b), fwhm_to_sigma(fwhm_11b)
    # boron sigma per unit a_zz(11B)
    c11 = boron_broadening(boron_11, 1.0)
    c10 = boron_broadening(boron_10, 1.0 / gamma_ratio)
    a_sq = (s11**2 - s10**2) / (c11**2 - c10**2)
    intrinsic_sq = s10**2 - c10**2 * a_sq
    if a_sq <= 0 or intrinsic_sq <= 0:
        raise ValueError(
            f"linewidths {fwhm_10b}, {fwhm_11b} MHz admit no positive calibration"
        )
    return float(np.sqrt(a_sq)), float(np.sqrt(intrinsic_sq))


def line_sigma(intrinsic_sigma: float, boron_sigma: float) -> float:
    return float(np.hypot(intrinsic_sigma, boron_sigma))


@dataclass
class Spectrum:
    freq_mhz: np.ndarray
    signal: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freq_mhz = np.asarray(self.freq_mhz, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.freq_mhz.ndim != 1 or self.freq_mhz.shape != self.signal.shape:
            raise ValueError("frequency grid and signal must be 1-D of equal length")
        if np.any(np.diff(self.freq_mhz) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        if not np.all(np.isfinite(self.signal)):
            raise ValueError("signal contains non-finite values")


def synthesize(
    lines: Sequence[HyperfineLine],
    sigma_mhz: float,
    center_mhz: float,
    amplitude: float,
    grid,
    chunk_size: int | None = None,
) -> Spectrum:
    """Sum of negative-going Gaussian dips, one per hyperfine line."""
    if sigma_mhz <= 0:
        raise ValueError("sigma must be positive")
    grid = np.asarray(grid, dtype=float)
    offsets = [ln.offset_mhz for ln in lines]
    lo = center_mhz + min(offsets) - 3 * sigma_mhz
    hi = center_mhz + max(offsets) + 3 * sigma_mhz
    if grid.size == 0 or grid[0] > lo or grid[-1] < hi:
        raise ValueError(
            f"grid must cover {lo:.3f}..{hi:.3f} MHz (all lines +/- 3 sigma)"
        )
    step = grid.size if not chunk_size else chunk_size
    signal = np.empty_like(grid)
    for start in range(0, grid.size, step):
        f = grid[start : start + step]
        acc = np.zeros_like(f)
        for ln in lines:
            acc += ln.area_scale * np.exp(
                -((f - center_mhz - ln.offset_mhz) ** 2) / (2 * sigma_mhz**2)
            )
        signal[start : start + step] = -amplitude * acc
    meta = {
        "sigma_mhz": sigma_mhz,
        "fwhm_mhz": sigma_to_fwhm(sigma_mhz),
        "center_mhz": center_mhz,
        "amplitude": amplitude,
        "n_lines": len(lines),
    }
    return Spectrum(grid, signal, meta)


def _single_spin_distribution(spin: SpinSpec, polarization: float) -> np.ndarray:
    """Spin-temperature populations over m (basis order) with <m> = P * I."""
    m = spin.projections()
    i = spin.s
    if polarization == 1:
        return (m == i).astype(float)
    if polarization == -1:
        return (m == -i).astype(float)
    if spin.two_s == 1:
        return np.array([(1 + polarization) / 2, (1 - polarization) / 2])

    def dist(beta):
        w = np.exp(beta * (m - i * np.sign(beta)))
        return w / w.sum()

    if polarization == 0:
        return dist(0.0)
    target = polarization * i
    hi = 1.0
    while abs(dist(np.copysign(hi, target)) @ m) < abs(target):
        hi *= 2
    beta = brentq(lambda b: dist(b) @ m - target, *sorted((0.0, np.copysign(hi, target))))
    return dist(beta)


def polarized_weights(
    spin: SpinSpec, polarization: float, n_sites: int = 3
) -> dict[Fraction, float]:
    """Distribution of total m_I for independent spins each polarized to P."""
    if not -1 <= polarization <= 1:
        raise ValueError(f"polarization must lie in [-1, 1], got {polarization}")
    p = _single_spin_distribution(spin, polarization)
    ms = _projections(spin)
    out: dict[Fraction, float] = {}
    for combo in itertools.product(range(spin.dim), repeat=n_sites):
        key = sum((ms[k] for k in combo), Fraction(0))
        out[key] = out.get(key, 0.0) + float(np.prod(p[list(combo)]))
    return out


def synthesize_polarized(
    lines: Sequence[HyperfineLine],
    polarization: float,
    sigma_mhz: float,
    center_mhz: float,
    amplitude: float,
    grid,
    spin: SpinSpec | None = None,
    n_sites: int = 3,
) -> Spectrum:
    """Like `synthesize` with line weights from a polarized nuclear ensemble."""
    if not -1 <= polarization <= 1:
        raise ValueError(f"polarization must lie in [-1, 1], got {polarization}")
    if spin is None:
        # 2 * n_sites * I + 1 lines
        spin = SpinSpec((len(lines) - 1) // n_sites)
    w = polarized_weights(spin, polarization, n_sites)
    pol_lines = [replace(ln, area_scale=w.get(ln.m_i_total, 0.0)) for ln in lines]
    spec = synthesize(pol_lines, sigma_mhz, center_mhz, amplitude, grid)
    spec.meta["polarization"] = polarization
    return spec


class SpectrumParseError(ValueError):
    pass


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_spectrum(spec: Spectrum, path_or_buf, header_lines: Sequence[str] = ()):
    lines = [f"# {h}" for h in header_lines]
    lines += [f"# {k}: {v}" for k, v in spec.meta.items()]
    lines.append("frequency_mhz,signal")
    lines += [f"{_fmt(f)},{_fmt(s)}" for f, s in zip(spec.freq_mhz, spec.signal)]
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w") as fh:
            fh.write(text)


def read_spectrum(path_or_buf) -> Spectrum:
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf) as fh:
            text = fh.read()
    freq, sig = [], []
    header_seen = False
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            cols = [c.strip() for c in line.split(",")]
            if cols != ["frequency_mhz", "signal"]:
                raise SpectrumParseError(
                    f"line {lineno}: expected header 'frequency_mhz,signal', got {line!r}"
                )
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise SpectrumParseError(f"line {lineno}: expected 2 columns, got {len(parts)}")
        try:
            freq.append(float(parts[0]))
            sig.append(float(parts[1]))
        except ValueError:
            raise SpectrumParseError(f"line {lineno}: non-numeric value in {line!r}") from None
    if not header_seen:
        raise SpectrumParseError("missing 'frequency_mhz,signal' header")
    if not freq:
        raise SpectrumParseError("no data rows")
    try:
        return Spectrum(np.array(freq), np.array(sig))
    except ValueError as e:
        raise SpectrumParseError(str(e)) from None
