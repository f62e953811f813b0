"""Least-squares analysis of hyperfine spectra and polarization curves."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from .spectra import FWHM_PER_SIGMA, Spectrum


class FitError(RuntimeError):
    """Minimization did not converge; `best` holds the best-so-far result."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class FitWarning(UserWarning):
    pass


@dataclass
class LMResult:
    x: np.ndarray
    rss: float
    jac: np.ndarray
    n_iter: int
    converged: bool


def levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x0,
    feasible: Callable[[np.ndarray], bool] | None = None,
    max_iter: int = 500,
    rtol: float = 1e-10,
    xtol: float = 1e-10,
    patience: int = 3,
) -> LMResult:
    """Damped Gauss-Newton with Marquardt diagonal scaling.

    Stops once `patience` consecutive iterations change the RSS by less
    than `rtol` (relative) or move the parameters by less than `xtol`
    (relative to their norm).
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual(x)
    rss = float(r @ r)
    j = jacobian(x)
    a = j.T @ j
    g = j.T @ r
    mu = 1e-3 * max(a.diagonal().max(), 1e-300)
    nu = 2.0
    quiet = 0
    for it in range(1, max_iter + 1):
        if rss == 0.0 or not np.any(g):
            return LMResult(x, rss, j, it, True)
        d = np.maximum(a.diagonal(), 1e-12 * a.diagonal().max())
        try:
            h = np.linalg.solve(a + mu * np.diag(d), -g)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2
            continue
        x_new = x + h
        step_small = np.linalg.norm(h) < xtol * (np.linalg.norm(x) + xtol)
        ok = feasible is None or feasible(x_new)
        r_new = residual(x_new) if ok else None
        rss_new = float(r_new @ r_new) if ok else np.inf
        predicted = float(h @ (mu * d * h - g))
        rho = (rss - rss_new) / predicted if predicted > 0 else -1.0
        if ok and np.isfinite(rss_new) and rho > 0:
            rss_small = (rss - rss_new) <= rtol * rss
            x, r, rss = x_new, r_new, rss_new
            j = jacobian(x)
            a = j.T @ j
            g = j.T @ r
            mu *= max(1 / 3, 1 - (2 * rho - 1) ** 3)
            nu = 2.0
            quiet = quiet + 1 if (rss_small or step_small) else 0
        else:
            mu *= nu
            nu *= 2
            quiet = quiet + 1 if step_small else 0
        if quiet >= patience:
            return LMResult(x, rss, j, it, True)
    return LMResult(x, rss, j, max_iter, False)


def _covariance(jac: np.ndarray, rss: float) -> np.ndarray:
    m, p = jac.shape
    dof = max(m - p, 1)
    try:
        inv = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        return np.full((p, p), np.inf)
    return inv * rss / dof


# --- Gaussian mixtures -----------------------------------------------------


def _line_index(n_lines: int) -> np.ndarray:
    return np.arange(n_lines) - (n_lines - 1) / 2


def mixture_model(theta, freq, n_lines):
    """offset - sum_k a_k exp(-(f - c - k s)^2 / 2 sigma^2), k symmetric."""
    c, s, sigma, offset = theta[:4]
    amps = theta[4:]
    u = freq[:, None] - c - _line_index(n_lines)[None, :] * s
    g = np.exp(-(u**2) / (2 * sigma**2))
    return offset - g @ amps


def _mixture_jacobian(theta, freq, n_lines):
    c, s, sigma, _ = theta[:4]
    amps = theta[4:]
    k = _line_index(n_lines)
    u = freq[:, None] - c - k[None, :] * s
    g = np.exp(-(u**2) / (2 * sigma**2))
    ag = g * amps[None, :]
    jac = np.empty((freq.size, 4 + n_lines))
    jac[:, 0] = -(ag * u).sum(axis=1) / sigma**2
    jac[:, 1] = -(ag * u * k[None, :]).sum(axis=1) / sigma**2
    jac[:, 2] = -(ag * u**2).sum(axis=1) / sigma**3
    jac[:, 3] = 1.0
    jac[:, 4:] = -g
    return jac


def _linear_amplitudes(freq, signal, c, s, sigma, n_lines):
    """Best offset and amplitudes for fixed nonlinear parameters."""
    u = freq[:, None] - c - _line_index(n_lines)[None, :] * s
    design = np.hstack([np.ones((freq.size, 1)), -np.exp(-(u**2) / (2 * sigma**2))])
    coef, *_ = np.linalg.lstsq(design, signal, rcond=None)
    resid = design @ coef - signal
    return coef[0], coef[1:], float(resid @ resid)


def find_dips(signal: np.ndarray) -> np.ndarray:
    """Indices of local minima below median - 3 * MAD."""
    med = np.median(signal)
    mad = np.median(np.abs(signal - med))
    thresh = med - 3 * mad
    inner = (signal[1:-1] < signal[:-2]) & (signal[1:-1] <= signal[2:])
    idx = np.nonzero(inner)[0] + 1
    return idx[signal[idx] < thresh]


@dataclass
class MixtureFit:
    center_mhz: float
    splitting_mhz: float
    sigma_mhz: float
    offset: float
    amplitudes: np.ndarray
    covariance: np.ndarray
    rss: float
    n_iter: int
    converged: bool = True
    param_names: tuple = field(default=())

    @property
    def n_lines(self) -> int:
        return len(self.amplitudes)

    @property
    def fwhm_mhz(self) -> float:
        return FWHM_PER_SIGMA * self.sigma_mhz

    @property
    def stderr(self) -> dict[str, float]:
        err = np.sqrt(np.abs(np.diag(self.covariance)))
        return dict(zip(self.param_names, err))

    @property
    def line_centers(self) -> np.ndarray:
        return self.center_mhz + _line_index(self.n_lines) * self.splitting_mhz

    @property
    def areas(self) -> np.ndarray:
        return self.amplitudes * self.sigma_mhz * np.sqrt(2 * np.pi)

    def areas_by_mi(self, descending: bool = False) -> dict[Fraction, float]:
        """Areas keyed by total m_I, ascending frequency <-> ascending m_I.

        Use ``descending=True`` when m_I decreases with frequency.
        """
        k = [Fraction(2 * i - (self.n_lines - 1), 2) for i in range(self.n_lines)]
        if descending:
            k = [-m for m in k]
        return dict(zip(k, self.areas.tolist()))

    def evaluate(self, freq) -> np.ndarray:
        theta = np.r_[self.center_mhz, self.splitting_mhz, self.sigma_mhz, self.offset, self.amplitudes]
        return mixture_model(theta, np.asarray(freq, float), self.n_lines)


def _block_mean(x, stride):
    m = x.size // stride * stride
    return x[:m].reshape(-1, stride).mean(axis=1)


def _batch_rss(design, y):
    """RSS of per-candidate least squares, amplitudes clipped at zero."""
    gram = design.transpose(0, 2, 1) @ design
    rhs = design.transpose(0, 2, 1) @ y
    gram += 1e-12 * np.trace(gram, axis1=1, axis2=2)[:, None, None] * np.eye(gram.shape[1])
    coef = np.linalg.solve(gram, rhs[..., None])[..., 0]
    if np.any(coef[:, 1:] < 0):
        coef[:, 1:] = np.clip(coef[:, 1:], 0, None)
        # refit the offset for the clipped amplitudes
        coef[:, 0] = (y[None, :] - np.einsum("cmk,ck->cm", design[:, :, 1:], coef[:, 1:])).mean(axis=1)
    r = np.einsum("cmk,ck->cm", design, coef) - y
    return (r**2).sum(axis=1)


def _initial_guess(freq, signal, n_lines):
    """Coarse search over (center, splitting, sigma).

    Each candidate is scored by a least-squares fit of the amplitudes (held
    non-negative) and offset on a block-averaged copy of the data; the
    averaging also keeps noise from creating spurious dips.
    """
    stride = max(1, freq.size // 200)
    f, y = _block_mean(freq, stride), _block_mean(signal, stride)
    step = float(np.median(np.diff(f)))
    span = f[-1] - f[0]
    depth = np.clip(np.percentile(y, 95) - y, 0, None)
    centroid = float((f * depth).sum() / depth.sum()) if depth.any() else 0.5 * (f[0] + f[-1])

    splittings = list(np.geomspace(2 * step, span / n_lines, 48))
    dips = find_dips(y)
    if len(dips) >= 2:
        splittings.append(float(np.median(np.diff(f[dips]))))
    k = _line_index(n_lines)
    best = (np.inf, None)
    for s in splittings:
        centers = centroid + s * np.arange(-4 * (n_lines - 1), 4 * (n_lines - 1) + 1) / 8
        for frac in (0.15, 0.3, 0.5, 0.75):
            sigma = max(frac * s, step)
            u = f[None, :, None] - centers[:, None, None] - k * s
            g = np.exp(-(u**2) / (2 * sigma**2))
            design = np.concatenate([np.ones(g.shape[:2] + (1,)), -g], axis=2)
            rss = _batch_rss(design, y)
            i = int(np.argmin(rss))
            if rss[i] < best[0]:
                best = (rss[i], (centers[i], s, sigma))
    c, s, sigma = best[1]
    off, amps, _ = _linear_amplitudes(freq, signal, c, s, sigma, n_lines)
    return np.r_[c, s, sigma, off, amps]


def fit_mixture(
    spec: Spectrum,
    n_lines: int,
    init: Mapping[str, float] | None = None,
    shared: bool = True,
    max_iter: int = 500,
) -> MixtureFit:
    """Fit `n_lines` equally spaced Gaussian dips with shared width.

    `init` may give any of center_mhz, splitting_mhz, sigma_mhz; missing
    entries are estimated from the data. With ``shared=False`` every line
    gets its own center and width (diagnostic mode); the reported splitting
    and sigma are then averages.
    """
    if not 2 <= n_lines <= 9:
        raise ValueError(f"n_lines must be in 2..9, got {n_lines}")
    freq, signal = spec.freq_mhz, spec.signal
    if np.ptp(signal) == 0:
        raise ValueError("signal has zero amplitude range; cannot initialize fit")
    if freq.size < n_lines + 4:
        raise ValueError("too few samples for the requested number of lines")
    theta0 = _initial_guess(freq, signal, n_lines)
    if init:
        for i, key in enumerate(("center_mhz", "splitting_mhz", "sigma_mhz")):
            if key in init:
                theta0[i] = float(init[key])
        theta0[3], theta0[4:], _ = _linear_amplitudes(freq, signal, *theta0[:3], n_lines)

    if not shared:
        return _fit_free(freq, signal, theta0, n_lines, max_iter)

    res = levenberg_marquardt(
        lambda t: mixture_model(t, freq, n_lines) - signal,
        lambda t: _mixture_jacobian(t, freq, n_lines),
        theta0,
        feasible=lambda t: t[1] > 0 and t[2] > 0,
        max_iter=max_iter,
    )
    names = ("center_mhz", "splitting_mhz", "sigma_mhz", "offset") + tuple(
        f"amplitude_{i}" for i in range(n_lines)
    )
    x = res.x
    fit = MixtureFit(
        x[0], x[1], x[2], x[3], x[4:].copy(), _covariance(res.jac, res.rss),
        res.rss, res.n_iter, res.converged, names,
    )  # fmt: skip
    if not res.converged:
        raise FitError(f"mixture fit did not converge in {max_iter} iterations", fit)
    return fit


def _fit_free(freq, signal, theta0, n_lines, max_iter):
    c, s, sigma, off = theta0[:4]
    centers = c + _line_index(n_lines) * s
    # layout: offset, then (center, sigma, amplitude) per line
    x0 = np.r_[off, np.column_stack([centers, np.full(n_lines, sigma), theta0[4:]]).ravel()]

    def unpack(t):
        p = t[1:].reshape(n_lines, 3)
        return t[0], p[:, 0], p[:, 1], p[:, 2]

    def model(t):
        o, cs, ss, amps = unpack(t)
        g = np.exp(-((freq[:, None] - cs) ** 2) / (2 * ss**2))
        return o - g @ amps

    def jac(t):
        _, cs, ss, amps = unpack(t)
        u = freq[:, None] - cs
        g = np.exp(-(u**2) / (2 * ss**2))
        out = np.empty((freq.size, 1 + 3 * n_lines))
        out[:, 0] = 1.0
        out[:, 1::3] = -amps * g * u / ss**2
        out[:, 2::3] = -amps * g * u**2 / ss**3
        out[:, 3::3] = -g
        return out

    res = levenberg_marquardt(
        lambda t: model(t) - signal, jac, x0,
        feasible=lambda t: np.all(t[2::3] > 0), max_iter=max_iter,
    )  # fmt: skip
    o, cs, ss, amps = unpack(res.x)
    order = np.argsort(cs)
    names = ("offset",) + tuple(
        f"{k}_{i}" for i in range(n_lines) for k in ("center", "sigma", "amplitude")
    )
    fit = MixtureFit(
        float(cs.mean()), float(np.mean(np.diff(cs[order]))), float(ss.mean()), o,
        amps[order].copy(), _covariance(res.jac, res.rss), res.rss, res.n_iter,
        res.converged, names,
    )  # fmt: skip
    if not res.converged:
        raise FitError(f"mixture fit did not converge in {max_iter} iterations", fit)
    return fit


# --- polarization -----------------------------------------------------------


def polarization_from_areas(
    areas: Mapping[Fraction | float, float], full_projection: float = 1.5
) -> float:
    """Per-nucleus polarization sum(m S_m) / (full_projection * sum(S_m))."""
    total = sum(areas.values())
    if not any(areas.values()):
        raise ValueError("all line areas are zero")
    return float(sum(float(m) * s for m, s in areas.items()) / (full_projection * total))


@dataclass
class SaturationFit:
    p_max: float
    p_sat: float
    covariance: np.ndarray
    rss: float
    n_iter: int
    converged: bool = True

    @property
    def stderr(self) -> tuple[float, float]:
        return tuple(np.sqrt(np.abs(np.diag(self.covariance))))

    @property
    def well_determined(self) -> bool:
        err = self.stderr
        return bool(np.all(np.isfinite(err)) and err[1] <= 0.5 * self.p_sat)


def saturation_curve(power_mw, p_max, p_sat):
    x = np.asarray(power_mw, dtype=float) / p_sat
    return p_max * x / (1 + x)


def fit_saturation(power_mw, polarization, init: tuple[float, float] | None = None) -> SaturationFit:
    """Fit P(P_L) = P_max (P_L/P_sat) / (1 + P_L/P_sat)."""
    p_l = np.asarray(power_mw, dtype=float)
    pol = np.asarray(polarization, dtype=float)
    if p_l.shape != pol.shape or p_l.ndim != 1:
        raise ValueError("power and polarization must be 1-D of equal length")
    if np.unique(p_l).size < 3:
        raise ValueError("need at least 3 distinct powers")
    if init is None:
        init = (1.2 * pol[np.argmax(np.abs(pol))], float(np.median(p_l[p_l > 0])))

    def jac(t):
        pm, ps = t
        x = p_l / ps
        return np.column_stack([x / (1 + x), -pm * x / (ps * (1 + x) ** 2)])

    res = levenberg_marquardt(
        lambda t: saturation_curve(p_l, *t) - pol, jac, np.asarray(init, float),
        feasible=lambda t: t[1] > 0,
    )  # fmt: skip
    fit = SaturationFit(res.x[0], res.x[1], _covariance(res.jac, res.rss), res.rss, res.n_iter, res.converged)
    if not res.converged:
        raise FitError("saturation fit did not converge", fit)
    if not fit.well_determined:
        warnings.warn(
            f"P_sat is poorly constrained (P_sat={fit.p_sat:.3g}, stderr={fit.stderr[1]:.3g})",
            FitWarning,
            stacklevel=2,
        )
    return fit
