"""Command-line entry point: ``vbhbn <subcommand> [options]``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from fractions import Fraction

import numpy as np

from . import fit, lindblad, ratemodel, spectra
from .config import ConfigError, RunConfig

log = logging.getLogger("vbhbn")


def _fmt(x) -> str:
    return f"{x:.9g}"


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="\n") as fh:
            yield fh


def _write_csv(path, header_lines, columns, rows):
    with _output(path) as fh:
        for h in header_lines:
            fh.write(f"# {h}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _load_config(args) -> RunConfig:
    overrides: dict = {}

    def put(section, key, value):
        if value is not None:
            overrides.setdefault(section, {})[key] = value

    put("spectra", "boron", getattr(args, "boron", None))
    put("model", "nitrogen", getattr(args, "nitrogen", None))
    put("field", "b_mt", getattr(args, "b", None))
    put("field", "tilt_deg", getattr(args, "tilt", None))
    put("spectra", "polarization", getattr(args, "polarization", None))
    put("spectra", "noise_rel", getattr(args, "noise", None))
    return RunConfig.load(args.config, overrides)


def cmd_spectrum(args) -> int:
    cfg = _load_config(args)
    n = cfg.nitrogen()
    tensor = cfg.nitrogen_tensor()
    lines = spectra.nitrogen_lines(n, tensor.azz)
    sigma = cfg.line_sigma()
    center = cfg.line_center()
    amp = cfg.get("spectra", "amplitude")
    pol = cfg.get("spectra", "polarization")
    grid = cfg.spectrum_grid()
    if pol:
        spec = spectra.synthesize_polarized(lines, pol, sigma, center, amp, grid, spin=n.spin)
    else:
        spec = spectra.synthesize(lines, sigma, center, amp, grid)
    noise = cfg.get("spectra", "noise_rel")
    if noise:
        rng = np.random.default_rng(args.seed)
        spec.signal = spec.signal + rng.normal(0.0, noise * amp, spec.signal.size)
    spec.meta.update(isotopes=f"{cfg.boron().name}/{n.name}", a_zz_mhz=abs(tensor.azz), seed=args.seed)
    with _output(args.out) as fh:
        spectra.write_spectrum(spec, fh, cfg.header_lines())
    return 0


def _fit_report(name: str, res: fit.MixtureFit, descending: bool) -> list[tuple[str, object]]:
    err = res.stderr
    rows = [
        ("file", name),
        ("n_lines", res.n_lines),
        ("converged", res.converged),
        ("n_iter", res.n_iter),
        ("center_mhz", res.center_mhz),
        ("center_err_mhz", err["center_mhz"]),
        ("splitting_mhz", res.splitting_mhz),
        ("splitting_err_mhz", err["splitting_mhz"]),
        ("fwhm_mhz", res.fwhm_mhz),
        ("fwhm_err_mhz", spectra.FWHM_PER_SIGMA * err["sigma_mhz"]),
        ("offset", res.offset),
        ("rss", res.rss),
    ]
    areas = res.areas_by_mi(descending=descending)
    for m, a in areas.items():
        rows.append((f"area_mI_{m}", a))
    full = Fraction(res.n_lines - 1, 2)
    rows.append(("polarization", fit.polarization_from_areas(areas, float(full))))
    return rows


def cmd_fit(args) -> int:
    cfg = RunConfig.load(args.config)
    n_lines = args.n_lines or int(cfg.raw["fit"]["n_lines"])
    descending = bool(cfg.raw["fit"]["descending_mi"])
    status = 0
    reports = []
    for path in args.spectra:
        try:
            spec = spectra.read_spectrum(path)
        except (OSError, spectra.SpectrumParseError) as e:
            print(f"error: {path}: {e}", file=sys.stderr)
            return 2
        try:
            res = fit.fit_mixture(spec, n_lines, shared=not args.free)
        except fit.FitError as e:
            print(f"error: {path}: {e}", file=sys.stderr)
            status = 1
            if e.best is None:
                continue
            res = e.best
        reports.append(_fit_report(path, res, descending))
    with _output(args.out) as fh:
        for rep in reports:
            for k, v in rep:
                fh.write(f"{k}: {_fmt(v) if isinstance(v, float) else v}\n")
            fh.write("\n")
    if args.csv and reports:
        keys = [k for k, _ in reports[0]]
        with open(args.csv, "w") as fh:
            fh.write(",".join(keys) + "\n")
            for rep in reports:
                fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for _, v in rep) + "\n")
    return status


def cmd_ratemodel(args) -> int:
    cfg = RunConfig.load(args.config)
    t = cfg.nitrogen_tensor()
    template = cfg.four_level_template()
    k = cfg.get("ratemodel", "k_mhz_per_mw")
    powers = cfg.power_grid()
    curve = ratemodel.polarization_vs_power(template, powers, k)
    limit = ratemodel.saturation_polarization(t.a_plus, t.a_minus)
    header = cfg.header_lines() + [f"saturation_polarization: {_fmt(limit)}"]
    _write_csv(args.out, header, ["power_mw", "polarization"], zip(powers, curve))
    print(f"saturation polarization: {limit:.6f}", file=sys.stderr)
    return 0


def cmd_dnp_steady(args) -> int:
    cfg = _load_config(args)
    scheme = lindblad.LevelScheme(3, cfg.nitrogen().spin.two_s)
    ss = lindblad.solve_point(cfg.defect_model(), cfg.field(), cfg.rates(), scheme)
    pol = lindblad.nuclear_polarization(ss)
    header = cfg.header_lines() + [
        f"polarization: {_fmt(pol)}",
        f"residual_norm: {ss.residual_norm:.3e}",
    ]
    header += [f"gs_ms0_mI_{m}: {_fmt(p)}" for m, p in ss.ground_ms0_populations().items()]
    with _output(args.out) as fh:
        for h in header:
            fh.write(f"# {h}\n")
        fh.write("index,label,population\n")
        for i, (label, p) in enumerate(ss.labeled_populations()):
            fh.write(f"{i},{label},{_fmt(p)}\n")
    return 0


def cmd_dnp_sweep(args) -> int:
    cfg = _load_config(args)
    f = cfg.field()
    scheme = lindblad.LevelScheme(3, cfg.nitrogen().spin.two_s)
    points = lindblad.sweep_field(
        cfg.defect_model(), cfg.rates(), cfg.sweep_grid(), f.tilt_deg, f.azimuth_deg,
        scheme, workers=args.workers,
    )  # fmt: skip
    _write_csv(
        args.out,
        cfg.header_lines(),
        ["b_mt", "polarization", "residual_norm"],
        [(p.b_mt, p.polarization, p.residual_norm) for p in points],
    )
    failed = [p for p in points if not p.ok]
    for p in failed:
        print(f"error: {p.b_mt:g} mT: {p.error}", file=sys.stderr)
    return 1 if failed else 0


def _read_two_columns(path, names):
    rows = []
    header_seen = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if not header_seen:
                if parts != list(names):
                    raise ValueError(f"line {lineno}: expected header {','.join(names)!r}")
                header_seen = True
                continue
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 2 columns")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ValueError(f"line {lineno}: non-numeric value in {line!r}") from None
    return np.array(rows).reshape(-1, 2)


def cmd_fit_saturation(args) -> int:
    try:
        data = _read_two_columns(args.data, ("power_mw", "polarization"))
    except (OSError, ValueError) as e:
        print(f"error: {args.data}: {e}", file=sys.stderr)
        return 2
    try:
        res = fit.fit_saturation(data[:, 0], data[:, 1])
    except (fit.FitError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    err = res.stderr
    with _output(args.out) as fh:
        for k, v in [
            ("p_max", res.p_max), ("p_max_err", err[0]),
            ("p_sat_mw", res.p_sat), ("p_sat_err_mw", err[1]),
            ("rss", res.rss), ("well_determined", res.well_determined),
        ]:  # fmt: skip
            fh.write(f"{k}: {_fmt(v) if isinstance(v, float) else v}\n")
    return 0 if res.well_determined else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (overrides shipped defaults)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--seed", type=int, default=0, help="random seed for synthetic noise")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="vbhbn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", parents=[common], help="synthesize a hyperfine ESR spectrum")
    s.add_argument("--boron", help="10B or 11B")
    s.add_argument("--nitrogen", help="14N or 15N")
    s.add_argument("--b", type=float, help="field magnitude in mT")
    s.add_argument("--tilt", type=float, help="field tilt in degrees")
    s.add_argument("--polarization", type=float, help="nitrogen polarization in [-1, 1]")
    s.add_argument("--noise", type=float, help="noise std relative to dip amplitude")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("fit", parents=[common], help="fit Gaussian mixtures to spectrum CSVs")
    s.add_argument("spectra", nargs="+")
    s.add_argument("--n-lines", type=int)
    s.add_argument("--free", action="store_true", help="free centers and widths per line")
    s.add_argument("--csv", help="also write one CSV row per spectrum here")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("ratemodel", parents=[common], help="four-level polarization vs power")
    s.set_defaults(func=cmd_ratemodel)

    for name, func, helptext in (
        ("dnp-steady", cmd_dnp_steady, "steady state at one field, with population dump"),
        ("dnp-sweep", cmd_dnp_sweep, "steady-state polarization versus field"),
    ):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--b", type=float, help="field magnitude in mT")
        s.add_argument("--tilt", type=float, help="field tilt in degrees")
        s.set_defaults(func=func)

    s = sub.add_parser("fit-saturation", parents=[common], help="fit P(P_L) saturation curve")
    s.add_argument("data", help="CSV with columns power_mw,polarization")
    s.set_defaults(func=cmd_fit_saturation)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, ValueError) as e:
        parser.error(str(e))


if __name__ == "__main__":
    sys.exit(main())
