"""Run configuration: shipped defaults, user overrides, provenance.

Physical constants are stored as ``{value, source, note}`` with the value
as a decimal string. User files may give either that form or a bare number.
Keys not present in the defaults are rejected.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from typing import Any

import numpy as np
import yaml

from . import lindblad, model, spectra
from .ratemodel import FourLevelRates

SCHEMA_VERSION = 1
SOURCES = ("published", "derived", "assumed")


class ConfigError(ValueError):
    pass


def load_defaults() -> dict:
    text = resources.files("vbhbn").joinpath("data/defaults.yaml").read_text()
    return yaml.safe_load(text)


def _is_param(node) -> bool:
    return isinstance(node, dict) and "value" in node and "source" in node


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        cur = base[key]
        if _is_param(cur):
            if isinstance(val, dict):
                extra = set(val) - {"value", "source", "note"}
                if extra:
                    raise ConfigError(f"unknown fields {sorted(extra)} in {where!r}")
                merged = dict(cur, **val)
            else:
                merged = dict(cur, value=str(val), source="assumed", note="user override")
            if merged["source"] not in SOURCES:
                raise ConfigError(f"{where}: source must be one of {SOURCES}")
            out[key] = merged
        elif isinstance(cur, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(cur, val, where + ".")
        else:
            out[key] = val
    return out


def _num(node) -> float:
    raw = node["value"] if _is_param(node) else node
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"not a number: {raw!r}") from None


@dataclass
class RunConfig:
    raw: dict

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> RunConfig:
        cfg = load_defaults()
        if path is not None:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
            if not isinstance(user, dict):
                raise ConfigError("config file must contain a mapping")
            version = user.pop("schema_version", SCHEMA_VERSION)
            if version != SCHEMA_VERSION:
                raise ConfigError(f"unsupported schema_version {version}")
            cfg = _merge(cfg, user)
        if overrides:
            cfg = _merge(cfg, overrides)
        rc = cls(cfg)
        rc.validate()
        return rc

    def get(self, section: str, key: str) -> float:
        return _num(self.raw[section][key])

    def validate(self):
        for section, body in self.raw.items():
            if not isinstance(body, dict):
                continue
            for key, node in body.items():
                if _is_param(node):
                    _num(node)
        m = self.raw["model"]
        if m["nitrogen"] not in ("14N", "15N"):
            raise ConfigError(f"model.nitrogen must be 14N or 15N, got {m['nitrogen']!r}")
        if self.raw["spectra"]["boron"] not in ("10B", "11B"):
            raise ConfigError(
                f"spectra.boron must be 10B or 11B, got {self.raw['spectra']['boron']!r}"
            )
        if self.raw["spectra"]["transition"] not in ("lower", "upper"):
            raise ConfigError("spectra.transition must be 'lower' or 'upper'")
        self.rates()  # range checks

    # -- model ---------------------------------------------------------------

    def nitrogen(self) -> model.IsotopeSpec:
        return model.isotope(self.raw["model"]["nitrogen"])

    def nitrogen_tensor(self) -> model.HyperfineTensor:
        g = lambda k: self.get("model", k)  # noqa: E731
        t14 = model.HyperfineTensor(g("a_xx_14n_mhz"), g("a_yy_14n_mhz"), g("a_zz_14n_mhz"))
        n = self.nitrogen()
        if n.name == "14N":
            return t14
        t15 = model.scale_tensor_by_isotope(t14, model.isotope("14N"), n)
        # measured splitting takes precedence over the scaled one
        return model.HyperfineTensor(t15.axx, t15.ayy, g("a_zz_15n_mhz"))

    def defect_model(self) -> model.DefectModel:
        t = self.nitrogen_tensor()
        es = t.scaled(self.get("model", "excited_hyperfine_scale"))
        return model.DefectModel(
            d_gs=self.get("model", "d_gs_ghz"),
            d_es=self.get("model", "d_es_ghz"),
            gamma_e=self.get("model", "gamma_e_ghz_per_t"),
            nitrogen=self.nitrogen(),
            tensors_gs=(t,) * 3,
            tensors_es=(es,) * 3,
        )

    def field(self) -> model.FieldConfig:
        return model.FieldConfig(
            self.get("field", "b_mt"),
            self.get("field", "tilt_deg"),
            self.get("field", "azimuth_deg"),
        )

    def rates(self) -> lindblad.RateSet:
        g = lambda k: self.get("rates", k)  # noqa: E731
        try:
            return lindblad.RateSet(
                gamma_pump=g("gamma_pump_mhz"),
                gamma_rad=g("gamma_rad_mhz"),
                k_isc_0=g("k_isc_0_mhz"),
                k_isc_1=g("k_isc_1_mhz"),
                k_s0=g("k_s0_mhz"),
                k_s1=g("k_s1_mhz"),
                gamma_deph_e=g("gamma_deph_e_mhz"),
                gamma_deph_es=g("gamma_deph_es_mhz"),
                gamma_deph_n=g("gamma_deph_n_mhz"),
                gamma_relax_n=g("gamma_relax_n_mhz"),
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    # -- spectra ---------------------------------------------------------------

    def boron(self) -> model.IsotopeSpec:
        return model.isotope(self.raw["spectra"]["boron"])

    def boron_a_zz(self) -> float:
        a11 = self.get("spectra", "a_zz_11b_mhz")
        if self.boron().name == "11B":
            return a11
        return a11 / self.get("spectra", "boron_gamma_ratio")

    def line_sigma(self) -> float:
        return spectra.line_sigma(
            self.get("spectra", "intrinsic_sigma_mhz"),
            spectra.boron_broadening(self.boron(), self.boron_a_zz()),
        )

    def line_center(self) -> float:
        """ESR frequency (MHz) of the configured transition, no hyperfine."""
        m = self.defect_model()
        zeeman = m.gamma_e * self.field().b_z
        d = m.zfs(model.GROUND)
        return d - zeeman if self.raw["spectra"]["transition"] == "lower" else d + zeeman

    def spectrum_grid(self) -> np.ndarray:
        s = self.raw["spectra"]
        c = round(self.line_center())
        half, step = float(s["half_span_mhz"]), float(s["step_mhz"])
        n = int(round(2 * half / step))
        return c - half + step * np.arange(n + 1)

    # -- sweeps ------------------------------------------------------------

    def sweep_grid(self) -> np.ndarray:
        segs = self.raw["sweep"]["segments_mt"]
        parts = [np.linspace(float(a), float(b), int(n)) for a, b, n in segs]
        return np.concatenate(parts) if parts else np.array([])

    def four_level_template(self) -> FourLevelRates:
        return FourLevelRates.from_tensor(self.nitrogen_tensor())

    def power_grid(self) -> np.ndarray:
        r = self.raw["ratemodel"]
        return np.linspace(0.0, float(r["power_max_mw"]), int(r["power_points"]))

    # -- audit -------------------------------------------------------------

    def provenance(self) -> dict[str, str]:
        out = {}
        for section, body in self.raw.items():
            if isinstance(body, dict):
                for key, node in body.items():
                    if _is_param(node):
                        out[f"{section}.{key}"] = node["source"]
        return out

    def header_lines(self) -> list[str]:
        """Resolved configuration as compact JSON, one line per section."""
        lines = [f"vbhbn config schema_version={self.raw.get('schema_version', SCHEMA_VERSION)}"]
        for section, body in self.raw.items():
            if section == "schema_version":
                continue
            lines.append(f"{section}: {json.dumps(_flatten_values(body), sort_keys=True)}")
        return lines


def _flatten_values(body: Any):
    if _is_param(body):
        return body["value"]
    if isinstance(body, dict):
        return {k: _flatten_values(v) for k, v in body.items()}
    return body
