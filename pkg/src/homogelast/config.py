"""Experiment configuration: sectioned key-value text (INI) or JSON."""

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .convexify import DELTA_GRID, MU_GRID
from .energy import DensityParams, make_layered, make_well_density, smooth_modulation


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


@dataclass
class DensitySpec:
    kind: str = "layered"
    alpha: float = 0.05
    p: float = 4.0
    breakpoints: tuple = (0.0, 0.5, 1.0)
    phase_stiffness: tuple = (1.0, 4.0)
    contrast: float = 0.5

    def build(self):
        if self.kind == "layered":
            try:
                return make_layered(self.breakpoints, self.phase_stiffness, self.alpha, self.p)
            except ValueError as exc:
                raise ConfigError(f"density.breakpoints / density.phase_stiffness: {exc}") from exc
        if self.kind == "homogeneous":
            return make_well_density(DensityParams(self.alpha, self.p), self.phase_stiffness[0])
        if self.kind == "smooth":
            c = self.contrast
            return make_well_density(DensityParams(self.alpha, self.p),
                                     lambda y: smooth_modulation(y, c))
        raise ConfigError(f"density.kind: unknown kind {self.kind!r}")


@dataclass
class ExperimentConfig:
    density: DensitySpec = field(default_factory=DensitySpec)
    mu_grid: tuple = MU_GRID
    delta_grid: tuple = DELTA_GRID
    lambda_floor: float = 0.05
    calibration_file: str = ""
    grid_n: int = 32
    k_list: tuple = (2, 3)
    n_starts: int = 8
    amplitude: float = 2e-3
    theta_count: int = 8
    strain_radius: float = 0.05
    n_samples: int = 10
    seed: int = 0
    eps_list: tuple = (1 / 8, 1 / 16, 1 / 32, 1 / 64)
    cells_per_period: int = 16
    corrector_F: tuple = ((1.0, 0.0), (0.05, 1.0))
    force: tuple = (0.0, -0.02)
    boundary_strain: tuple = ((0.0, 0.0), (0.0, 0.0))
    out: str = "out"

    # -- serialization ----------------------------------------------------------
    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_ini(self):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["density"] = {f.name: json.dumps(getattr(self.density, f.name)) for f in fields(DensitySpec)}
        cp["experiment"] = {f.name: json.dumps(getattr(self, f.name)) for f in fields(self)
                            if f.name != "density"}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp[sec].items()]
            lines.append("")
        return "\n".join(lines)

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        dens = d.pop("density", {}) or {}
        known = {f.name for f in fields(DensitySpec)}
        for k in dens:
            if k not in known:
                raise ConfigError(f"density.{k}: unknown key")
        out = cls(density=DensitySpec(**{k: _coerce(DensitySpec, k, v) for k, v in dens.items()}))
        known = {f.name for f in fields(cls)}
        for k, v in d.items():
            if k not in known:
                raise ConfigError(f"{k}: unknown key")
            setattr(out, k, _coerce(cls, k, v))
        out.validate()
        return out

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(d)

    @classmethod
    def from_ini(cls, text):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        d = {}
        for sec in cp.sections():
            target = d.setdefault("density", {}) if sec == "density" else d
            if sec not in ("density", "experiment"):
                raise ConfigError(f"[{sec}]: unknown section")
            for k, v in cp[sec].items():
                try:
                    target[k] = json.loads(v)
                except json.JSONDecodeError:
                    target[k] = v
        return cls.from_dict(d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            text = fh.read()
        if text.lstrip().startswith("{"):
            return cls.from_json(text)
        return cls.from_ini(text)

    def validate(self):
        d = self.density
        if d.kind == "layered":
            t = np.asarray(d.breakpoints, dtype=float)
            if np.any(np.diff(t) <= 0):
                raise ConfigError("density.breakpoints: must be strictly increasing")
        if self.grid_n < 4:
            raise ConfigError("grid_n: need at least 4 cells")
        if any(e <= 0 or e >= 1 for e in self.eps_list):
            raise ConfigError("eps_list: entries must lie in (0, 1)")
        d.build()
        return self


def _coerce(cls, key, value):
    default = {f.name: f for f in fields(cls)}[key].default
    try:
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, (int, float)):
                value = [value]
            return tuple(tuple(v) if isinstance(v, list) else v for v in value)
        return value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}") from exc
