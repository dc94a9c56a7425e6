"""Flat ``section.key = value`` experiment configuration.

A config file holds one assignment per line; ``#`` starts a comment. Every key
has a declared type and default, so unknown keys and malformed values are
rejected with an error naming the key.

Quadratic fitness is written ``U(z) = -kappa (z - z*)^2`` by default. Setting
``fitness.convention = mean_field`` instead reads ``fitness.kappa`` as the
coefficient in ``sbar = -2 kappa (m - z*)``, the parameterisation used by the
stationary and bifurcation modes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from .forward import INIT_KINDS, InitialCondition, SimConfig
from .hypercube import FitnessSpec, MutationRates
from .meanfield import InitialLaw, MeanFieldConfig
from .recombination import KINDS, RecombinationModel

MODES = ("simulate", "meanfield", "stationary", "bifurcation", "verify")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _optional_int(text: str):
    return None if text.lower() in ("", "none", "default") else int(text)


def _optional_str(text: str):
    return None if text.lower() in ("", "none") else text


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "run.seed": (int, 0),
    "run.replicates": (int, 1),
    "sim.N": (int, 200),
    "sim.L": (int, 100),
    "sim.generations": (int, 200),
    "sim.stride": (int, 1),
    "sim.init": (_choice(*INIT_KINDS), "all_plus"),
    "sim.init_freqs": (_floats, None),
    "sim.burn_in": (_optional_int, None),
    "sim.hist_bins": (int, 20),
    "sim.n_pairs": (int, 200),
    "sim.n_triples": (int, 100),
    "fitness.form": (_choice("linear", "quadratic"), "quadratic"),
    "fitness.convention": (_choice("potential", "mean_field"), "potential"),
    "fitness.beta": (float, 0.0),
    "fitness.kappa": (float, 0.0),
    "fitness.z_star": (float, 0.0),
    "mutation.theta_plus": (float, 0.6),
    "mutation.theta_minus": (float, 0.6),
    "recomb.kind": (_choice(*KINDS), "free"),
    "recomb.rho": (float, 0.0),
    "recomb.density": (_optional_str, None),
    "recomb.lam": (float, 1.0),
    "meanfield.solver": (_choice("particles", "grid"), "particles"),
    "meanfield.dt": (float, None),
    "meanfield.T": (float, 1.0),
    "meanfield.M": (int, 100_000),
    "meanfield.K": (int, 400),
    "meanfield.record_every": (int, 10),
    "meanfield.init": (_choice("pi", "point"), "pi"),
    "meanfield.init_y": (float, 0.0),
    "meanfield.init_point": (float, 0.5),
    "meanfield.snapshots": (_floats, ()),
    "stationary.kappa": (float, 0.0),
    "stationary.z_star": (float, 0.0),
    "stationary.y_max": (float, 20.0),
    "stationary.grid_n": (int, 401),
    "bifurcation.kappa_min": (float, -3.0),
    "bifurcation.kappa_max": (float, 0.0),
    "bifurcation.steps": (int, 31),
    "verify.filter": (str, ""),
}


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", "expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        set_value(values, key, value)
    return values


def set_value(values: dict[str, Any], key: str, value: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(key, "unknown configuration key")
    parser = SCHEMA[key][0]
    try:
        values[key] = parser(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot parse {value!r} ({exc})") from None


@dataclass
class ExperimentConfig:
    mode: str
    values: dict = field(default_factory=dict)
    out: Optional[Path] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")

    @classmethod
    def load(cls, mode: str, path=None, overrides: Optional[dict] = None, out=None) -> "ExperimentConfig":
        values = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError("--config", f"file not found: {p}")
            values = parse_text(p.read_text(), str(p))
        for k, v in (overrides or {}).items():
            if isinstance(v, str):
                set_value(values, k, v)
            else:
                if k not in SCHEMA:
                    raise ConfigError(k, "unknown configuration key")
                values[k] = v
        cfg = cls(mode, values, Path(out) if out is not None else None)
        cfg.validate()
        return cfg

    def get(self, key: str):
        if key in self.values:
            return self.values[key]
        return SCHEMA[key][1]

    @property
    def seed(self) -> int:
        return int(self.get("run.seed"))

    @property
    def replicates(self) -> int:
        return int(self.get("run.replicates"))

    def resolved(self) -> dict:
        """Every key with its effective value, sorted; the echo written with outputs."""
        out = {}
        for key in sorted(SCHEMA):
            v = self.get(key)
            out[key] = list(v) if isinstance(v, tuple) else v
        out["mode"] = self.mode
        return out

    def checksum(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- validation and sub-configs --------------------------------------------

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError("run.seed", "must be nonnegative")
        if self.replicates < 1:
            raise ConfigError("run.replicates", "must be at least 1")
        density = self.get("recomb.density")
        if density is not None and not Path(density).is_file():
            raise ConfigError("recomb.density", f"file not found: {density}")
        builders = {
            "simulate": self.sim_config,
            "meanfield": self.meanfield_config,
            "stationary": self.theta,
            "bifurcation": self.theta,
        }
        if self.mode in builders:
            builders[self.mode]()
        if self.mode == "bifurcation" and self.get("bifurcation.steps") < 2:
            raise ConfigError("bifurcation.steps", "need at least two scan points")

    def theta(self) -> MutationRates:
        try:
            return MutationRates(self.get("mutation.theta_plus"), self.get("mutation.theta_minus"))
        except ValueError as exc:
            raise ConfigError("mutation.theta_plus", str(exc)) from None

    def fitness(self) -> FitnessSpec:
        form = self.get("fitness.form")
        if form == "linear":
            return FitnessSpec.linear(self.get("fitness.beta"))
        kappa, z_star = self.get("fitness.kappa"), self.get("fitness.z_star")
        if self.get("fitness.convention") == "mean_field":
            return FitnessSpec.from_mean_field_kappa(kappa, z_star)
        return FitnessSpec.quadratic(kappa, z_star)

    def recombination(self) -> RecombinationModel:
        kind, L = self.get("recomb.kind"), self.get("sim.L")
        try:
            if kind == "free":
                return RecombinationModel.free(L)
            if kind == "single":
                return RecombinationModel.single(L, self.get("recomb.density"))
            return RecombinationModel.poisson(L, self.get("recomb.lam"), self.get("recomb.density"))
        except ValueError as exc:
            raise ConfigError("recomb.kind", str(exc)) from None

    def sim_config(self, seed: Optional[int] = None) -> SimConfig:
        freqs = self.get("sim.init_freqs")
        try:
            init = InitialCondition(self.get("sim.init"), freqs, self.get("sim.burn_in"))
        except ValueError as exc:
            raise ConfigError("sim.init", str(exc)) from None
        try:
            return SimConfig(
                N=self.get("sim.N"), L=self.get("sim.L"), generations=self.get("sim.generations"),
                fitness=self.fitness(), mutation=self.theta(), recombination=self.recombination(),
                rho=self.get("recomb.rho"), init=init,
                seed=self.seed if seed is None else seed, stride=self.get("sim.stride"),
                hist_bins=self.get("sim.hist_bins"), n_pairs=self.get("sim.n_pairs"),
                n_triples=self.get("sim.n_triples"),
            )
        except ValueError as exc:
            raise ConfigError("sim", str(exc)) from None

    def meanfield_config(self) -> MeanFieldConfig:
        theta = self.theta()
        if self.get("meanfield.init") == "pi":
            init = InitialLaw.pi(self.get("meanfield.init_y"), theta)
        else:
            init = InitialLaw.point_mass(self.get("meanfield.init_point"))
        try:
            return MeanFieldConfig(
                spec=self.fitness(), theta=theta, init=init, T=self.get("meanfield.T"),
                dt=self.get("meanfield.dt"), M=self.get("meanfield.M"), K=self.get("meanfield.K"),
                record_every=self.get("meanfield.record_every"),
            )
        except ValueError as exc:
            raise ConfigError("meanfield", str(exc)) from None
