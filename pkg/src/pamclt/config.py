"""INI run configuration: sections [model], [grid], [experiment], [run]."""

import configparser
import hashlib
import json
from dataclasses import dataclass, field

from .covariance_model import CovarianceModel
from .errors import ConfigError
from .field_synth import GridSpec

ALLOWED = {
    "model": {"regime", "d", "beta", "H"},
    "grid": {"L", "n_points", "eps"},
    "experiment": {"t_list", "s_list", "R_list", "replicates", "paths", "n_pairs"},
    "run": {"seed", "out"},
}

DEFAULTS = {
    "t_list": (1.0,),
    "s_list": (),
    "R_list": (8.0, 16.0, 32.0, 64.0),
    "replicates": 2000,
    "paths": 256,
    "n_pairs": 20000,
    "seed": 42,
}


@dataclass
class RunConfig:
    model: CovarianceModel
    grid: GridSpec
    eps: float
    t_list: tuple
    s_list: tuple
    R_list: tuple
    replicates: int
    paths: int
    n_pairs: int
    seed: int
    out: str = None
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        """sha256 of the canonical (sorted, seed-resolved) settings."""
        canon = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def canonical(self):
        return {"model": self.model.to_dict(), "grid": self.grid.to_dict(), "eps": self.eps,
                "t_list": list(self.t_list), "s_list": list(self.s_list),
                "R_list": list(self.R_list), "replicates": self.replicates,
                "paths": self.paths, "n_pairs": self.n_pairs, "seed": self.seed}


def _floats(section, key, text):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a list of numbers, got {text!r}") from None


def _number(section, key, text, kind):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, got {text!r}") from None


def parse_config(text: str, seed_override=None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case sensitive (H)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    for sec in cp.sections():
        if sec not in ALLOWED:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in ALLOWED[sec]:
                raise ConfigError(f"unknown key [{sec}] {key}")
    if not cp.has_section("model"):
        raise ConfigError("missing [model] section")
    m = dict(cp["model"])
    if "regime" not in m:
        raise ConfigError("[model] regime is required")
    spec = {"regime": m["regime"].strip().lower()}
    if "d" in m:
        spec["d"] = _number("model", "d", m["d"], int)
    for key in ("beta", "H"):
        if key in m:
            spec[key] = _number("model", key, m[key], float)
    model = CovarianceModel.from_mapping(spec)

    g = dict(cp["grid"]) if cp.has_section("grid") else {}
    grid = GridSpec(_number("grid", "L", g.get("L", "256"), float),
                    _number("grid", "n_points", g.get("n_points", "32768"), int))
    eps = _number("grid", "eps", g["eps"], float) if "eps" in g else grid.dx

    e = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    r = dict(cp["run"]) if cp.has_section("run") else {}
    seed = _number("run", "seed", r["seed"], int) if "seed" in r else DEFAULTS["seed"]
    if seed_override is not None:
        seed = int(seed_override)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg = RunConfig(
        model=model, grid=grid, eps=eps,
        t_list=_floats("experiment", "t_list", e["t_list"]) if "t_list" in e else DEFAULTS["t_list"],
        s_list=_floats("experiment", "s_list", e["s_list"]) if "s_list" in e else DEFAULTS["s_list"],
        R_list=_floats("experiment", "R_list", e["R_list"]) if "R_list" in e else DEFAULTS["R_list"],
        replicates=_number("experiment", "replicates", e.get("replicates", str(DEFAULTS["replicates"])), int),
        paths=_number("experiment", "paths", e.get("paths", str(DEFAULTS["paths"])), int),
        n_pairs=_number("experiment", "n_pairs", e.get("n_pairs", str(DEFAULTS["n_pairs"])), int),
        seed=seed, out=r.get("out"),
        raw={s: dict(cp[s]) for s in cp.sections()},
    )
    return cfg


def load_config(path, seed_override=None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, seed_override)
