"""Run configuration: YAML with explicit units on every physical quantity.

Quantities are strings ``"<number> <unit>"``.  Supported units:

* time: ``s, ms, us, ns``
* length: ``m, mm, um, nm``
* power: ``W, mW, uW, nW``
* angular frequency: ``rad/s``, ``Hz, kHz, MHz, GHz`` (multiplied by 2 pi),
  and linewidth units ``gamma_d1``, ``gamma_d2``.

Validation collects every problem before failing.
"""

from __future__ import annotations

import copy
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .trajectories import RNG_ALGORITHM, content_hash

TIME = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
LENGTH = {"m": 1.0, "mm": 1e-3, "um": 1e-6, "nm": 1e-9}
POWER = {"W": 1.0, "mW": 1e-3, "uW": 1e-6, "nW": 1e-9}
FREQ = {"rad/s": 1.0, "Hz": 2 * np.pi, "kHz": 2e3 * np.pi, "MHz": 2e6 * np.pi, "GHz": 2e9 * np.pi}
KINDS = {"time": TIME, "length": LENGTH, "power": POWER, "frequency": FREQ}

_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z_/0-9]+)\s*$")

NOMINAL = {
    "species": "cs133",
    "probe": {
        "delta_d2": "-580 gamma_d2",
        "delta_d1": "optimal",
        "power_ratio": "cancel",
        "gamma_anchor": "35 us",
        "waist": "17 um",
        "larmor": "800 kHz",
    },
    "cloud": {"w_perp": "35 um", "w_z": "1 mm", "N1": 1.0e6},
    "basis": {"p_max": 2, "l_max": 2, "n_slices": 12, "n_radial": 64, "n_angular": 128, "prune": True},
    "integration": {"dt": "0.2 us", "T": "300 us", "n_traj": 2000, "base_seed": 1},
    "analysis": {"window_T": "120 us", "T_start": "15 us", "T_stop": "150 us", "n_T": 10,
                 "spin_ratio": "wineland", "n_boot": 200},
    "fig2": {"N1_fractions": [0.2, 0.4, 0.6, 0.8, 1.0], "n_traj": 2000},
    "fig1b": {"n_delta": 60, "n_power": 60, "delta_ratio_min": 0.2, "delta_ratio_max": 5.0,
              "power_ratio_min": 0.01, "power_ratio_max": 2.0},
    "fig1c": {"n_atoms": 2000, "seed": 2024, "T_max": "200 us", "n_T": 21},
    "output": {"dir": "qndspin-out"},
}


def parse_quantity(text, kind: str, species=None) -> float:
    """Convert ``"<number> <unit>"`` of the given kind to SI (rad/s for frequencies)."""
    if not isinstance(text, str):
        raise ValueError(f"expected a string with a unit, got {text!r}")
    m = _QTY.match(text)
    if not m:
        raise ValueError(f"cannot parse quantity {text!r}")
    value, unit = float(m.group(1)), m.group(2)
    table = KINDS[kind]
    if unit in table:
        return value * table[unit]
    if kind == "frequency" and unit in ("gamma_d1", "gamma_d2"):
        if species is None:
            raise ValueError("linewidth units need species data")
        from .probe import D1, D2
        jp = D1 if unit == "gamma_d1" else D2
        return value * species.manifold(jp).gamma
    raise ValueError(f"unit {unit!r} is not a {kind} unit")


def format_quantity(value: float, kind: str) -> str:
    unit = {"time": "s", "length": "m", "power": "W", "frequency": "rad/s"}[kind]
    return f"{float(value)!r} {unit}"


@dataclass
class RunConfig:
    species: str
    delta_d2: float
    delta_d1: float | None  # None: optimal design point
    power_ratio: float | None  # None: tensor cancellation
    gamma_anchor: float | None  # scattering time, s
    power_d1: float | None
    power_d2: float | None
    waist: float
    larmor: float
    w_perp: float
    w_z: float
    N1: float
    p_max: int
    l_max: int
    n_slices: int
    n_radial: int
    n_angular: int
    prune: bool
    dt: float | None
    T: float
    n_traj: int
    base_seed: int
    window_T: float
    T_grid: list
    spin_ratio: str
    n_boot: int
    fig2_fractions: list
    fig2_n_traj: int
    fig1b: dict
    fig1c: dict
    out_dir: str
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def hash(self) -> str:
        d = asdict(self)
        d.pop("raw")
        return content_hash(d)

    def resolved(self) -> dict:
        d = asdict(self)
        d.pop("raw")
        d["rng"] = RNG_ALGORITHM
        d["config_hash"] = self.hash
        return d


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _species(name):
    from .atomic import cesium, load_species
    if name in ("cs133", "cesium", None):
        return cesium()
    return load_species(name)


def validate_config(raw: dict | None) -> RunConfig:
    """Resolve units and defaults; raises :class:`ConfigError` listing every problem."""
    cfg = _merge(NOMINAL, raw or {})
    errors: list[str] = []
    try:
        sp = _species(cfg.get("species"))
    except Exception as exc:  # noqa: BLE001 - reported as a config error
        errors.append(f"species: {exc}")
        sp = None

    def q(section, key, kind, optional=False, positive=False, nonneg=False, specials=()):
        val = cfg.get(section, {}).get(key)
        if val is None or (isinstance(val, str) and val in specials):
            if val is None and not optional:
                errors.append(f"{section}.{key}: missing")
            return None
        try:
            x = parse_quantity(val, kind, sp)
        except ValueError as exc:
            errors.append(f"{section}.{key}: {exc}")
            return None
        if positive and not x > 0:
            errors.append(f"{section}.{key}: must be positive, got {val!r}")
        if nonneg and x < 0:
            errors.append(f"{section}.{key}: must be non-negative, got {val!r}")
        return x

    def num(section, key, typ=float, minimum=None):
        val = cfg.get(section, {}).get(key)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            errors.append(f"{section}.{key}: expected a number, got {val!r}")
            return None
        if typ is int and int(val) != val:
            errors.append(f"{section}.{key}: expected an integer, got {val!r}")
            return None
        if minimum is not None and val < minimum:
            errors.append(f"{section}.{key}: must be >= {minimum}, got {val!r}")
        return typ(val)

    p = cfg["probe"]
    delta_d2 = q("probe", "delta_d2", "frequency")
    delta_d1 = q("probe", "delta_d1", "frequency", optional=True, specials=("optimal",))
    pr = p.get("power_ratio")
    power_ratio = None
    if pr != "cancel":
        if isinstance(pr, (int, float)) and not isinstance(pr, bool) and pr >= 0:
            power_ratio = float(pr)
        else:
            errors.append(f"probe.power_ratio: expected 'cancel' or a non-negative number, got {pr!r}")
    anchor = q("probe", "gamma_anchor", "time", optional=True, positive=True, specials=("none",))
    power_d1 = q("probe", "power_d1", "power", optional=True, nonneg=True)
    power_d2 = q("probe", "power_d2", "power", optional=True, nonneg=True)
    if anchor is None and power_d2 is None:
        errors.append("probe: give either gamma_anchor or an explicit power_d2")
    waist = q("probe", "waist", "length", positive=True)
    larmor = q("probe", "larmor", "frequency", nonneg=True)

    w_perp = q("cloud", "w_perp", "length", positive=True)
    w_z = q("cloud", "w_z", "length", positive=True)
    N1 = num("cloud", "N1", float, minimum=0)

    b = {k: num("basis", k, int, minimum=m) for k, m in
         (("p_max", 0), ("l_max", 0), ("n_slices", 1), ("n_radial", 4), ("n_angular", 4))}
    prune = cfg["basis"].get("prune", True)
    if not isinstance(prune, bool):
        errors.append("basis.prune: expected true/false")

    dt = q("integration", "dt", "time", optional=True, positive=True, specials=("auto",))
    T = q("integration", "T", "time", positive=True)
    n_traj = num("integration", "n_traj", int, minimum=1)
    base_seed = num("integration", "base_seed", int, minimum=0)

    a = cfg["analysis"]
    window_T = q("analysis", "window_T", "time", positive=True)
    t0 = q("analysis", "T_start", "time", positive=True)
    t1 = q("analysis", "T_stop", "time", positive=True)
    nT = num("analysis", "n_T", int, minimum=1)
    T_grid = []
    if None not in (t0, t1, nT):
        if t1 < t0:
            errors.append("analysis: T_stop must not precede T_start")
        T_grid = np.linspace(t0, t1, nT).tolist()
        if T is not None and 2 * t1 > T * (1 + 1e-12):
            errors.append("analysis.T_stop: records must cover two windows (2 T_stop <= integration.T)")
    spin_ratio = a.get("spin_ratio", "wineland")
    if spin_ratio not in ("wineland", "printed"):
        errors.append("analysis.spin_ratio: expected 'wineland' or 'printed'")
    n_boot = num("analysis", "n_boot", int, minimum=10)

    f2 = cfg["fig2"]
    fr = f2.get("N1_fractions")
    if not (isinstance(fr, list) and len(set(fr)) >= 3 and all(isinstance(x, (int, float)) and 0 < x <= 1 for x in fr)):
        errors.append("fig2.N1_fractions: need >= 3 distinct values in (0, 1]")
    f2n = num("fig2", "n_traj", int, minimum=2)

    f1b = dict(cfg["fig1b"])
    for k in ("n_delta", "n_power"):
        num("fig1b", k, int, minimum=2)
    f1c = dict(cfg["fig1c"])
    num("fig1c", "n_atoms", int, minimum=1)
    num("fig1c", "seed", int, minimum=0)
    num("fig1c", "n_T", int, minimum=2)
    f1c["T_max"] = q("fig1c", "T_max", "time", positive=True)

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        species=str(cfg.get("species")), delta_d2=delta_d2, delta_d1=delta_d1, power_ratio=power_ratio,
        gamma_anchor=anchor, power_d1=power_d1, power_d2=power_d2, waist=waist, larmor=larmor,
        w_perp=w_perp, w_z=w_z, N1=N1, prune=prune, dt=dt, T=T, n_traj=n_traj, base_seed=base_seed,
        window_T=window_T, T_grid=T_grid, spin_ratio=spin_ratio, n_boot=n_boot,
        fig2_fractions=[float(x) for x in fr], fig2_n_traj=f2n, fig1b=f1b, fig1c=f1c,
        out_dir=str(cfg["output"]["dir"]), raw=cfg, **b,
    )


def load_config(path=None) -> RunConfig:
    if path is None:
        return validate_config({})
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    return validate_config(raw)


def to_raw(cfg: RunConfig) -> dict:
    """Fully explicit SI-unit mapping that parses back to ``cfg``."""
    fq = format_quantity
    opt = lambda v, kind, alt: alt if v is None else fq(v, kind)  # noqa: E731
    t = cfg.T_grid
    return {
        "species": cfg.species,
        "probe": {"delta_d2": fq(cfg.delta_d2, "frequency"),
                  "delta_d1": opt(cfg.delta_d1, "frequency", "optimal"),
                  "power_ratio": "cancel" if cfg.power_ratio is None else cfg.power_ratio,
                  "gamma_anchor": opt(cfg.gamma_anchor, "time", "none"),
                  "power_d1": None if cfg.power_d1 is None else fq(cfg.power_d1, "power"),
                  "power_d2": None if cfg.power_d2 is None else fq(cfg.power_d2, "power"),
                  "waist": fq(cfg.waist, "length"), "larmor": fq(cfg.larmor, "frequency")},
        "cloud": {"w_perp": fq(cfg.w_perp, "length"), "w_z": fq(cfg.w_z, "length"), "N1": cfg.N1},
        "basis": {"p_max": cfg.p_max, "l_max": cfg.l_max, "n_slices": cfg.n_slices,
                  "n_radial": cfg.n_radial, "n_angular": cfg.n_angular, "prune": cfg.prune},
        "integration": {"dt": opt(cfg.dt, "time", "auto"), "T": fq(cfg.T, "time"),
                        "n_traj": cfg.n_traj, "base_seed": cfg.base_seed},
        "analysis": {"window_T": fq(cfg.window_T, "time"), "T_start": fq(t[0], "time"),
                     "T_stop": fq(t[-1], "time"), "n_T": len(t), "spin_ratio": cfg.spin_ratio,
                     "n_boot": cfg.n_boot},
        "fig2": {"N1_fractions": list(cfg.fig2_fractions), "n_traj": cfg.fig2_n_traj},
        "fig1b": dict(cfg.fig1b),
        "fig1c": {**cfg.fig1c, "T_max": fq(cfg.fig1c["T_max"], "time")},
        "output": {"dir": cfg.out_dir},
    }


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_raw(cfg), sort_keys=True)
