"""Config-driven experiment runner and command line.

A run is described by a JSON document::

    {
      "protocol":    {"model": "tfim", "h_initial": 0.0, "h_final": 10.0, "beta": 1.0},
      "dissipation": {"kind": "natural", "gamma_plus": 0.1, "gamma_minus": 1.0},
      "grid":        {"half_count": 500, "t_max": 1.2, "steps": 1200,
                      "k_convention": "antiperiodic"},
      "analyses":    ["rate", "dtop"],
      "output":      {"directory": "fig2a"},
      "refinement":  {"levels": 1}
    }

``dissipation.kind`` is "none", "natural" or "engineered".  Engineered runs take
``family``, ``kappa_initial``, ``kappa_final`` and optional natural rates; the
Hamiltonian fields are then ignored (the dynamics is purely dissipative).
``analyses`` is a subset of rate, dtop, winding, baselines.  Unknown keys are
rejected.

Verbs::

    mixed-dqpt run CONFIG [--out DIR]
    mixed-dqpt preset NAME [--out DIR] [--refine N]
    mixed-dqpt list-presets
    mixed-dqpt validate CONFIG

Exit status is 0 on success, 2 for configuration errors and 3 when a numerical
contract is violated.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .amplitude import (KINK_WIDTH, confirm_cusps, fidelity_series,
                        find_cusp_candidates, gloa_series, interferometric_series,
                        mode_gloa_from_trajectory, total_rate_function)
from .errors import ConfigError, NoCriticalMode, NumericalContractError
from .evolution import ENGINEERED_FAMILIES, DissipationSpec, TimeGrid, evolve_protocol
from .model import QuenchProtocol, TwoBandModel, make_k_grid
from .topology import critical_times, dtop_series, unitary_bloch, winding_series

ANALYSES = ("rate", "dtop", "winding", "baselines")
MAX_LEVELS = 6
DELTA_FLOOR = 1e-9

_SCHEMA = {
    "protocol": {"model": str, "h_initial": float, "h_final": float, "beta": float},
    "dissipation": {"kind": str, "gamma_plus": float, "gamma_minus": float,
                    "family": str, "kappa_initial": float, "kappa_final": float},
    "grid": {"half_count": int, "t_max": float, "steps": int, "k_convention": str},
    "analyses": list,
    "output": {"directory": str},
    "refinement": {"levels": int},
}
_REQUIRED = {"protocol": ("beta",), "grid": ("half_count", "t_max", "steps")}


# ------------------------------------------------------------------ config

def _number(section, key, value, kind):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        return int(value)
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{section}.{key} must be finite")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, canonical experiment description."""

    model: str = "tfim"
    h_initial: float = 0.0
    h_final: float = 0.0
    beta: float = 1.0
    dissipation: str = "none"
    gamma_plus: float = 0.0
    gamma_minus: float = 0.0
    family: str = "kitaev"
    kappa_initial: float = 0.0
    kappa_final: float = 0.0
    half_count: int = 200
    t_max: float = 1.0
    steps: int = 1000
    k_convention: str = "antiperiodic"
    analyses: tuple = ("rate",)
    directory: str = "results"
    levels: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping of sections")
        unknown = set(data) - set(_SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        for sec, keys in _REQUIRED.items():
            if sec not in data:
                raise ConfigError(f"missing config section {sec!r}")
            missing = [k for k in keys if k not in data[sec]]
            if missing:
                raise ConfigError(f"{sec} is missing {missing}")
        kw = {}
        for sec, spec in _SCHEMA.items():
            if sec not in data:
                continue
            body = data[sec]
            if sec == "analyses":
                if not isinstance(body, list) or not body:
                    raise ConfigError("analyses must be a non-empty list")
                bad = [a for a in body if a not in ANALYSES]
                if bad:
                    raise ConfigError(f"unknown analyses {bad}; choose from {list(ANALYSES)}")
                if len(set(body)) != len(body):
                    raise ConfigError("analyses lists an entry twice")
                kw["analyses"] = tuple(a for a in ANALYSES if a in body)
                continue
            if not isinstance(body, dict):
                raise ConfigError(f"section {sec!r} must be a mapping")
            unknown = set(body) - set(spec)
            if unknown:
                raise ConfigError(f"unknown key(s) in {sec}: {sorted(unknown)}")
            for key, value in body.items():
                kind = spec[key]
                if kind is str:
                    if not isinstance(value, str):
                        raise ConfigError(f"{sec}.{key} must be a string")
                else:
                    value = _number(sec, key, value, kind)
                name = {"model": "model", "kind": "dissipation"}.get(key, key)
                kw[name] = value
        cfg = cls(**kw)
        cfg.check()
        return cfg

    def check(self):
        if self.model != "tfim":
            raise ConfigError(f"unknown model family {self.model!r}; only 'tfim' is built in")
        if self.dissipation not in ("none", "natural", "engineered"):
            raise ConfigError(f"unknown dissipation kind {self.dissipation!r}")
        if self.gamma_plus < 0 or self.gamma_minus < 0:
            raise ConfigError("dissipation rates must be nonnegative")
        if self.dissipation == "natural" and self.gamma_plus == 0 and self.gamma_minus == 0:
            raise ConfigError("natural dissipation needs a nonzero rate")
        if self.dissipation == "none" and (self.gamma_plus or self.gamma_minus):
            raise ConfigError("rates given but dissipation.kind is 'none'")
        if self.dissipation == "engineered" and self.family not in ENGINEERED_FAMILIES:
            raise ConfigError(f"unknown engineered family {self.family!r}")
        if self.half_count < 2:
            raise ConfigError("grid.half_count must be >= 2")
        if self.steps < 4 * KINK_WIDTH:
            raise ConfigError(f"grid.steps must be >= {4 * KINK_WIDTH}")
        if not self.t_max > 0:
            raise ConfigError("grid.t_max must be positive")
        if self.k_convention not in ("antiperiodic", "uniform"):
            raise ConfigError(f"unknown k_convention {self.k_convention!r}")
        if not 0 <= self.levels <= MAX_LEVELS:
            raise ConfigError(f"refinement.levels must be in [0, {MAX_LEVELS}]")
        if not self.directory:
            raise ConfigError("output.directory must be non-empty")

    def to_dict(self) -> dict:
        diss = {"kind": self.dissipation}
        if self.dissipation != "none":
            diss.update(gamma_plus=self.gamma_plus, gamma_minus=self.gamma_minus)
        if self.dissipation == "engineered":
            diss.update(family=self.family, kappa_initial=self.kappa_initial,
                        kappa_final=self.kappa_final)
        return {
            "protocol": {"model": self.model, "h_initial": self.h_initial,
                         "h_final": self.h_final, "beta": self.beta},
            "dissipation": diss,
            "grid": {"half_count": self.half_count, "t_max": self.t_max,
                     "steps": self.steps, "k_convention": self.k_convention},
            "analyses": list(self.analyses),
            "output": {"directory": self.directory},
            "refinement": {"levels": self.levels},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        data = {**self.__dict__, **changes}
        cfg = ExperimentConfig(**data)
        cfg.check()
        return cfg

    # -- domain objects

    def protocol(self) -> QuenchProtocol:
        spec = None
        if self.dissipation == "natural":
            spec = DissipationSpec.natural(self.gamma_plus, self.gamma_minus)
        elif self.dissipation == "engineered":
            spec = DissipationSpec.engineered(self.kappa_final, self.kappa_initial, self.family,
                                              self.gamma_plus, self.gamma_minus)
        return QuenchProtocol(TwoBandModel.tfim(self.h_initial), TwoBandModel.tfim(self.h_final),
                              self.beta, spec)

    def k_grid(self):
        return make_k_grid(self.half_count, self.k_convention)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.t_max, self.steps)


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(data)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# ----------------------------------------------------------------- presets

_FIG2_PAIRS = {"a": (0.1, 1.0), "b": (1.0, 0.1), "c": (1.0, 10.0), "d": (10.0, 1.0)}


def _base(**kw):
    cfg = {
        "protocol": {"model": "tfim", "h_initial": 0.0, "h_final": 10.0, "beta": 1.0},
        "dissipation": {"kind": "none"},
        "grid": {"half_count": 1000, "t_max": 1.2, "steps": 4000},
        "analyses": ["rate", "dtop"],
        "output": {"directory": "results"},
        "refinement": {"levels": 1},
    }
    for sec, body in kw.items():
        if isinstance(body, dict):
            cfg[sec] = {**cfg[sec], **body}
        else:
            cfg[sec] = body
    return cfg


def _catalogue():
    out = {}
    for name, beta in (("fig1a", 1.0), ("fig1b", -1.0)):
        out[name] = (f"unitary quench h 0 -> 10 at beta = {beta:g}, GLOA vs baselines",
                     _base(protocol={"beta": beta}, analyses=["rate", "dtop", "baselines"]))
    grid = {"half_count": 500, "t_max": 1.2, "steps": 1200}
    for fig, h_i, what in (("fig2", 0.0, "quench h 0 -> 10"),
                           ("fig3", 10.0, "same-phase quench h 10 -> 10")):
        for letter, (gp, gm) in _FIG2_PAIRS.items():
            diss = {"kind": "natural", "gamma_plus": gp, "gamma_minus": gm}
            out[fig + letter] = (
                f"{what} at beta = 1 with natural dissipation gamma+ = {gp:g}, gamma- = {gm:g}",
                _base(protocol={"h_initial": h_i}, dissipation=diss, grid=grid,
                      analyses=["rate"]))
    eng = {"kind": "engineered", "family": "kitaev", "kappa_initial": 0.0, "kappa_final": 10.0}
    fast = {"half_count": 200, "t_max": 0.012, "steps": 600}
    out["fig4a"] = ("engineered dissipation kappa 0 -> 10, built-in family "
                    "u = sin k, v = kappa - cos k (substitute benchmark)",
                    _base(protocol={"h_final": 0.0}, dissipation=eng, grid=fast,
                          analyses=["rate", "dtop", "winding"]))
    out["fig4b"] = ("engineered dissipation kappa 0 -> 10, built-in family normalized "
                    "to unit rate (substitute benchmark)",
                    _base(protocol={"h_final": 0.0},
                          dissipation={**eng, "family": "kitaev_normalized"},
                          grid={"half_count": 500, "t_max": 1.5, "steps": 150},
                          analyses=["rate", "dtop", "winding"]))
    out["fig4c"] = ("engineered dissipation kappa 0 -> 10, built-in family plus weak "
                    "natural dissipation gamma+ = gamma- = 0.1 (substitute benchmark)",
                    _base(protocol={"h_final": 0.0},
                          dissipation={**eng, "gamma_plus": 0.1, "gamma_minus": 0.1},
                          grid=fast, analyses=["rate", "dtop", "winding"]))
    out["identity"] = ("null quench h 10 -> 10 at beta = 1 (rate function vanishes)",
                       _base(protocol={"h_initial": 10.0, "h_final": 10.0},
                             grid={"half_count": 200, "t_max": 1.2, "steps": 1200},
                             analyses=["rate", "dtop", "winding"]))
    for name, (_, cfg) in out.items():
        cfg["output"]["directory"] = name
    return out


PRESETS = _catalogue()


def list_presets() -> list:
    """(name, description, canonical config dict) for every preset."""
    return [(name, desc, preset_config(name).to_dict()) for name, (desc, _) in PRESETS.items()]


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; see list-presets")
    return ExperimentConfig.from_dict(copy.deepcopy(PRESETS[name][1]))


# ----------------------------------------------------------------- results

def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if x == 0.0:
        return "0"
    return f"{x:.17g}"


@dataclass
class ResultTable:
    """Columns over ascending t, with a metadata header and detected cusps."""

    columns: tuple
    data: np.ndarray
    metadata: dict
    cusps: list = field(default_factory=list)
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != len(self.columns):
            raise ValueError("table data does not match its column schema")
        if self.data.shape[0] > 1 and np.any(np.diff(self.data[:, 0]) <= 0):
            raise ValueError("rows must be in ascending t")

    def column(self, name) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def to_csv(self, columns=None) -> str:
        cols = list(self.columns) if columns is None else list(columns)
        idx = [self.columns.index(c) for c in cols]
        lines = [f"# {k}: {self.metadata[k]}" for k in sorted(self.metadata)]
        lines.append(",".join(cols))
        lines.extend(",".join(_fmt(v) for v in row) for row in self.data[:, idx])
        return "\n".join(lines) + "\n"

    def cusps_csv(self) -> str:
        lines = [f"# {k}: {self.metadata[k]}" for k in sorted(self.metadata)]
        lines.append("series,time,score,confirmed,ratios")
        for c in self.cusps:
            ratios = " ".join(_fmt(r) for r in c["ratios"])
            lines.append(f"{c['series']},{_fmt(c['time'])},{_fmt(c['score'])},"
                         f"{int(c['confirmed'])},{ratios}")
        return "\n".join(lines) + "\n"

    def write(self, directory) -> dict:
        """Write one CSV per analysis, the cusp list and a manifest.  Returns the manifest."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        files = {}
        for name, cols in self.groups.items():
            fname = f"{name}.csv"
            (out / fname).write_text(self.to_csv(("t",) + tuple(cols)))
            files[name] = fname
        (out / "cusps.csv").write_text(self.cusps_csv())
        files["cusps"] = "cusps.csv"
        manifest = {"config_hash": self.metadata["config_hash"],
                    "version": self.metadata["version"], "files": files,
                    "confirmed_cusps": [c["time"] for c in self.cusps
                                        if c["confirmed"] and c["series"] == "g"]}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


class _RateCache:
    """Rate functions of one config on refined time grids, computed once each."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.protocol = config.protocol()
        self.kgrid = config.k_grid()
        self.store = {}

    def rate(self, grid: TimeGrid, trajectory=False):
        key = grid.steps
        if key not in self.store:
            p = self.protocol
            if p.unitary:
                series, bloch = gloa_series(p, self.kgrid.points, grid), None
            else:
                traj = evolve_protocol(p, self.kgrid.points, grid)
                series, bloch = mode_gloa_from_trajectory(traj), traj.bloch
            self.store[key] = (series, total_rate_function(series, L=self.kgrid.L), bloch)
        return self.store[key]


def _cusps(cache: _RateCache, grid: TimeGrid, levels: int):
    series, rate, _ = cache.rate(grid)
    out = []
    signals = [("g", lambda g: cache.rate(g)[1].rate, rate.rate)]
    if not cache.protocol.unitary:
        signals.append(("dg_dt", lambda g: cache.rate(g)[1].derivative, rate.derivative))
    for name, compute, base in signals:
        if levels > 0:
            cands = confirm_cusps(compute, grid, levels, base_values=base)
        else:
            cands = find_cusp_candidates(grid.times, base)
        out.extend({"series": name, "time": c.time, "score": c.score, "ratios": list(c.ratios),
                    "confirmed": bool(c.confirmed)} for c in cands)
    return out


def run_experiment(config: ExperimentConfig, out_dir=None, write: bool = True) -> ResultTable:
    """Run the full pipeline for ``config`` and optionally write its files.

    Columns: t, g, dg_dt, then nu_d (dtop), nu, nu_raw, min_spin_norm
    (winding) and g_fidelity, g_interferometric (baselines; the latter for
    unitary protocols only).
    """
    cache = _RateCache(config)
    protocol, kgrid, grid = cache.protocol, cache.kgrid, config.time_grid()
    series, rate, bloch = cache.rate(grid)
    cusps = _cusps(cache, grid, config.levels)

    cols = {"t": grid.times, "g": rate.rate, "dg_dt": rate.derivative}
    groups = {"rate": ("g", "dg_dt")}
    crit = []
    if protocol.unitary:
        try:
            crit = [t for mode in critical_times(protocol, n_max=64) for t in mode.times
                    if t <= config.t_max]
        except NoCriticalMode:
            crit = []
    if "dtop" in config.analyses:
        near = crit + [c["time"] for c in cusps]
        cols["nu_d"] = dtop_series(series, critical=near, window_cells=2).nu_d
        groups["dtop"] = ("nu_d",)
    if "winding" in config.analyses:
        if bloch is None:
            bloch = unitary_bloch(protocol, kgrid.points, grid.times)
        nu, raw, mins = winding_series(kgrid.points, bloch)
        cols.update(nu=nu, nu_raw=raw, min_spin_norm=mins)
        groups["winding"] = ("nu", "nu_raw", "min_spin_norm")
    if "baselines" in config.analyses:
        fid = fidelity_series(protocol, kgrid.points, grid)
        cols["g_fidelity"] = total_rate_function(fid, L=kgrid.L).rate
        base = ["g_fidelity"]
        if protocol.unitary:
            inter = interferometric_series(protocol, kgrid.points, grid)
            cols["g_interferometric"] = total_rate_function(inter, L=kgrid.L).rate
            base.append("g_interferometric")
        groups["baselines"] = tuple(base)

    meta = {"config_hash": config.hash, "version": __version__,
            "half_count": kgrid.half_count, "L": kgrid.L, "k_convention": kgrid.convention,
            "t_max": _fmt(config.t_max), "steps": config.steps, "dt": _fmt(grid.dt),
            "refinement_levels": config.levels}
    names = tuple(cols)
    table = ResultTable(names, np.column_stack([cols[n] for n in names]), meta, cusps, groups)
    if write:
        table.write(config.directory if out_dir is None else out_dir)
    return table


@dataclass
class RefinementReport:
    steps: list
    cusps: list
    max_delta: list
    non_convergent: bool

    def to_dict(self):
        return {"steps": self.steps, "cusps": self.cusps, "max_delta": self.max_delta,
                "non_convergent": self.non_convergent}


def refinement_study(config: ExperimentConfig, levels: int) -> RefinementReport:
    """Rerun ``config`` with the time grid doubled ``levels - 1`` times.

    Reports the growth ratios of every cusp candidate of the coarsest grid and
    max |g_l - g_{l+1}| on the coarse times away from those candidates.  The
    study is flagged non-convergent if that difference does not shrink at
    least 2x per level (differences below 1e-9 count as converged).
    """
    if levels < 2:
        raise ConfigError("a refinement study needs levels >= 2")
    cache = _RateCache(config)
    grid = config.time_grid()
    grids = [grid]
    for _ in range(levels - 1):
        grids.append(grids[-1].refined(2))
    cusps = _cusps(cache, grid, levels - 1)
    cusp_times = np.array([c["time"] for c in cusps if c["series"] == "g"])
    deltas = []
    for lo, hi in zip(grids[:-1], grids[1:]):
        g_lo = cache.rate(lo)[1].rate
        g_hi = cache.rate(hi)[1].rate[::2]
        keep = np.ones(lo.times.size, dtype=bool)
        for t in cusp_times:
            keep &= np.abs(lo.times - t) > (KINK_WIDTH + 1) * lo.dt
        deltas.append(float(np.max(np.abs(g_lo - g_hi)[keep])) if np.any(keep) else 0.0)
    bad = any(a > DELTA_FLOOR and b > a / 2 for a, b in zip(deltas[:-1], deltas[1:]))
    return RefinementReport([g.steps for g in grids], cusps, deltas, bad)


# --------------------------------------------------------------------- CLI

def _summary(table: ResultTable, out) -> str:
    confirmed = [c["time"] for c in table.cusps if c["confirmed"] and c["series"] == "g"]
    lines = [f"wrote {out}", f"config hash {table.metadata['config_hash'][:16]}",
             "confirmed cusps in g: " + (", ".join(f"{t:.6f}" for t in confirmed) or "none")]
    other = [c["time"] for c in table.cusps if c["confirmed"] and c["series"] == "dg_dt"]
    if other:
        lines.append("confirmed kinks in dg/dt: " + ", ".join(f"{t:.6f}" for t in other))
    return "\n".join(lines)


def _execute(config: ExperimentConfig, out, study_levels=0):
    out = config.directory if out is None else out
    table = run_experiment(config, out_dir=out)
    print(_summary(table, out))
    if study_levels >= 2:
        report = refinement_study(config, study_levels)
        (Path(out) / "refinement.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        print(f"refinement study: max |dg| per level {report.max_delta}, "
              f"non-convergent: {report.non_convergent}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixed-dqpt", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)
    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides output.directory)")
    pre = sub.add_parser("preset", help="run a figure-reproduction preset")
    pre.add_argument("name")
    pre.add_argument("--out")
    pre.add_argument("--refine", type=int, metavar="N",
                     help="cusp-confirmation levels; N >= 2 also writes a refinement study")
    sub.add_parser("list-presets", help="list the preset catalogue")
    val = sub.add_parser("validate", help="check a config and print its canonical form")
    val.add_argument("config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "list-presets":
            for name, desc, _ in list_presets():
                print(f"{name:10s} {desc}")
        elif args.verb == "validate":
            sys.stdout.write(load_config(args.config).to_json())
        elif args.verb == "run":
            _execute(load_config(args.config), args.out)
        elif args.verb == "preset":
            cfg = preset_config(args.name)
            if args.refine is not None:
                cfg = cfg.replace(levels=args.refine)
            _execute(cfg, args.out, cfg.levels)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalContractError as exc:
        print(f"numerical contract violated ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
