"""Experiment driver for the case studies.

Collects the data batch, runs the online and offline set expansions and the
closed-loop filter, and writes step CSVs, safe-set CSVs and summary JSON
files.  Configuration is a JSON file (see :class:`ExperimentConfig`); paths
inside it are relative to the file.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .consets import FEAS_TOL, BoxSet, Polytope
from .datamat import Trajectory, build_hankel, validate_assumptions
from .filter import (W_OFFLINE, W_ONLINE, AssumptionError, FilterConfig,
                     FilterInfeasible, SafetyFilter, SolverFailure, StepRecord,
                     expand_offline, run_closed_loop)
from .plant import SAMPLING_TIME, DelayedLtiPlant
from .safeset import NOVELTY_TOL, SampledSafeSet, hull_distance

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 2, 3, 4

STEP_COLUMNS = ["t", "seconds", "u_learning", "u_safe", "y", "objective",
                "qp_status", "qp_iters", "n_vertices", "growth_metric"]


class ConfigError(ValueError):
    """The experiment configuration is malformed or inconsistent."""


# -- configuration -----------------------------------------------------------

@dataclass
class PlantSpec:
    A: List[List[float]] = field(default_factory=lambda: [[1.0, -0.1], [0.0, 1.0]])
    B: List[List[float]] = field(default_factory=lambda: [[0.0], [0.1]])
    C: List[List[float]] = field(default_factory=lambda: [[1.0, 0.0]])
    D: Optional[List[List[float]]] = None
    tau_d: int = 1

    def build(self) -> DelayedLtiPlant:
        try:
            return DelayedLtiPlant(self.A, self.B, self.C, self.D, tau_d=self.tau_d)
        except ValueError as exc:
            raise ConfigError(f"plant: {exc}") from exc


@dataclass
class DataSpec:
    n0: int = 200
    excitation: str = "uniform"      # uniform | prbs | constant
    amplitude: float = 1.0
    seed: Optional[int] = None
    path: Optional[str] = None       # load a recorded batch instead


@dataclass
class FilterSpec:
    N: int = 6
    T_ini: int = 3
    eps_reg: float = 1e-8
    feas_tol: float = FEAS_TOL
    novelty_tol: float = NOVELTY_TOL
    insert_tol: float = 1e-9
    n_bar: int = 4
    rank_tol: float = 1e-9
    slack_penalty: float = 1e6

    def build(self) -> FilterConfig:
        try:
            return FilterConfig(N=self.N, T_ini=self.T_ini, eps_reg=self.eps_reg,
                                feas_tol=self.feas_tol, novelty_tol=self.novelty_tol,
                                insert_tol=self.insert_tol, n_bar=self.n_bar,
                                rank_tol=self.rank_tol, slack_penalty=self.slack_penalty)
        except ValueError as exc:
            raise ConfigError(f"filter: {exc}") from exc


@dataclass
class ConstraintSpec:
    u_min: List[float] = field(default_factory=lambda: [-1.0])
    u_max: List[float] = field(default_factory=lambda: [1.0])
    y_min: List[float] = field(default_factory=lambda: [-1.0])
    y_max: List[float] = field(default_factory=lambda: [1.0])

    def build(self):
        try:
            return BoxSet(self.u_min, self.u_max), BoxSet(self.y_min, self.y_max)
        except ValueError as exc:
            raise ConfigError(f"constraints: {exc}") from exc


@dataclass
class LearningSpec:
    kind: str = "sinusoid"           # sinusoid | prbs | constant
    amplitude: float = 1.0
    period: float = 60.0             # steps, sinusoid only
    p_switch: float = 0.5            # per-step switching probability, prbs only
    seed: Optional[int] = None


@dataclass
class RunSpec:
    steps: int = 2000
    online_window: int = W_ONLINE
    offline_window: int = W_OFFLINE
    offline_max_iter: int = 1000
    online_checkpoints: List[int] = field(default_factory=lambda: [0, 200, 500, 2000])
    offline_checkpoints: List[int] = field(default_factory=lambda: [0, 200, 500, 1000])
    safe_set: Optional[str] = None   # vertex CSV for filter-only runs
    study2_t_ini: List[int] = field(default_factory=lambda: [2, 3])
    agreement_steps: int = 500


_SECTIONS = {"plant": PlantSpec, "data": DataSpec, "filter": FilterSpec,
             "constraints": ConstraintSpec, "learning": LearningSpec, "run": RunSpec}


@dataclass
class ExperimentConfig:
    seed: int = 0
    plant: PlantSpec = field(default_factory=PlantSpec)
    data: DataSpec = field(default_factory=DataSpec)
    filter: FilterSpec = field(default_factory=FilterSpec)
    constraints: ConstraintSpec = field(default_factory=ConstraintSpec)
    learning: LearningSpec = field(default_factory=LearningSpec)
    run: RunSpec = field(default_factory=RunSpec)
    output: str = "out"
    base_dir: str = "."

    @classmethod
    def from_dict(cls, raw: Dict[str, Any], base_dir=".") -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - set(_SECTIONS) - {"seed", "output"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in raw:
            raise ConfigError("config must set 'seed'")
        kwargs: Dict[str, Any] = {"seed": raw["seed"], "base_dir": str(base_dir)}
        if "output" in raw:
            kwargs["output"] = raw["output"]
        for name, spec in _SECTIONS.items():
            section = raw.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in fields(spec)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            kwargs[name] = spec(**section)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    def resolve(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # sub-seeds are fixed offsets of the master seed unless set explicitly
    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    @property
    def learning_seed(self) -> int:
        return self.seed + 1 if self.learning.seed is None else self.learning.seed

    @property
    def offline_seed(self) -> int:
        return self.seed + 2

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def validate(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        self.plant.build()
        fcfg = self.filter.build()
        U, Y = self.constraints.build()
        plant = self.plant.build()
        if U.dim != plant.dims.m or Y.dim != plant.dims.p:
            raise ConfigError("constraint dimensions do not match the plant")
        d, l, r = self.data, self.learning, self.run
        if d.excitation not in ("uniform", "prbs", "constant"):
            raise ConfigError(f"unknown excitation {d.excitation!r}")
        if l.kind not in ("sinusoid", "prbs", "constant"):
            raise ConfigError(f"unknown learning signal {l.kind!r}")
        if d.n0 < 1 or r.steps < 1 or r.offline_max_iter < 1:
            raise ConfigError("n0, steps and offline_max_iter must be positive")
        if not 0.0 <= l.p_switch <= 1.0:
            raise ConfigError("p_switch must lie in [0, 1]")
        if l.kind == "sinusoid" and l.period <= 0:
            raise ConfigError("sinusoid period must be positive")
        # signals must stay inside the input box
        lo, hi = np.asarray(self.constraints.u_min), np.asarray(self.constraints.u_max)
        for name, amp in (("data", d.amplitude), ("learning", l.amplitude)):
            if amp < 0 or np.any(amp > hi + 1e-12) or np.any(-amp < lo - 1e-12):
                raise ConfigError(f"{name} amplitude {amp} exceeds the input bounds")
        if any(t < 1 or t >= fcfg.N for t in r.study2_t_ini):
            raise ConfigError("study2_t_ini entries must lie in [1, N)")
        for seed in (self.data.seed, self.learning.seed):
            if seed is not None and (not isinstance(seed, int) or seed < 0):
                raise ConfigError("seeds must be non-negative integers")

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out.pop("base_dir")
        return out


# -- signals -------------------------------------------------------------------

def learning_signal(spec: LearningSpec, steps: int, m: int, seed: int) -> np.ndarray:
    """Exogenous learning input, shape (steps, m)."""
    t = np.arange(steps)
    if spec.kind == "sinusoid":
        u = spec.amplitude * np.sin(2 * np.pi * t / spec.period)
        return np.tile(u[:, None], (1, m))
    if spec.kind == "constant":
        return np.full((steps, m), spec.amplitude)
    return prbs(steps, m, spec.amplitude, spec.p_switch, seed)


def prbs(steps: int, m: int, amplitude: float, p_switch: float, seed: int) -> np.ndarray:
    """Random binary signal in {-amplitude, +amplitude}; each channel flips
    with probability ``p_switch`` per step."""
    rng = np.random.default_rng(seed)
    sign = rng.choice([-1.0, 1.0], size=m)
    flips = rng.random((steps, m)) < p_switch
    flips[0] = False
    signs = sign * np.cumprod(np.where(flips, -1.0, 1.0), axis=0)
    return amplitude * signs


def excitation(spec: DataSpec, U: BoxSet, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    m = U.dim
    lo = np.maximum(U.lo, -spec.amplitude)
    hi = np.minimum(U.hi, spec.amplitude)
    if spec.excitation == "uniform":
        return rng.uniform(lo, hi, size=(spec.n0, m))
    if spec.excitation == "prbs":
        return prbs(spec.n0, m, spec.amplitude, 0.5, seed)
    return np.full((spec.n0, m), 0.5 * (lo + hi) + 0.5 * spec.amplitude)


# -- artifacts -------------------------------------------------------------

def _fmt(v) -> str:
    v = np.atleast_1d(v)
    return ";".join(repr(float(x)) for x in v)


def write_steps_csv(records: Sequence[StepRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for r in records:
            w.writerow([r.t, repr(round(r.t * SAMPLING_TIME, 10)), _fmt(r.u_learning),
                        _fmt(r.u_safe), _fmt(r.y), repr(float(r.objective)),
                        r.qp_status, r.qp_iters, r.n_vertices,
                        repr(float(r.growth_metric))])


def read_steps_csv(path) -> Dict[str, np.ndarray]:
    """Columns of a step CSV; vector cells become rows of 2-D arrays."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out: Dict[str, np.ndarray] = {}
    for col in STEP_COLUMNS:
        cells = [r[col] for r in rows]
        if col == "qp_status":
            out[col] = np.array(cells)
        elif col in ("u_learning", "u_safe", "y"):
            out[col] = np.array([[float(x) for x in c.split(";")] for c in cells])
        else:
            out[col] = np.array(cells, dtype=float)
    return out


def count_violations(path, input_set: Polytope, output_set: Polytope,
                     feas_tol: float) -> int:
    """Rows of a step CSV whose applied input or measured output leaves the
    constraint sets by more than ``feas_tol``."""
    cols = read_steps_csv(path)
    bad = [not (input_set.contains(u, feas_tol) and output_set.contains(y, feas_tol))
           for u, y in zip(cols["u_safe"], cols["y"])]
    return int(sum(bad))


@dataclass
class RunArtifact:
    name: str
    directory: Path
    records: List[StepRecord]
    safe_set: Optional[SampledSafeSet]
    summary: Dict[str, Any]

    @property
    def steps_csv(self) -> Path:
        return self.directory / "steps.csv"


def _summarize(name, directory: Path, records, safe_set, U, Y, feas_tol,
               wall, converged, extra=None) -> RunArtifact:
    directory.mkdir(parents=True, exist_ok=True)
    write_steps_csv(records, directory / "steps.csv")
    if safe_set is not None:
        safe_set.to_csv(directory / "safe_set.csv")
    cols = read_steps_csv(directory / "steps.csv")
    summary = {
        "name": name,
        "steps": len(records),
        "violations": count_violations(directory / "steps.csv", U, Y, feas_tol),
        "max_abs_u": float(np.abs(cols["u_safe"]).max()),
        "max_abs_y": float(np.abs(cols["y"]).max()),
        "all_optimal": bool(np.all(cols["qp_status"] == "optimal")),
        "input_correction": float(np.abs(cols["u_safe"] - cols["u_learning"]).sum()),
        "final_vertices": None if safe_set is None else len(safe_set),
        "wall_time": wall,
        "convergence": converged,
    }
    summary.update(extra or {})
    (directory / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return RunArtifact(name, directory, records, safe_set, summary)


# -- experiment building blocks ------------------------------------------

def collect_data(cfg: ExperimentConfig, out: Optional[Path] = None) -> Trajectory:
    """Excite the plant (or load the configured batch), validate it and
    write ``trajectory.csv``."""
    if cfg.data.path:
        traj = Trajectory.from_csv(cfg.resolve(cfg.data.path))
    else:
        U, _ = cfg.constraints.build()
        plant = cfg.plant.build()
        u = excitation(cfg.data, U, cfg.data_seed)
        traj = Trajectory(u, plant.simulate(u))
    fcfg = cfg.filter.build()
    report = validate_assumptions(traj, fcfg.N, fcfg.T_ini, fcfg.n_bar, fcfg.rank_tol,
                                  depth=fcfg.L)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        traj.to_csv(out / "trajectory.csv")
    if not report.ok:
        raise AssumptionError(report)
    return traj


def _seed_set(cfg: ExperimentConfig, fcfg: FilterConfig, U, Y) -> SampledSafeSet:
    m, p = U.dim, Y.dim
    return SampledSafeSet.from_equilibrium(np.zeros(m), np.zeros(p), fcfg.T_ini, U, Y,
                                           novelty_tol=fcfg.insert_tol,
                                           feas_tol=fcfg.feas_tol)


def run_online(cfg: ExperimentConfig, traj: Trajectory, out: Path, name="online",
               learning=None, expand: bool = True, safe_set=None,
               snapshot_steps: Sequence[int] = (), dump_qp: bool = False) -> RunArtifact:
    """Closed loop on a fresh plant; with ``expand`` the safe set grows
    online until its convergence window triggers."""
    fcfg = cfg.filter.build()
    U, Y = cfg.constraints.build()
    plant = cfg.plant.build()
    if learning is None:
        learning = learning_signal(cfg.learning, cfg.run.steps, plant.dims.m, cfg.learning_seed)
    filt = SafetyFilter.from_data(traj, fcfg, U, Y, safe_set=safe_set)
    t0 = time.perf_counter()
    res = run_closed_loop(filt, plant, learning, expand=expand, window=cfg.run.online_window,
                          snapshot_steps=snapshot_steps,
                          dump_dir=out / "qp" if dump_qp else None)
    wall = time.perf_counter() - t0
    art = _summarize(name, out, res.records, filt.safe_set, U, Y, fcfg.feas_tol, wall,
                     res.converged_at, {"generation": filt.safe_set.generation})
    art.snapshots = res.snapshots
    return art


def run_offline(cfg: ExperimentConfig, traj: Trajectory, out: Optional[Path] = None,
                snapshot_iters: Sequence[int] = ()):
    """Offline set expansion from the equilibrium seed."""
    fcfg = cfg.filter.build()
    U, Y = cfg.constraints.build()
    hk = build_hankel(traj, fcfg.L)
    t0 = time.perf_counter()
    res = expand_offline(hk, fcfg, _seed_set(cfg, fcfg, U, Y), cfg.offline_seed,
                         max_iter=cfg.run.offline_max_iter, window=cfg.run.offline_window,
                         snapshot_iters=snapshot_iters)
    wall = time.perf_counter() - t0
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        res.safe_set.to_csv(out / "safe_set.csv")
        with open(out / "growth.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["iteration", "growth_metric"])
            for k, g in enumerate(res.growth):
                w.writerow([k, repr(float(g))])
        summary = {"iterations": res.iterations, "converged": res.converged,
                   "final_vertices": len(res.safe_set),
                   "generation": res.safe_set.generation, "wall_time": wall}
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return res, wall


def _load_safe_set(cfg: ExperimentConfig, fcfg: FilterConfig, U, Y):
    if not cfg.run.safe_set:
        return None
    return SampledSafeSet.from_csv(cfg.resolve(cfg.run.safe_set), U.dim, Y.dim,
                                   input_set=U, output_set=Y,
                                   novelty_tol=fcfg.insert_tol, feas_tol=fcfg.feas_tol)


def _variant(args):
    """Worker for one terminal-set variant (picklable for process pools)."""
    cfg, traj, run_dir, kind, set_dir = args
    if kind == "equilibrium":
        return run_online(cfg, traj, run_dir, kind, expand=False)
    if kind == "online":
        return run_online(cfg, traj, run_dir, kind, expand=True)
    res, wall = run_offline(cfg, traj, set_dir)
    art = run_online(cfg, traj, run_dir, kind, expand=False, safe_set=res.safe_set)
    art.summary.update(offline_iterations=res.iterations, offline_converged=res.converged,
                       offline_wall_time=wall)
    (art.directory / "summary.json").write_text(json.dumps(art.summary, indent=2) + "\n")
    return art


def _run_variants(jobs: List[tuple], n_jobs: int) -> list:
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_variant, jobs))
    return [_variant(j) for j in jobs]


def run_first_study(cfg: ExperimentConfig, out: Path, n_jobs: int = 1) -> Dict[str, RunArtifact]:
    """Equilibrium, online-expanded and offline-expanded terminal sets under
    the same learning input."""
    traj = collect_data(cfg, out)
    kinds = ["equilibrium", "online", "offline"]
    arts = _run_variants([(cfg, traj, out / k, k, out / "offline_set") for k in kinds],
                         n_jobs)
    result = dict(zip(kinds, arts))
    overview = {k: {key: a.summary[key] for key in
                    ("violations", "max_abs_u", "max_abs_y", "input_correction",
                     "all_optimal", "final_vertices")} for k, a in result.items()}
    (out / "summary.json").write_text(json.dumps(overview, indent=2) + "\n")
    return result


def run_second_study(cfg: ExperimentConfig, out: Path, n_jobs: int = 1) -> Dict[str, Any]:
    """Delay-free plant under a random binary learning input, with the
    offline-expanded filter built for each ``T_ini`` variant."""
    base = replace(cfg, plant=replace(cfg.plant, tau_d=0),
                   learning=replace(cfg.learning, kind="prbs"))
    base.validate()
    jobs, names = [], []
    for T in cfg.run.study2_t_ini:
        vcfg = replace(base, filter=replace(base.filter, T_ini=T))
        name = f"tini{T}"
        traj = collect_data(vcfg, out / name)
        jobs.append((vcfg, traj, out / name / "run", "offline", out / name / "offline_set"))
        names.append(name)
    arts = dict(zip(names, _run_variants(jobs, n_jobs)))
    ys = [read_steps_csv(arts[n].steps_csv)["y"] for n in names]
    us = [read_steps_csv(arts[n].steps_csv)["u_safe"] for n in names]
    diff_y = np.abs(ys[0] - ys[-1]).max(axis=1)
    diff_u = np.abs(us[0] - us[-1]).max(axis=1)
    with open(out / "difference.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "abs_y_diff", "abs_u_diff"])
        for t, (dy, du) in enumerate(zip(diff_y, diff_u)):
            w.writerow([t, repr(float(dy)), repr(float(du))])
    overview = {n: {key: a.summary[key] for key in
                    ("violations", "max_abs_u", "max_abs_y", "all_optimal", "final_vertices")}
                for n, a in arts.items()}
    overview["max_abs_y_difference"] = float(diff_y.max())
    overview["max_abs_u_difference"] = float(diff_u.max())
    (out / "summary.json").write_text(json.dumps(overview, indent=2) + "\n")
    return {"runs": arts, "max_abs_y_difference": float(diff_y.max()),
            "max_abs_u_difference": float(diff_u.max())}


def export_set_snapshots(cfg: ExperimentConfig, out: Path,
                         online_checkpoints: Optional[Sequence[int]] = None,
                         offline_checkpoints: Optional[Sequence[int]] = None) -> Dict[str, Any]:
    """Vertex lists of the online set at the given steps and of the offline
    set at the given iterations, one CSV per checkpoint."""
    on = list(cfg.run.online_checkpoints if online_checkpoints is None else online_checkpoints)
    off = list(cfg.run.offline_checkpoints if offline_checkpoints is None
               else offline_checkpoints)
    for c in [c for c in on if c > cfg.run.steps]:
        warnings.warn(f"online checkpoint {c} is beyond the run length; skipped")
    for c in [c for c in off if c > cfg.run.offline_max_iter]:
        warnings.warn(f"offline checkpoint {c} is beyond the iteration cap; skipped")
    on = sorted(c for c in on if 0 <= c <= cfg.run.steps)
    off = sorted(c for c in off if 0 <= c <= cfg.run.offline_max_iter)
    traj = collect_data(cfg, out)
    art = run_online(cfg, traj, out / "online_run", "online", expand=True,
                     snapshot_steps=on)
    res, _ = run_offline(cfg, traj, out / "offline_run", snapshot_iters=off)
    fcfg = cfg.filter.build()
    U, Y = cfg.constraints.build()
    index = {"online": [], "offline": []}
    for kind, snaps, checkpoints in (("online", art.snapshots, on),
                                     ("offline", res.snapshots, off)):
        final = art.safe_set.vertices if kind == "online" else res.safe_set.vertices
        prev = None
        for c in checkpoints:
            # runs that stop early keep their final set for later checkpoints
            V = snaps.get(c, final)
            s = SampledSafeSet(V, U.dim, Y.dim, feas_tol=fcfg.feas_tol, prune_every=None)
            name = f"{kind}_{'t' if kind == 'online' else 'k'}{c}.csv"
            s.to_csv(out / name)
            nested = None if prev is None else \
                max((hull_distance(V, v) for v in prev), default=0.0)
            index[kind].append({"checkpoint": c, "file": name, "n_vertices": len(V),
                                "max_distance_of_previous": nested})
            prev = V
    index["online_generation"] = art.safe_set.generation
    index["offline_generation"] = res.safe_set.generation
    (out / "snapshots.json").write_text(json.dumps(index, indent=2) + "\n")
    return index


# -- command line -------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddsf", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("collect", "record and validate the data batch"),
                        ("expand-offline", "grow a safe set from the data alone"),
                        ("run-online", "closed loop with online set expansion"),
                        ("run-filter", "closed loop with a fixed safe set"),
                        ("study-1", "equilibrium vs online vs offline terminal sets"),
                        ("study-2", "delay-free plant with two history depths"),
                        ("export-set", "dump safe-set snapshots at checkpoints")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--dump-qp", action="store_true",
                       help="write every assembled QP as Matrix Market files")
        p.add_argument("--jobs", type=int, default=1,
                       help="run independent variants in parallel processes")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else \
        ExperimentConfig.from_dict({"seed": 0})
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        cfg = cfg.with_seed(args.seed)
    return cfg


def _dispatch(args) -> None:
    cfg = _config(args)
    out = args.out if args.out is not None else cfg.resolve(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    fcfg = cfg.filter.build()
    U, Y = cfg.constraints.build()
    cmd = args.command
    if cmd == "collect":
        collect_data(cfg, out)
    elif cmd == "expand-offline":
        run_offline(cfg, collect_data(cfg, out), out)
    elif cmd == "run-online":
        run_online(cfg, collect_data(cfg, out), out, "online", expand=True,
                   safe_set=_load_safe_set(cfg, fcfg, U, Y), dump_qp=args.dump_qp)
    elif cmd == "run-filter":
        run_online(cfg, collect_data(cfg, out), out, "filter", expand=False,
                   safe_set=_load_safe_set(cfg, fcfg, U, Y), dump_qp=args.dump_qp)
    elif cmd == "study-1":
        run_first_study(cfg, out, args.jobs)
    elif cmd == "study-2":
        run_second_study(cfg, out, args.jobs)
    elif cmd == "export-set":
        export_set_snapshots(cfg, out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except (ConfigError, AssumptionError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FilterInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
