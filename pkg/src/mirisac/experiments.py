"""Seeded Monte Carlo sweeps and result files.

A sweep point draws ``trials`` channel realizations from seeds that depend
only on ``(seed, trial)``, so every solver arm and every sweep value sees
the same channels.  Output is a CSV of per-point means and variances plus
a JSON manifest; the CSV carries no timing so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import BoundInconsistencyError, lower_bounds
from .channel import assemble_channels, draw_angles, draw_paths, perturb_csi, perturb_layout
from .metrics import coverage_probability, evaluate, upper_bounds_single
from .multi import Algorithm2Params, InitializationError, fixed_grid_layout, run_algorithm2
from .scene import ConfigError, SceneConfig, dbm_to_watt
from .single import PprInfeasibleError, design_single_user

FAMILIES = ("bounds-sweep", "single-user", "multi-user", "coverage", "tradeoff", "robustness")
SOLVERS = ("algorithm1", "algorithm2", "fixed", "sca", "none")
SWEEPS = ("power_dbm", "N_I", "min_spacing_wl", "pitch_wl", "rate_threshold", "scnr_threshold_db", "delta2",
          "movement_error_wl")


@dataclass
class ExperimentSpec:
    """One sweep.

    ``overrides`` feed :meth:`SceneConfig.from_dict`; ``options`` holds
    family-specific settings such as ``rate_threshold`` (bit/s/Hz) or
    ``pitch_wl`` (grid pitch in wavelengths).
    """

    name: str
    family: str
    sweep: str
    grid: list
    trials: int = 1
    seed: int = 0
    solver: str = "algorithm2"
    overrides: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.sweep not in SWEEPS:
            raise ConfigError(f"unknown sweep variable {self.sweep!r}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        if len(self.grid) == 0:
            raise ConfigError("sweep grid is empty")
        self.grid = sorted(float(v) for v in self.grid)
        self.trials = int(self.trials)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


@dataclass
class ResultRow:
    value: float
    mean: dict
    var: dict
    trials: int
    failures: int
    iterations: float
    wall_time: float = 0.0

    def __post_init__(self):
        if any(v < 0 for v in self.var.values() if np.isfinite(v)):
            raise ValueError("variance must be nonnegative")


def trial_seed(base: int, trial: int, stream: int = 0) -> int:
    """Per-trial seed shared by every sweep value and solver arm."""
    return int(np.random.SeedSequence([int(base), int(trial), int(stream)]).generate_state(1)[0])


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def scene_for(spec: ExperimentSpec, value: float | None = None) -> SceneConfig:
    over = dict(spec.overrides)
    cfg = SceneConfig.from_dict(over)
    if value is None:
        return cfg
    if spec.sweep == "power_dbm":
        cfg = cfg.replace(transmit_power=dbm_to_watt(value))
    elif spec.sweep == "N_I":
        cfg = cfg.replace(N_I=int(value))
    elif spec.sweep == "min_spacing_wl":
        cfg = cfg.replace(min_spacing=value * cfg.wavelength)
    return cfg


def fixed_layout_baseline(config: SceneConfig, pitch: float | None = None):
    """Centred grid at half-wavelength pitch (or ``pitch``) inside the region."""
    return fixed_grid_layout(config.N_I, config.wavelength, config.region_half_width, config.min_spacing, pitch)


def _option(spec, name, value, default):
    if spec.sweep == name and value is not None:
        return value
    return spec.options.get(name, default)


# --------------------------------------------------------------------------
# trials
# --------------------------------------------------------------------------


def _metrics_row(real, beams) -> dict:
    rep = evaluate(real, beams)
    return {
        "scnr": rep.scnr,
        "log10_scnr": rep.sensing_metric,
        "min_rate": float(np.min(rep.rate)),
        "sum_rate": float(np.sum(rep.rate)),
    }


def _algorithm2_params(spec) -> Algorithm2Params:
    positions = {"algorithm2": "mppgd", "fixed": "fixed", "sca": "sca"}[spec.solver]
    p = Algorithm2Params(positions=positions)
    p.max_outer = int(spec.options.get("max_outer", p.max_outer))
    p.phase_starts = int(spec.options.get("phase_starts", p.phase_starts))
    p.mppgd.max_iter = int(spec.options.get("max_inner", p.mppgd.max_iter))
    return p


def _design_multi(spec, cfg, seed, value=None):
    """Returns ``(realization, beams, iterations)`` for the configured arm."""
    pitch = spec.options.get("pitch_wl")
    lay = fixed_layout_baseline(cfg, None if pitch is None else pitch * cfg.wavelength)
    real = assemble_channels(cfg, lay, draw_paths(cfg, seed))
    thr = _option(spec, "rate_threshold", value, 0.5)
    beams, real, trace = run_algorithm2(real, cfg.transmit_power, thr, params=_algorithm2_params(spec))
    return real, beams, trace.n_iter


def _design_single(spec, cfg, seed):
    lay = fixed_layout_baseline(cfg)
    real = assemble_channels(cfg, lay, draw_paths(cfg, seed))
    movable = spec.solver != "fixed"
    beams, real, res = design_single_user(real, cfg.transmit_power, None if movable else lay,
                                          spec.options.get("combiner", "mrc"), trial_seed(spec.seed, seed, 1))
    return real, beams, 0 if res is None else res.n_outer


def run_trial(spec: ExperimentSpec, value: float, trial: int):
    """One sweep point, one trial.  Returns ``(metrics, iterations)`` or None on infeasibility."""
    cfg = scene_for(spec, value)
    seed = trial_seed(spec.seed, trial)
    try:
        if spec.family == "bounds-sweep":
            pitch = _option(spec, "pitch_wl", value, 0.5) * cfg.wavelength
            lay = fixed_layout_baseline(cfg, pitch)
            rep = lower_bounds(cfg, lay, np.ones(cfg.N_I), angles=draw_angles(cfg, seed))
            return {"gamma_s_lb": rep.gamma_s, "M_s_lb": rep.metric_s,
                    "R_c_lb_min": float(np.min(rep.rate_c))}, 0
        if spec.family == "single-user" or spec.solver == "algorithm1":
            real, beams, its = _design_single(spec, cfg, seed)
            m = _metrics_row(real, beams)
            g_s, g_c = upper_bounds_single(cfg, real)
            m.update(scnr_over_bound=m["scnr"] / g_s, sinr_over_bound=float(np.exp2(m["min_rate"]) - 1) / g_c)
            return m, its
        real, beams, its = _design_multi(spec, cfg, seed, value)
        return _metrics_row(real, beams), its
    except (InitializationError, PprInfeasibleError, BoundInconsistencyError):
        return None


def design_trial(spec: ExperimentSpec, trial: int):
    """Robustness and coverage design for one trial; independent of the sweep value.

    Returns ``(realization, beams, iterations, trial)`` or None on infeasibility.
    """
    cfg = scene_for(spec)
    seed = trial_seed(spec.seed, trial)
    try:
        if spec.solver == "algorithm1":
            return (*_design_single(spec, cfg, seed), trial)
        return (*_design_multi(spec, cfg, seed), trial)
    except (InitializationError, PprInfeasibleError):
        return None


def evaluate_robust(spec: ExperimentSpec, design, value: float) -> dict:
    """Metrics of a stored design under the perturbation ``value`` of the sweep."""
    real, beams, _, trial = design
    sub = trial_seed(spec.seed, trial, 2)
    if spec.sweep == "delta2":
        # designed on the estimate, evaluated on estimate + error
        true = perturb_csi(real, value, sub)
        return _metrics_row(true, beams)
    lay = perturb_layout(real.layout, value * real.wavelength, sub)
    return _metrics_row(real.with_layout(lay), beams)


def _point_trials(args):
    spec, value, trial = args
    return run_trial(spec, value, trial)


def _summarize(value, results, wall) -> ResultRow:
    ok = [r for r in results if r is not None]
    keys = list(ok[0][0]) if ok else []
    mean = {k: float(np.mean([m[k] for m, _ in ok])) for k in keys}
    var = {k: float(np.var([m[k] for m, _ in ok], ddof=1)) if len(ok) > 1 else 0.0 for k in keys}
    its = float(np.mean([i for _, i in ok])) if ok else float("nan")
    return ResultRow(float(value), mean, var, len(ok), len(results) - len(ok), its, wall)


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> list:
    """Run every sweep point; rows come back ordered by sweep value."""
    rows = []
    pool = ProcessPoolExecutor(jobs) if jobs > 1 else None
    try:
        mapper = pool.map if pool else map
        if spec.family in ("robustness", "coverage"):
            t0 = time.perf_counter()
            designs = list(mapper(design_trial, [spec] * spec.trials, range(spec.trials)))
            t_design = time.perf_counter() - t0
            if spec.family == "coverage":
                samples = np.array([_metrics_row(d[0], d[1])["scnr"] for d in designs if d is not None])
                its = float(np.mean([d[2] for d in designs if d is not None])) if len(samples) else float("nan")
                for v in spec.grid:
                    cov = coverage_probability(samples, 10 ** (v / 10)) if len(samples) else float("nan")
                    n = len(samples)
                    rows.append(ResultRow(v, {"coverage": cov}, {"coverage": cov * (1 - cov) * n / max(n - 1, 1)},
                                          n, spec.trials - n, its, t_design))
                return rows
            for v in spec.grid:
                t0 = time.perf_counter()
                res = [None if d is None else (evaluate_robust(spec, d, v), d[2]) for d in designs]
                rows.append(_summarize(v, res, t_design + time.perf_counter() - t0))
            return rows
        for v in spec.grid:
            t0 = time.perf_counter()
            res = list(mapper(_point_trials, [(spec, v, t) for t in range(spec.trials)]))
            rows.append(_summarize(v, res, time.perf_counter() - t0))
    finally:
        if pool:
            pool.shutdown()
    return rows


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def emit_results(rows, spec: ExperimentSpec, outdir, fmt: str = "csv") -> tuple:
    """Write ``<name>.csv`` and ``<name>.manifest.json``; returns both paths.

    Floats are written with ``repr`` so the data file is bit-stable; wall
    times go to the manifest only.
    """
    if not rows:
        raise ValueError("no rows to write")
    if fmt != "csv":
        raise ValueError(f"unsupported format {fmt!r}")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    keys = sorted({k for r in rows for k in r.mean})
    data = out / f"{spec.name}.csv"
    with open(data, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([spec.sweep] + [f"{k}_{s}" for k in keys for s in ("mean", "var")]
                   + ["trials", "failures", "iterations"])
        for r in rows:
            vals = []
            for k in keys:
                vals += [repr(float(r.mean.get(k, np.nan))), repr(float(r.var.get(k, np.nan)))]
            w.writerow([repr(r.value)] + vals + [r.trials, r.failures, repr(float(r.iterations))])
    manifest = out / f"{spec.name}.manifest.json"
    manifest.write_text(json.dumps({
        "spec": spec.to_dict(),
        "spec_sha256": spec.digest(),
        "seed": spec.seed,
        "version": __version__,
        "data_file": data.name,
        "data_sha256": hashlib.sha256(data.read_bytes()).hexdigest(),
        "wall_time_s": [r.wall_time for r in rows],
    }, indent=2, sort_keys=True))
    return data, manifest
