"""Benchmark harness: paired trials, CSV tables, and the decay check.

A benchmark run draws ``trials`` independent instances of one experiment.
Within a trial every method and every ensemble size sees the same instance
and the same initial particles (smaller ensembles take a prefix of the
largest one), so comparisons are paired. A trial is labeled a success when
the solver's objective is within ``success_rel_tol`` of the reference value
relatively; the reference is a proximal-gradient run started at the ground
truth.

Trials are independent and may run in a process pool; rows are keyed and
sorted by (experiment, method, n_particles, trial, metric_name), so the
output tables are byte-identical for any worker count. Wall-clock times are
recorded only when ``timing`` is enabled, because timings would break that
reproducibility.
"""

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context

import numpy as np

from . import prox as _prox
from . import seeding
from .consensus import ParticleEnsemble
from .errors import ConfigError, DivergenceError
from .objectives import lidar_objective, onebit_objective, quadratic_objective
from .simulate import ExperimentSpec, crb, generate, lidar_pulse_train
from .solvers import SolverConfig, pg_step, proxicbo_step, solve

log = logging.getLogger(__name__)

#: column order of the per-trial table, fixed
TRIAL_COLUMNS = ("experiment", "method", "n_particles", "trial", "seed",
                 "success", "obj", "obj_ref", "metric_name", "metric_value",
                 "wall_ms")

AGGREGATE_COLUMNS = ("experiment", "method", "n_particles", "stat_name",
                     "stat_value")

_METHOD_TAG = 7
_GRID_TAG = 11


@dataclass
class TrialRecord:
    """One row of the per-trial output table."""

    experiment: str
    method: str
    n_particles: int
    trial: int
    seed: int
    success: int
    obj: float
    obj_ref: float
    metric_name: str
    metric_value: float
    wall_ms: int

    def row(self):
        return [self.experiment, self.method, str(self.n_particles),
                str(self.trial), str(self.seed), str(self.success),
                repr(float(self.obj)), repr(float(self.obj_ref)),
                self.metric_name, repr(float(self.metric_value)),
                str(self.wall_ms)]


@dataclass
class BenchConfig:
    """Everything a benchmark run needs; see ``configs/`` for examples."""

    experiment: ExperimentSpec
    methods: list = field(default_factory=lambda: ["proxicbo", "cbo", "pg", "apg"])
    particle_grid: list = field(default_factory=lambda: [10, 100, 1000])
    trials: int = 100
    master_seed: int = 1
    solver: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    init: dict = field(default_factory=lambda: {"kind": "normal"})
    bounds: dict = field(default_factory=dict)
    scales: list = None
    tv: dict = field(default_factory=dict)
    success_rel_tol: float = 1e-3
    divergence_limit: float = 0.1
    workers: int = 1
    timing: bool = False
    plots: bool = True

    def __post_init__(self):
        if isinstance(self.experiment, dict):
            self.experiment = ExperimentSpec.from_config(self.experiment)
        from .solvers import METHODS
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if not self.methods or not self.particle_grid:
            raise ConfigError("methods and particle_grid must be nonempty")
        if any(int(n) < 1 for n in self.particle_grid):
            raise ConfigError("particle counts must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not (0.0 <= self.divergence_limit <= 1.0):
            raise ConfigError("divergence_limit must be in [0, 1]")

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        known = set(cls.__dataclass_fields__)
        extra = set(cfg) - known
        if extra:
            raise ConfigError(f"unknown benchmark fields: {sorted(extra)}")
        return cls(**cfg)

    def to_config(self):
        out = asdict(self)
        out["experiment"] = self.experiment.to_config()
        return out


def build_objective(cfg, model):
    """The composite objective for a generated instance of ``cfg.experiment``."""
    kind = cfg.experiment.kind
    if kind == "onebit-sparse":
        return onebit_objective(model, _prox.L1(model.reg_weight))
    if kind == "onebit-image":
        tv = dict(cfg.tv)
        g = _prox.TvBox(model.reg_weight, cfg.experiment.height,
                        cfg.experiment.width, 0.0, 1.0,
                        isotropic=tv.get("isotropic", False),
                        inner_iters=tv.get("inner_iters", 100),
                        inner_tol=tv.get("inner_tol", 1e-6))
        return onebit_objective(model, g, label="onebit-image")
    lower = np.asarray(cfg.bounds["lower"], dtype=float)
    upper = np.asarray(cfg.bounds["upper"], dtype=float)
    return lidar_objective(model, lower, upper, scales=cfg.scales)


def draw_init(cfg, objective, n, rng):
    """Initial ensemble in solver coordinates, shared across methods."""
    kind = cfg.init.get("kind", "normal")
    if kind == "normal":
        return cfg.init.get("std", 1.0) * rng.standard_normal((n, objective.dim))
    if kind == "uniform":
        lower = np.broadcast_to(np.asarray(cfg.init["lower"], dtype=float),
                                (objective.dim,))
        upper = np.broadcast_to(np.asarray(cfg.init["upper"], dtype=float),
                                (objective.dim,))
        ext = rng.uniform(lower, upper, size=(n, objective.dim))
        return ext / objective.scales
    raise ConfigError(f"unknown init kind {kind!r}")


def reference_minimizer(objective, start, mu, stop_tol=1e-10, max_iters=100000):
    """Proximal gradient from ``start`` until successive objective values
    differ by at most ``stop_tol``.

    Returns ``(point, value, converged, iterations)``; ``converged`` is False
    when the objective gap never fell below ``stop_tol`` within the cap.
    """
    x = np.asarray(start, dtype=float)[None, :].copy()
    value = float(np.asarray(objective.value(x[0])))
    converged = False
    iterations = 0
    for k in range(1, max_iters + 1):
        x = pg_step(x, objective, mu)
        new_value = float(np.asarray(objective.value(x[0])))
        iterations = k
        if abs(value - new_value) <= stop_tol:
            value = new_value
            converged = True
            break
        value = new_value
    return x[0], value, converged, iterations


def _solver_config(cfg, method, n, seed):
    params = dict(cfg.solver.get("common", {}))
    params.update(cfg.solver.get(method, {}))
    params["method"] = method
    params["n_particles"] = int(n)
    params["seed"] = int(seed)
    try:
        return SolverConfig(**params)
    except TypeError as err:
        raise ConfigError(f"bad solver parameters for {method}: {err}") from None


def _derived_seed(master, *path):
    return int(seeding.seed_sequence(master, *path).generate_state(1)[0])


def _success(obj_value, obj_ref, rel_tol):
    if not math.isfinite(obj_value) or not math.isfinite(obj_ref):
        return 0
    gap = (obj_value - obj_ref) / max(abs(obj_ref), 1e-12)
    return int(gap < rel_tol)


def _digest_arrays(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def snr_db(x_true, x_hat):
    """10 log10( ||x_true||^2 / ||x_hat - x_true||^2 )."""
    err = float(np.sum((x_hat - x_true) ** 2))
    sig = float(np.sum(x_true ** 2))
    return 10.0 * math.log10(sig / max(err, 1e-300))


def run_trial(cfg, trial):
    """All solves of one trial; returns (records, meta)."""
    spec = cfg.experiment
    model, truth = generate(spec, seeding.derive_rng(
        cfg.master_seed, seeding.MEASUREMENT, trial))
    objective = build_objective(cfg, model)
    z_truth = objective.from_external(truth)

    ref_cfg = dict(cfg.reference)
    mu_ref = ref_cfg.get("mu", cfg.solver.get("common", {}).get("mu", 1e-3))
    z_ref, obj_ref, ref_ok, ref_iters = reference_minimizer(
        objective, z_truth, mu_ref,
        stop_tol=ref_cfg.get("stop_tol", 1e-10),
        max_iters=ref_cfg.get("max_iters", 100000))
    if not ref_ok:
        obj_ref = float("nan")

    n_max = max(int(n) for n in cfg.particle_grid)
    init_full = draw_init(cfg, objective,
                          n_max, seeding.derive_rng(cfg.master_seed,
                                                    seeding.INIT, trial))
    trial_seed = _derived_seed(cfg.master_seed, trial)

    lidar = spec.kind in ("lidar", "doppler")
    param_names = ["s", "b", "tau", "v"][:objective.dim] if lidar else None

    records = []
    diverged = 0
    for mi, method in enumerate(cfg.methods):
        for n in cfg.particle_grid:
            n = int(n)
            seed = _derived_seed(cfg.master_seed, trial, _METHOD_TAG, mi,
                                 _GRID_TAG, n)
            scfg = _solver_config(cfg, method, n, seed)
            started = time.perf_counter()
            try:
                result = solve(objective, scfg, init_positions=init_full[:n])
                obj_value = result.objective_value
                estimate = objective.to_external(result.estimate)
            except DivergenceError as err:
                log.warning("trial %d: %s", trial, err)
                diverged += 1
                obj_value = float("nan")
                estimate = np.full(objective.dim, np.nan)
            wall = int(round(1e3 * (time.perf_counter() - started))) \
                if cfg.timing else 0
            success = _success(obj_value, obj_ref, cfg.success_rel_tol) \
                if ref_ok else 0
            common = dict(experiment=spec.kind, method=method, n_particles=n,
                          trial=trial, seed=trial_seed, success=success,
                          obj=obj_value, obj_ref=obj_ref, wall_ms=wall)
            if lidar:
                for j, name in enumerate(param_names):
                    records.append(TrialRecord(
                        metric_name=f"err_{name}",
                        metric_value=float(estimate[j] - truth[j]), **common))
            else:
                records.append(TrialRecord(
                    metric_name="snr_db",
                    metric_value=snr_db(truth, estimate), **common))
    meta = {
        "trial": trial,
        "instance_digest": _digest_arrays(
            *(arr for arr in ([model.A, model.y, model.u] if not lidar
                              else [model.pulse_times, model.detections]))),
        "init_digest": _digest_arrays(init_full),
        "ref_converged": bool(ref_ok),
        "ref_iterations": ref_iters,
        "diverged_solves": diverged,
    }
    return records, meta


def _run_trial_star(args):
    return run_trial(*args)


@dataclass
class BenchSummary:
    records: list
    aggregates: list
    n_ref_failed: int
    divergence_fraction: float
    meta: list


def run_benchmark(cfg):
    """Run all trials of a benchmark and aggregate; no files are written."""
    jobs = [(cfg, t) for t in range(cfg.trials)]
    if cfg.workers == 1:
        outputs = [run_trial(cfg, t) for t in range(cfg.trials)]
    else:
        with get_context("spawn").Pool(cfg.workers) as pool:
            outputs = pool.map(_run_trial_star, jobs, chunksize=1)
    outputs.sort(key=lambda pair: pair[1]["trial"])
    records = [r for recs, _ in outputs for r in recs]
    records.sort(key=lambda r: (r.experiment, r.method, r.n_particles,
                                r.trial, r.metric_name))
    meta = [m for _, m in outputs]
    n_ref_failed = sum(not m["ref_converged"] for m in meta)
    total_solves = cfg.trials * len(cfg.methods) * len(cfg.particle_grid)
    diverged = sum(m["diverged_solves"] for m in meta)
    aggregates = _aggregate(cfg, records)
    return BenchSummary(records=records, aggregates=aggregates,
                        n_ref_failed=n_ref_failed,
                        divergence_fraction=diverged / total_solves,
                        meta=meta)


def _aggregate(cfg, records):
    lidar = cfg.experiment.kind in ("lidar", "doppler")
    crb_named = {}
    if lidar:
        from .objectives import LidarModel
        from .simulate import lidar_truth
        spec = cfg.experiment
        model = LidarModel(lidar_pulse_train(spec), np.empty(0), spec.t_a,
                           pulse_sigma=spec.pulse_sigma,
                           doppler=spec.kind == "doppler")
        bound = crb(model, lidar_truth(spec))
        names = ["s", "b", "tau", "v"][:model.dim]
        crb_named = dict(zip(names, bound.sqrt_crb))

    rows = []
    groups = {}
    for r in records:
        groups.setdefault((r.experiment, r.method, r.n_particles),
                          []).append(r)
    for (exp, method, n), recs in sorted(groups.items()):
        valid = [r for r in recs if math.isfinite(r.obj_ref)]
        per_trial = {}
        for r in valid:
            per_trial.setdefault(r.trial, []).append(r)
        trials = sorted(per_trial)
        stats = {}
        stats["n_trials"] = float(len({r.trial for r in recs}))
        stats["n_ref_failed"] = float(len({r.trial for r in recs})
                                      - len(trials))
        stats["n_diverged"] = float(sum(1 for t in trials
                                        if not math.isfinite(
                                            per_trial[t][0].obj)))
        if trials:
            stats["success_rate"] = float(np.mean(
                [per_trial[t][0].success for t in trials]))
        if lidar:
            for name in crb_named:
                errs = [r.metric_value for t in trials for r in per_trial[t]
                        if r.metric_name == f"err_{name}"
                        and math.isfinite(r.metric_value)]
                ok_errs = [r.metric_value for t in trials
                           for r in per_trial[t]
                           if r.metric_name == f"err_{name}" and r.success
                           and math.isfinite(r.metric_value)]
                if errs:
                    stats[f"rmse_{name}"] = float(np.sqrt(np.mean(
                        np.square(errs))))
                if ok_errs:
                    stats[f"rmse_ok_{name}"] = float(np.sqrt(np.mean(
                        np.square(ok_errs))))
                stats[f"sqrt_crb_{name}"] = float(crb_named[name])
        else:
            snrs = [r.metric_value for t in trials for r in per_trial[t]
                    if r.metric_name == "snr_db"
                    and math.isfinite(r.metric_value)]
            if snrs:
                stats["mean_snr_db"] = float(np.mean(snrs))
        for name, value in stats.items():
            rows.append({"experiment": exp, "method": method,
                         "n_particles": n, "stat_name": name,
                         "stat_value": value})
    return rows


def monotonicity_flags(aggregates, method="proxicbo"):
    """Non-strict success monotonicity in N, as a regression flag.

    Returns a list of dicts, one per violated grid step; a drop across a
    single step is reported but treated as a soft flag by callers.
    """
    series = {}
    for row in aggregates:
        if row["method"] == method and row["stat_name"] == "success_rate":
            series.setdefault(row["experiment"], []).append(
                (int(row["n_particles"]), float(row["stat_value"])))
    flags = []
    for exp, pts in series.items():
        pts.sort()
        for (n_lo, rate_lo), (n_hi, rate_hi) in zip(pts, pts[1:]):
            if rate_hi < rate_lo:
                flags.append({"experiment": exp, "method": method,
                              "n_from": n_lo, "n_to": n_hi,
                              "drop": rate_lo - rate_hi})
    return flags


def write_trials_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIAL_COLUMNS)
        for r in records:
            writer.writerow(r.row())


def write_aggregates_csv(path, aggregates):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        for row in aggregates:
            writer.writerow([row["experiment"], row["method"],
                             str(row["n_particles"]), row["stat_name"],
                             repr(float(row["stat_value"]))])


# -- theory check --------------------------------------------------------------

@dataclass
class TheoryCheckResult:
    kappa: float
    slope: float
    threshold: float
    passed: bool
    times: np.ndarray
    moments: np.ndarray


def decay_rate(lambda1, sigma1, sigma2, mu, dt, lipschitz):
    """kappa = 2 l1 - s1^2 - l2 (2 L + 1/mu) - s2^2 (2 L + 1/mu)^2.

    l2 is tied to the prox step by l2 * dt = mu. Positive kappa guarantees
    exponential contraction of the ensemble's second moment at rate at
    least kappa / 2 in the mean-field regime.
    """
    lam2 = mu / dt
    bracket = 2.0 * lipschitz + 1.0 / mu
    return (2.0 * lambda1 - sigma1 ** 2 - lam2 * bracket
            - sigma2 ** 2 * bracket ** 2)


def theory_check(n_particles=2000, dim=2, lambda1=75.0, sigma1=0.3,
                 sigma2=0.01, mu=0.1, dt=0.01, alpha=1e5, seed=0,
                 slack=0.3, moment_floor=1e-4, max_iters=500):
    """Empirical contraction vs. the guaranteed rate on E(v) = ||v||^2.

    Runs the full particle dynamics, records the ensemble second moment
    around the minimizer at 0, and fits a line to its log against time
    while the moment stays above ``moment_floor``. Passes when the fitted
    slope is at most (1 - slack) * (-kappa / 2).

    Raises :class:`~proxicbo.errors.ConfigError` when the parameters do not
    satisfy kappa > 0 (the guarantee does not apply) or when fewer than two
    particles are requested.
    """
    if n_particles < 2:
        raise ConfigError("theory check needs at least 2 particles")
    lipschitz = 2.0
    kappa = decay_rate(lambda1, sigma1, sigma2, mu, dt, lipschitz)
    if kappa <= 0:
        lam2 = mu / dt
        bracket = 2.0 * lipschitz + 1.0 / mu
        raise ConfigError(
            "contraction condition violated: kappa = "
            f"2*{lambda1} - {sigma1}^2 - {lam2}*{bracket} - "
            f"{sigma2}^2*{bracket}^2 = {kappa:.6g} <= 0")
    objective = quadratic_objective(np.zeros(dim), weight=1.0)
    scfg = SolverConfig(method="proxicbo", alpha=alpha, lambda1=lambda1,
                        sigma1=sigma1, sigma2=sigma2, mu=mu, dt=dt,
                        max_iters=1, n_particles=n_particles, seed=seed)
    rng = seeding.derive_rng(seed, seeding.INIT)
    ens = ParticleEnsemble.create(rng.standard_normal((n_particles, dim)),
                                  objective.value, seed)
    times = [0.0]
    moments = [float(np.mean(np.sum(ens.positions ** 2, axis=1)))]
    for k in range(1, max_iters + 1):
        proxicbo_step(ens, objective, scfg)
        ens.refresh_energies(objective.value)
        moment = float(np.mean(np.sum(ens.positions ** 2, axis=1)))
        times.append(k * dt)
        moments.append(moment)
        if moment < moment_floor:
            break
    times = np.asarray(times)
    moments = np.asarray(moments)
    keep = moments > 0
    slope = float(np.polyfit(times[keep], np.log(moments[keep]), 1)[0])
    threshold = -(1.0 - slack) * 0.5 * kappa
    return TheoryCheckResult(kappa=kappa, slope=slope, threshold=threshold,
                             passed=slope <= threshold, times=times,
                             moments=moments)
