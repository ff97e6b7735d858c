"""Solvers for composite objectives E = f + g.

Particle methods
----------------
``proxicbo``
    Consensus-based dynamics with two noise channels. Each iteration drifts
    particles toward the consensus point, adds anisotropic consensus noise
    plus a second noise channel scaled by the prox-gradient residual

        r(V) = (V - prox_g(V - mu * grad_f(V), mu)) / mu,

    and finally applies the prox-gradient map to every particle. The
    residual equals grad_f(V) + grad M_mu(V - mu * grad_f(V)) with M_mu the
    Moreau envelope of g, so it vanishes exactly at stationary points of the
    composite objective.
``cbo``
    The same dynamics without the residual channel and without the
    prox-gradient map (plain consensus-based optimization).
``projcbo``
    ``cbo`` followed by projection onto the box encoded in g; particle
    energies use f plus only the finite penalty part of g.

Gradient methods
----------------
``pg`` / ``apg``
    Proximal gradient and its accelerated (momentum) variant, run as a bank
    of independent restarts from the given initial positions. ``apg`` uses
    the t-sequence t_next = (1 + sqrt(1 + 4 t^2)) / 2, so its first
    iteration coincides with a plain proximal-gradient step.

All methods share E, g, and the step size mu, so their outputs are directly
comparable.
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import prox as _prox
from . import seeding
from .consensus import ParticleEnsemble
from .errors import DivergenceError, InvalidParameterError

METHODS = ("proxicbo", "cbo", "projcbo", "pg", "apg")
PARTICLE_METHODS = ("proxicbo", "cbo", "projcbo")
TRACK_MODES = ("historical", "final")


@dataclass
class SolverConfig:
    """Settings shared by all solvers.

    ``track`` selects the reported point for particle methods: the best
    particle ever seen ("historical") or the best particle of the final
    ensemble ("final"). Gradient methods always report their best endpoint.
    ``stop_tol`` enables early stopping when positive: particle methods stop
    once every particle is within ``stop_tol`` (sup norm) of the consensus
    point, gradient methods freeze each restart whose update displacement
    falls below it.
    """

    method: str = "proxicbo"
    alpha: float = 1e5
    lambda1: float = 1.0
    sigma1: float = 0.1
    sigma2: float = 0.1
    mu: float = 1e-3
    dt: float = 0.01
    max_iters: int = 1000
    n_particles: int = 100
    seed: int = 0
    track: str = "historical"
    stop_tol: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidParameterError(f"unknown method {self.method!r}")
        if self.track not in TRACK_MODES:
            raise InvalidParameterError(f"unknown track mode {self.track!r}")
        if self.alpha < 0:
            raise InvalidParameterError("alpha must be nonnegative")
        if self.mu <= 0 or self.dt <= 0:
            raise InvalidParameterError("mu and dt must be positive")
        if self.sigma1 < 0 or self.sigma2 < 0 or self.lambda1 < 0:
            raise InvalidParameterError("lambda1, sigma1, sigma2 must be >= 0")
        if self.max_iters < 1 or self.n_particles < 1:
            raise InvalidParameterError("max_iters and n_particles must be >= 1")


@dataclass
class SolveResult:
    """Output of :func:`solve`.

    ``objective_value`` is recomputed from ``estimate`` on exit, so it is
    consistent with the returned point regardless of tracking mode.
    ``trajectory_digest`` is a SHA-256 hex digest of a per-iteration summary
    (best energy for particle methods, largest displacement for gradient
    methods); equal digests mean the runs followed identical trajectories.
    """

    estimate: np.ndarray
    objective_value: float
    iterations_run: int
    trajectory_digest: str


def _draw_noise(streams, rows, dim):
    out = np.empty((len(streams), rows, dim))
    for i, stream in enumerate(streams):
        out[i] = stream.standard_normal((rows, dim))
    return out


def _box_clip(objective, x):
    bounds = _prox.constraint_bounds(objective.g)
    if bounds is None:
        return x
    return np.clip(x, bounds[0], bounds[1])


def _residual_from_grad(objective, x, grad, mu):
    step = objective.g.prox(x - mu * grad, mu)
    return (x - step) / mu


def prox_gradient_residual(objective, x, mu):
    """(x - prox_g(x - mu grad_f(x), mu)) / mu, zero exactly at stationarity."""
    return _residual_from_grad(objective, x, objective.grad_f(x), mu)


def proxicbo_step(ensemble, objective, cfg, noise=None, grad_at_v=None):
    """One update of the proximal consensus dynamics (in place).

    ``noise`` may inject a pair of arrays (z1, z2) of shape (n, d) for
    testing; by default both are drawn from the ensemble's streams.
    ``grad_at_v`` may pass grad_f at the current positions when the caller
    already has it (the solve loop gets it for free with the energies).
    """
    v = ensemble.positions
    v_alpha = ensemble.consensus(cfg.alpha)
    drift = v - v_alpha
    if noise is None:
        z = _draw_noise(ensemble.rng_streams, 2, v.shape[1])
        z1, z2 = z[:, 0, :], z[:, 1, :]
    else:
        z1, z2 = noise
    if grad_at_v is None:
        grad_at_v = objective.grad_f(v)
    resid = _residual_from_grad(objective, v, grad_at_v, cfg.mu)
    root_dt = math.sqrt(cfg.dt)
    moved = (v - cfg.lambda1 * cfg.dt * drift
             + cfg.sigma1 * root_dt * drift * z1
             + cfg.sigma2 * root_dt * resid * z2)
    if objective.restrict_to_box:
        moved = _box_clip(objective, moved)
    ensemble.positions = objective.g.prox(
        moved - cfg.mu * objective.grad_f(moved), cfg.mu)
    return {"v_alpha": v_alpha, "spread": float(np.max(np.abs(drift)))}


def cbo_step(ensemble, objective, cfg, noise=None):
    """One update of plain consensus dynamics (in place)."""
    v = ensemble.positions
    v_alpha = ensemble.consensus(cfg.alpha)
    drift = v - v_alpha
    if noise is None:
        z1 = _draw_noise(ensemble.rng_streams, 1, v.shape[1])[:, 0, :]
    else:
        z1 = noise
    root_dt = math.sqrt(cfg.dt)
    ensemble.positions = (v - cfg.lambda1 * cfg.dt * drift
                          + cfg.sigma1 * root_dt * drift * z1)
    return {"v_alpha": v_alpha, "spread": float(np.max(np.abs(drift)))}


def projcbo_step(ensemble, objective, cfg, noise=None):
    """Consensus dynamics followed by projection onto the box in g."""
    info = cbo_step(ensemble, objective, cfg, noise=noise)
    ensemble.positions = _box_clip(objective, ensemble.positions)
    return info


def pg_step(x, objective, mu):
    """One proximal-gradient step on each row of x."""
    return objective.g.prox(x - mu * objective.grad_f(x), mu)


def apg_step(x, x_prev, t, objective, mu):
    """One accelerated proximal-gradient step on each row.

    Returns ``(x_new, x, t_next)``. The extrapolated point is projected
    into the box for objectives whose f is only defined there.
    """
    t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
    y = x + ((t - 1.0) / t_next) * (x - x_prev)
    if objective.restrict_to_box:
        y = _box_clip(objective, y)
    x_new = objective.g.prox(y - mu * objective.grad_f(y), mu)
    return x_new, x, t_next


def _projcbo_energy(objective):
    def energy(x):
        return objective.f(x) + _prox.penalty_value(objective.g, x)
    return energy


def _check_finite(method, positions, iteration):
    finite = np.isfinite(positions).all(axis=1)
    if not finite.all():
        raise DivergenceError(method, int(np.argmin(finite)), iteration)


def _solve_particles(objective, cfg, init):
    if cfg.method == "projcbo":
        energy_fn = _projcbo_energy(objective)
    else:
        energy_fn = objective.value
    step = {"proxicbo": proxicbo_step, "cbo": cbo_step,
            "projcbo": projcbo_step}[cfg.method]
    ens = ParticleEnsemble.create(init, energy_fn, cfg.seed)
    digest = hashlib.sha256()
    iterations = 0
    # For proxicbo the energy refresh and the next step's residual share one
    # forward pass through f; the other methods never need gradients.
    fuse = cfg.method == "proxicbo"
    grad_cache = None
    for k in range(1, cfg.max_iters + 1):
        if fuse:
            info = step(ens, objective, cfg, grad_at_v=grad_cache)
        else:
            info = step(ens, objective, cfg)
        iterations = k
        _check_finite(cfg.method, ens.positions, k)
        if fuse:
            f_val, grad_cache = objective.f_and_grad_f(ens.positions)
            ens.set_energies(f_val + objective.g_value(ens.positions))
        else:
            ens.refresh_energies(energy_fn)
        digest.update(np.float64(ens.best_energy).tobytes())
        if cfg.stop_tol > 0 and info["spread"] <= cfg.stop_tol:
            break
    if cfg.track == "historical":
        estimate = ens.best_position.copy()
    else:
        estimate = ens.final_best()[0]
    return estimate, iterations, digest.hexdigest()


def _solve_gradient(objective, cfg, init):
    x = init.copy()
    x_prev = init.copy()
    t = 1.0
    active = np.ones(x.shape[0], dtype=bool)
    digest = hashlib.sha256()
    iterations = 0
    for k in range(1, cfg.max_iters + 1):
        iterations = k
        old = x[active]
        if cfg.method == "pg":
            new = pg_step(old, objective, cfg.mu)
        else:
            new, prev_new, t = apg_step(old, x_prev[active], t,
                                        objective, cfg.mu)
            x_prev[active] = prev_new
        x[active] = new
        _check_finite(cfg.method, x, k)
        disp = np.max(np.abs(new - old), axis=1)
        digest.update(np.float64(disp.max()).tobytes())
        if cfg.stop_tol > 0:
            sub = disp > cfg.stop_tol
            idx = np.where(active)[0]
            active[idx[~sub]] = False
            if not active.any():
                break
    vals = np.atleast_1d(objective.value(x))
    best = int(np.argmin(vals))
    return x[best].copy(), iterations, digest.hexdigest()


def solve(objective, config, init_positions=None):
    """Run the configured solver and return a :class:`SolveResult`.

    ``init_positions`` must have shape (n_particles, dim); when omitted,
    standard normal positions are drawn from the config seed. For gradient
    methods the rows are independent restarts and the best endpoint wins.
    """
    if init_positions is None:
        rng = seeding.derive_rng(config.seed, seeding.INIT)
        init = rng.standard_normal((config.n_particles, objective.dim))
    else:
        init = np.array(init_positions, dtype=float, copy=True)
    if init.shape != (config.n_particles, objective.dim):
        raise InvalidParameterError(
            f"init_positions must have shape ({config.n_particles}, "
            f"{objective.dim}), got {init.shape}")
    if config.method in PARTICLE_METHODS:
        estimate, iterations, digest = _solve_particles(objective, config, init)
    else:
        estimate, iterations, digest = _solve_gradient(objective, config, init)
    value = float(np.asarray(objective.value(estimate)))
    return SolveResult(estimate=estimate, objective_value=value,
                       iterations_run=iterations, trajectory_digest=digest)
