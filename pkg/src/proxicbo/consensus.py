"""Particle ensembles and the weighted consensus point.

The consensus point of positions V_1..V_N with energies E_1..E_N is

    v_alpha = sum_i w_i V_i / sum_i w_i,   w_i = exp(-alpha * E_i).

Weights are computed after subtracting the smallest finite energy, which
leaves v_alpha unchanged exactly (every w_i is scaled by the same factor)
and keeps the exponentials in range for any alpha. Particles with infinite
energy get weight zero; if every particle is infeasible there is no
consensus point and :class:`~proxicbo.errors.ConsensusSupportError` is
raised.
"""

import numpy as np

from . import seeding
from .errors import ConsensusSupportError, InvalidParameterError


def consensus_point(positions, energies, alpha):
    """Energy-weighted average of particle positions."""
    if alpha < 0:
        raise InvalidParameterError("alpha must be nonnegative")
    positions = np.asarray(positions, dtype=float)
    energies = np.asarray(energies, dtype=float)
    finite = np.isfinite(energies)
    if not np.any(finite):
        raise ConsensusSupportError("all particles have infinite energy")
    shifted = energies - energies[finite].min()
    weights = np.where(finite, np.exp(-alpha * np.where(finite, shifted, 0.0)), 0.0)
    total = weights.sum()
    return (weights @ positions) / total


class ParticleEnsemble:
    """Positions, energies, the best point seen so far, and noise streams.

    ``rng_streams`` holds one counter-based generator per particle so solver
    noise is independent of evaluation order. The historical best is updated
    on every :meth:`refresh_energies` call with a strict improvement rule,
    so the earliest particle to reach a given energy is kept on ties.
    """

    def __init__(self, positions, energies=None, rng_streams=None):
        self.positions = np.asarray(positions, dtype=float)
        if self.positions.ndim != 2:
            raise InvalidParameterError("positions must have shape (n, d)")
        n = self.positions.shape[0]
        if energies is None:
            energies = np.full(n, np.inf)
        self.energies = np.asarray(energies, dtype=float)
        if self.energies.shape != (n,):
            raise InvalidParameterError("energies must have shape (n,)")
        self.rng_streams = rng_streams
        self.best_position = None
        self.best_energy = np.inf
        self._absorb_best()

    @classmethod
    def create(cls, positions, energy_fn, seed, seed_path=()):
        """Build an ensemble, evaluate energies, and attach noise streams."""
        positions = np.asarray(positions, dtype=float)
        streams = seeding.particle_streams(seed, positions.shape[0], *seed_path)
        ens = cls(positions, rng_streams=streams)
        ens.refresh_energies(energy_fn)
        return ens

    @property
    def n_particles(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def refresh_energies(self, energy_fn):
        """Recompute energies from positions; NaN counts as infeasible."""
        self.set_energies(energy_fn(self.positions))

    def set_energies(self, energies):
        """Install energies computed elsewhere for the current positions."""
        e = np.asarray(energies, dtype=float)
        if e.shape != (self.n_particles,):
            raise InvalidParameterError(
                f"energies must have shape ({self.n_particles},)")
        e = np.where(np.isnan(e), np.inf, e)
        self.energies = e
        self._absorb_best()

    def _absorb_best(self):
        i = int(np.argmin(self.energies))
        if self.energies[i] < self.best_energy:
            self.best_energy = float(self.energies[i])
            self.best_position = self.positions[i].copy()
        elif self.best_position is None:
            self.best_position = self.positions[i].copy()
            self.best_energy = float(self.energies[i])

    def consensus(self, alpha):
        return consensus_point(self.positions, self.energies, alpha)

    def final_best(self):
        """The current lowest-energy particle (position, energy)."""
        i = int(np.argmin(self.energies))
        return self.positions[i].copy(), float(self.energies[i])
