"""Tests for the consensus point and the particle ensemble bookkeeping."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from proxicbo.consensus import ParticleEnsemble, consensus_point
from proxicbo.errors import ConsensusSupportError, InvalidParameterError


def _consensus_mpmath(positions, energies, alpha):
    """Reference consensus point in 60-digit arithmetic, no energy shift."""
    from mpmath import mp, mpf

    mp.dps = 60
    d = positions.shape[1]
    num = [mpf(0)] * d
    den = mpf(0)
    for pos, e in zip(positions, energies):
        if not np.isfinite(e):
            continue
        w = mp.e ** (-mpf(alpha) * mpf(e))
        den += w
        for j in range(d):
            num[j] += w * mpf(pos[j])
    return np.array([float(nj / den) for nj in num])


def test_consensus_matches_extended_precision():
    rng = np.random.default_rng(301)
    for alpha in [0.0, 0.5, 10.0, 1e3, 1e5]:
        positions = rng.normal(size=(40, 3))
        energies = rng.uniform(0.0, 5.0, size=40)
        got = consensus_point(positions, energies, alpha)
        want = _consensus_mpmath(positions, energies, alpha)
        assert_allclose(got, want, rtol=1e-12, atol=1e-14)


def test_consensus_large_alpha_picks_argmin():
    rng = np.random.default_rng(307)
    positions = rng.normal(size=(25, 4))
    energies = rng.uniform(1.0, 9.0, size=25)
    best = np.argmin(energies)
    got = consensus_point(positions, energies, 1e8)
    assert_allclose(got, positions[best], rtol=0, atol=0)


def test_consensus_alpha_zero_is_mean_of_feasible():
    rng = np.random.default_rng(311)
    positions = rng.normal(size=(10, 2))
    energies = rng.uniform(size=10)
    energies[3] = np.inf
    got = consensus_point(positions, energies, 0.0)
    keep = np.isfinite(energies)
    assert_allclose(got, positions[keep].mean(axis=0), rtol=1e-14)


def test_consensus_energy_shift_invariance():
    rng = np.random.default_rng(313)
    positions = rng.normal(size=(15, 3))
    # integer-valued energies plus a power-of-two shift: the shifted set is
    # bitwise identical after subtracting its minimum, so the output is too
    energies = rng.integers(0, 50, size=15).astype(float)
    a = consensus_point(positions, energies, 5.0)
    b = consensus_point(positions, energies + 4096.0, 5.0)
    assert np.array_equal(a, b)
    # arbitrary shifts agree to rounding
    c = consensus_point(positions, energies + math.pi * 1e4, 5.0)
    assert_allclose(a, c, rtol=1e-9)


def test_consensus_huge_energies_no_overflow():
    positions = np.array([[0.0], [1.0], [2.0]])
    energies = np.array([1e6, 2e6, 3e6])
    got = consensus_point(positions, energies, 1e4)
    assert np.all(np.isfinite(got))
    assert_allclose(got, [0.0])


def test_consensus_stays_in_convex_hull():
    rng = np.random.default_rng(317)
    for _ in range(50):
        positions = rng.normal(size=(8, 5))
        energies = rng.uniform(size=8)
        alpha = float(rng.uniform(0, 100))
        v = consensus_point(positions, energies, alpha)
        assert np.all(v >= positions.min(axis=0) - 1e-12)
        assert np.all(v <= positions.max(axis=0) + 1e-12)


def test_consensus_all_infeasible_raises():
    with pytest.raises(ConsensusSupportError):
        consensus_point(np.zeros((3, 2)), np.full(3, np.inf), 1.0)
    with pytest.raises(InvalidParameterError):
        consensus_point(np.zeros((3, 2)), np.zeros(3), -1.0)


def test_ensemble_best_tracking_is_monotone():
    ens = ParticleEnsemble(np.array([[1.0], [2.0]]), np.array([5.0, 3.0]))
    assert ens.best_energy == 3.0
    assert_allclose(ens.best_position, [2.0])
    # moving the particles somewhere worse must not lose the record
    ens.positions = np.array([[7.0], [9.0]])
    ens.refresh_energies(lambda x: np.array([8.0, 9.0]))
    assert ens.best_energy == 3.0
    assert_allclose(ens.best_position, [2.0])
    ens.positions = np.array([[0.5], [4.0]])
    ens.refresh_energies(lambda x: np.array([1.0, 6.0]))
    assert ens.best_energy == 1.0
    assert_allclose(ens.best_position, [0.5])


def test_ensemble_tie_keeps_earliest_particle():
    ens = ParticleEnsemble(np.array([[1.0], [2.0], [3.0]]),
                           np.array([4.0, 2.0, 2.0]))
    assert_allclose(ens.best_position, [2.0])
    # a later refresh with an equal (not better) energy keeps the old record
    ens.refresh_energies(lambda x: np.array([2.0, 5.0, 5.0]))
    assert_allclose(ens.best_position, [2.0])


def test_ensemble_nan_energy_becomes_infeasible():
    ens = ParticleEnsemble(np.array([[1.0], [2.0]]))
    ens.refresh_energies(lambda x: np.array([np.nan, 4.0]))
    assert ens.energies[0] == np.inf
    assert ens.best_energy == 4.0


def test_ensemble_final_best():
    ens = ParticleEnsemble(np.array([[1.0], [2.0]]), np.array([5.0, 3.0]))
    pos, e = ens.final_best()
    assert e == 3.0 and pos[0] == 2.0


def test_ensemble_create_attaches_streams():
    positions = np.zeros((4, 2))
    ens = ParticleEnsemble.create(positions, lambda x: np.zeros(4), seed=9)
    assert len(ens.rng_streams) == 4
    a = ens.rng_streams[0].standard_normal(3)
    ens2 = ParticleEnsemble.create(positions, lambda x: np.zeros(4), seed=9)
    b = ens2.rng_streams[0].standard_normal(3)
    assert np.array_equal(a, b)
    c = ens2.rng_streams[1].standard_normal(3)
    assert not np.array_equal(b, c)


def test_ensemble_shape_validation():
    with pytest.raises(InvalidParameterError):
        ParticleEnsemble(np.zeros(3))
    with pytest.raises(InvalidParameterError):
        ParticleEnsemble(np.zeros((3, 2)), np.zeros(4))
