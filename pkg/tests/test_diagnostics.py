import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmacc.acceleration import run
from mmacc.diagnostics import (UnreliableEstimateWarning, batch_standard_errors, cgf_estimate,
                               cumulants_from_ensemble, default_probes, empirical_cgf,
                               equilibrium_signature, matched_cgf_shift_check)
from mmacc.matching import MacroState, match_ensemble
from mmacc.microsolver import Ensemble
from mmacc.model import GaussianLaw, LinearSdeModel, StepSchedule

STD2 = GaussianLaw(np.zeros(2), np.eye(2))


def gaussian_ensemble(n, seed, law=STD2):
    return Ensemble.sample_gaussian(law, n, seed)


def test_cgf_vanishes_at_zero_exactly():
    e = gaussian_ensemble(1000, 1)
    assert empirical_cgf(e, np.zeros(2)) == 0.0
    est = cgf_estimate(e, [[1.0, 0.0], [0.6, 0.8]], [0.0, 0.5])
    assert np.all(est.values[:, 0] == 0.0)


@given(st.integers(0, 500), st.floats(-1, 1), st.floats(-1, 1))
def test_cgf_convex_along_rays(seed, a, b):
    e = gaussian_ensemble(300, seed)
    d = np.array([a, b]) if (a, b) != (0, 0) else np.array([1.0, 0.0])
    radii = np.linspace(0, 4, 21)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnreliableEstimateWarning)
        v = cgf_estimate(e, d, radii).values[0]
    assert np.all(np.diff(v, 2) >= -1e-10)


def test_cgf_single_point():
    e = Ensemble.uniform([[1.5, -2.0], [1.5, -2.0]], seed=0)
    theta = np.array([0.3, 0.7])
    assert empirical_cgf(e, theta) == theta @ [1.5, -2.0]


def test_cgf_gaussian_closed_form():
    e = gaussian_ensemble(100_000, 2)
    x = e.positions[:, 0]
    est = cgf_estimate(e, [1.0, 0.0], [0.5, 1.0])
    for j, r in enumerate((0.5, 1.0)):
        ex = np.exp(r * x)
        se = ex.std(ddof=1) / np.sqrt(x.size) / ex.mean()
        assert abs(est.values[0, j] - r * r / 2) < 3 * se


def test_cgf_independent_sum_is_additive():
    x = gaussian_ensemble(100_000, 3)
    y = Ensemble.sample_bimodal(100_000, 2, 1.0, 0.5, seed=4)
    s = Ensemble.uniform(x.positions + y.positions, seed=0)
    theta = np.array([0.4, -0.3])
    gap = empirical_cgf(s, theta) - empirical_cgf(x, theta) - empirical_cgf(y, theta)

    def se(e):
        v = np.exp(e.positions @ theta)
        return v.std(ddof=1) / np.sqrt(v.size) / v.mean()

    assert abs(gap) < 3 * np.sqrt(se(s) ** 2 + se(x) ** 2 + se(y) ** 2)


def test_cgf_affine_identity():
    e = Ensemble.sample_bimodal(5000, 2, 1.5, 0.3, seed=5)
    m = np.array([[1.2, -0.4], [0.3, 0.9]])
    c = np.array([0.5, -1.0])
    moved = Ensemble(e.positions @ m.T + c, e.weights, 0)
    for s in default_probes(2, 7):
        lhs = empirical_cgf(moved, s)
        rhs = empirical_cgf(e, m.T @ s) + s @ c
        assert abs(lhs - rhs) <= 1e-12


def test_cgf_unreliable_warning():
    e = gaussian_ensemble(200, 6)
    with pytest.warns(UnreliableEstimateWarning):
        est = cgf_estimate(e, [1.0, 0.0], [0.5, 40.0])
    assert est.unreliable[0, 1] and not est.unreliable[0, 0]


def test_cumulants_of_gaussian_vanish():
    e = gaussian_ensemble(100_000, 8)
    probes = default_probes(2, 8)
    cum = cumulants_from_ensemble(e, probes)
    err = batch_standard_errors(e, probes)
    assert np.all(np.abs(cum.third) < 5 * err.third)
    assert np.all(np.abs(cum.fourth) < 5 * err.fourth)


def test_cumulants_rademacher():
    e = Ensemble.uniform([[-1.0], [1.0]], seed=0)
    cum = cumulants_from_ensemble(e)
    assert (cum.mean[0], cum.covariance[0, 0], cum.third[0], cum.fourth[0]) == (0.0, 1.0, 0.0, -2.0)


def test_cumulants_exponential():
    rng = np.random.default_rng(9)
    x = rng.exponential(1.0, size=(400_000, 1)) - 1.0
    e = Ensemble.uniform(x, seed=0)
    cum = cumulants_from_ensemble(e)
    err = batch_standard_errors(e)
    assert abs(cum.third[0] - 2.0) < 5 * err.third[0]
    assert abs(cum.fourth[0] - 6.0) < 5 * err.fourth[0]


def test_cumulant_mean_and_covariance_use_the_same_sums():
    e = gaussian_ensemble(1000, 10)
    w = np.random.default_rng(1).random(1000)
    e = Ensemble(e.positions, w / w.sum(), 0)
    cum = cumulants_from_ensemble(e)
    np.testing.assert_array_equal(cum.mean, e.mean())
    np.testing.assert_array_equal(cum.covariance, e.cov())
    np.testing.assert_array_equal(cum.covariance, cum.covariance.T)


def test_shift_identity():
    prior = Ensemble.sample_bimodal(1000, 2, 1.0, 0.4, seed=11)
    probes = default_probes(2, 11)
    same, tilt0 = match_ensemble(MacroState(prior.slow_mean(1)), prior, 1, resample=False)
    assert matched_cgf_shift_check(prior, tilt0, same, probes) == 0.0
    tilted, tilt = match_ensemble(MacroState([0.6]), prior, 1, resample=False)
    assert tilt.multipliers[0] != 0.0
    assert matched_cgf_shift_check(prior, tilt, tilted, probes) <= 1e-12
    resampled, _ = match_ensemble(MacroState([0.6]), prior, 1, resample=True)
    assert matched_cgf_shift_check(prior, tilt, resampled, probes) > 1e-6


def test_default_probes():
    p = default_probes(3, 5)
    assert p.shape == (7, 3)
    np.testing.assert_array_equal(p[:3], np.eye(3))
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, rtol=1e-14)
    np.testing.assert_array_equal(p, default_probes(3, 5))
    assert not np.array_equal(p, default_probes(3, 6))


def test_batch_errors_shrink_with_size():
    small = batch_standard_errors(gaussian_ensemble(2000, 1))
    big = batch_standard_errors(gaussian_ensemble(200_000, 1))
    assert np.all(big.mean < small.mean)
    assert np.all(big.covariance < small.covariance)


DECOUPLED = LinearSdeModel(np.diag([-2.0, -10.0]), np.eye(2), 1)


def test_signature_gaussian_data_stays_gaussian():
    e = gaussian_ensemble(20_000, 12)
    traj = run(e, DECOUPLED, StepSchedule(0.02, 1, 0.1, 3.0), probes=default_probes(2, 12)[2:])
    rep = equilibrium_signature(traj, DECOUPLED, 0.02)
    assert np.mean(rep.third_max < 1) > 0.9 and np.mean(rep.fourth_max < 1) > 0.9


def test_signature_bimodal_converges():
    e = Ensemble.sample_bimodal(20_000, 2, 2.0, 0.25, seed=13)
    traj = run(e, DECOUPLED, StepSchedule(0.02, 1, 0.1, 20.0), probes=default_probes(2, 13)[2:])
    rep = equilibrium_signature(traj, DECOUPLED, 0.02)
    assert not rep.within[0]
    assert rep.fourth_max[0] > 5
    assert rep.converged and rep.converged_step is not None
    assert len(list(rep.rows())) == len(traj.records)


def test_signature_unstable_step_does_not_converge():
    e = gaussian_ensemble(5000, 14)
    traj = run(e, DECOUPLED, StepSchedule(0.02, 1, 1.5, 30.0), record_cumulants=True)
    rep = equilibrium_signature(traj, DECOUPLED, 0.02)
    assert not rep.converged
    assert traj.failure is not None or rep.mean_norm[-1] > rep.mean_norm[0]
