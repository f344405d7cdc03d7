import csv

import numpy as np
import pytest

from mmacc.acceleration import (MmState, Trajectory, extrapolate_slow_mean,
                                gaussian_mean_propagation_matrix, mm_step, run)
from mmacc.errors import BlowUpError, DegeneratePriorError, MatchingFailure
from mmacc.microsolver import Ensemble, em_burst, em_step_moments, invariant_variance
from mmacc.model import GaussianLaw, LinearSdeModel, StepSchedule, driven_test_model

G0 = GaussianLaw([1.0, -0.5], np.eye(2))


def test_extrapolation_examples():
    assert extrapolate_slow_mean([1.0], [0.9], 0.01, 0.1)[0] == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_array_equal(extrapolate_slow_mean([1.0], [0.9], 0.1, 0.1), [0.9])
    for dt in (0.1, 1.0, 7.0):
        np.testing.assert_array_equal(extrapolate_slow_mean([0.4], [0.4], 0.01, dt), [0.4])
    with pytest.raises(ValueError):
        extrapolate_slow_mean([1.0], [1.0], 0.0, 0.1)


def test_no_extrapolation_step_is_the_burst():
    m = driven_test_model(1.0)
    sched = StepSchedule(0.05, 3, 0.15, 1.0)
    out = mm_step(MmState(G0, 0.0, 0), m, sched)
    burst, _ = em_burst(G0, m, 0.05, 3, 0.0)
    np.testing.assert_array_equal(out.law.mean, burst.mean)
    np.testing.assert_array_equal(out.law.cov, burst.cov)
    assert out.time == pytest.approx(0.15) and out.step_index == 1


def test_no_extrapolation_ensemble_equals_plain_euler():
    m = driven_test_model(1.0)
    e = Ensemble.sample_gaussian(G0, 2000, seed=3)
    traj = run(e, m, StepSchedule(0.05, 1, 0.05, 1.0), record_cumulants=False)
    plain, means = em_burst(e, m, 0.05, 20, 0.0)
    np.testing.assert_array_equal(traj.slow_means()[:, 0], means[:, 0])
    np.testing.assert_array_equal(traj.records[-1].mean, plain.mean())


@pytest.mark.parametrize("k", [1, 2])
def test_decoupled_block_propagation(k):
    a_s, a_f, dt, big = -1.0, -20.0, 0.01, 0.3
    m = LinearSdeModel(np.diag([a_s, a_f]), np.diag([1.0, 3.0]), 1)
    state = MmState(GaussianLaw([1.0, 2.0], np.diag([1.0, 0.5])), 0.0, 0)
    sched = StepSchedule(dt, k, big, 10.0)
    # Slow: secant of the K-step burst stretched to the macro step; K = 1
    # gives 1 + big * a_s.
    slow = 1 + big / (k * dt) * ((1 + dt * a_s) ** k - 1)
    if k == 1:
        assert slow == pytest.approx(1 + big * a_s, rel=1e-14)
    mu = np.array([1.0, 2.0])
    for _ in range(15):
        state = mm_step(state, m, sched)
        mu = mu * [slow, (1 + dt * a_f) ** k]
        np.testing.assert_allclose(state.law.mean, mu, rtol=1e-12, atol=1e-14)


def test_ensemble_tracks_gaussian_mode():
    m = driven_test_model(1.0)
    sched = StepSchedule(0.05, 1, 0.2, 2.0)
    g0 = GaussianLaw([1.0, 0.0], np.eye(2))
    gt = run(g0, m, sched)
    et = run(Ensemble.sample_gaussian(g0, 10_000, seed=17), m, sched, record_cumulants=False)
    assert len(gt.records) == len(et.records) == 11
    sd = np.sqrt(gt.covs()[:, 0, 0] / 10_000)
    assert np.all(np.abs(et.slow_means()[:, 0] - gt.slow_means()[:, 0]) < 3 * sd)


def test_propagation_matrix_decoupled_and_limit():
    m = LinearSdeModel(np.diag([-1.0, -10.0]), np.eye(2), 1)
    post = em_step_moments(GaussianLaw(np.zeros(2), np.eye(2)), m, 0.01, 0.0)
    mat = gaussian_mean_propagation_matrix(post, m, 0.01, 0.2)
    np.testing.assert_allclose(mat, np.diag([1 - 0.2, 1 - 0.1]), atol=1e-15)
    d = driven_test_model(1.0)
    post = em_step_moments(G0, d, 0.05, 0.0)
    np.testing.assert_allclose(gaussian_mean_propagation_matrix(post, d, 0.05, 0.05),
                               d.euler_matrix(0.05), atol=1e-15)


def test_propagation_matrix_matches_mm_step():
    d = driven_test_model(1.0).without_forcing()
    g0 = GaussianLaw([1.0, -0.5], np.eye(2))
    post = em_step_moments(g0, d, 0.05, 0.0)
    mat = gaussian_mean_propagation_matrix(post, d, 0.05, 0.2)
    out = mm_step(MmState(g0, 0.0, 0), d, StepSchedule(0.05, 1, 0.2, 1.0))
    np.testing.assert_allclose(mat @ g0.mean, out.law.mean, atol=1e-12)


def test_propagation_matrix_degenerate():
    d = driven_test_model(1.0)
    with pytest.raises(DegeneratePriorError):
        gaussian_mean_propagation_matrix(GaussianLaw([0, 0], np.diag([0.0, 1.0])), d, 0.05, 0.2)


def test_run_shorter_than_one_step():
    traj = run(G0, driven_test_model(1.0), StepSchedule(0.05, 1, 0.5, 0.2))
    assert len(traj.records) == 2 and traj.verdict == "stable"


def test_run_noise_free_decay():
    a = np.array([[-1.0, 0.3], [0.3, -2.0]])
    m = LinearSdeModel(a, np.zeros((2, 1)), 1)
    traj = run(GaussianLaw([1.0, 1.0], np.eye(2)), m, StepSchedule(0.01, 1, 0.05, 5.0))
    norms = np.linalg.norm(traj.means(), axis=1)
    assert np.all(np.diff(norms) < 0)


@pytest.mark.parametrize("macro_dt,rows", [(0.05, 121), (0.1, 61), (0.4, 16), (0.2, 31)])
def test_record_length(macro_dt, rows):
    traj = run(G0, driven_test_model(0.5), StepSchedule(0.025, 1, macro_dt, 6.0))
    assert len(traj.records) == rows
    assert traj.records[-1].t == pytest.approx(6.0, abs=1e-12)


def test_macro_grid_times():
    traj = run(G0, driven_test_model(1.0), StepSchedule(0.05, 2, 0.3, 3.0), t0=1.0)
    for r in traj.records:
        assert r.t == 1.0 + r.n * 0.3


def test_matching_leaves_gaussian_covariance_untouched():
    m = driven_test_model(1.0)
    state = MmState(G0, 0.0, 0)
    sched = StepSchedule(0.05, 2, 0.4, 1.0)
    for _ in range(5):
        burst, _ = em_burst(state.law, m, 0.05, 2, state.time)
        state = mm_step(state, m, sched)
        np.testing.assert_array_equal(state.law.cov, burst.cov)


def test_euler_limit_moments():
    m = driven_test_model(1.0)
    traj = run(G0, m, StepSchedule(0.05, 1, 0.05, 6.0))
    g = G0
    for r in traj.records[1:]:
        g = em_step_moments(g, m, 0.05, (r.n - 1) * 0.05)
        np.testing.assert_allclose(r.mean, g.mean, rtol=0, atol=1e-12)
        np.testing.assert_allclose(r.cov, g.cov, rtol=0, atol=1e-12)


def test_decoupled_long_run_reaches_invariant_law():
    m = LinearSdeModel(np.diag([-2.0, -10.0]), np.eye(2), 1)
    traj = run(G0, m, StepSchedule(0.02, 1, 0.1, 200.0))
    v = invariant_variance(m, 0.02).matrix
    assert np.linalg.norm(traj.records[-1].mean) < 1e-10
    assert np.linalg.norm(traj.records[-1].cov - v) < 1e-8


def test_slow_only_drift_is_forward_euler():
    m = LinearSdeModel(np.diag([-1.5, 0.0]), np.zeros((2, 1)), 1)
    traj = run(GaussianLaw([2.0, 0.0], np.eye(2)), m, StepSchedule(0.01, 1, 0.25, 3.0))
    n = np.arange(len(traj.records))
    np.testing.assert_allclose(traj.slow_means()[:, 0], 2.0 * (1 - 0.25 * 1.5) ** n,
                               rtol=1e-13)


def test_ensemble_stays_gaussian_short_horizon():
    m = driven_test_model(1.0)
    e = Ensemble.sample_gaussian(G0, 20_000, seed=9)
    traj = run(e, m, StepSchedule(0.05, 1, 0.2, 2.0))
    for r in traj.records:
        assert np.all(np.abs(r.cumulants.third) < 5 * r.errors.third)
        assert np.all(np.abs(r.cumulants.fourth) < 5 * r.errors.fourth)


def test_blow_up_is_recorded():
    m = LinearSdeModel([[5.0]], [[1.0]], 1)
    e = Ensemble.sample_gaussian(GaussianLaw([0.0], [[1.0]]), 100, seed=0)
    traj = run(e, m, StepSchedule(1.0, 1, 1.0, 100.0), record_cumulants=False)
    assert traj.verdict == "blow_up"
    assert isinstance(traj.failure, BlowUpError) and traj.failure.macro_index is not None
    assert traj.records[-1].failed and np.isnan(traj.records[-1].mean).all()
    assert traj.failure_time == traj.records[-1].t


def test_matching_failure_is_recorded():
    # Extrapolating a fast decay over a long step overshoots the sample range.
    m = LinearSdeModel([[-1.0]], [[0.01]], 1)
    e = Ensemble.sample_gaussian(GaussianLaw([5.0], [[0.01]]), 50, seed=1)
    traj = run(e, m, StepSchedule(0.1, 1, 3.0, 30.0), record_cumulants=False)
    assert traj.verdict == "matching_failure"
    assert isinstance(traj.failure, MatchingFailure)
    assert traj.failure.macro_index == 0 and traj.failure.time == 0.0


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_csv_layout(tmp_path):
    m = driven_test_model(1.0)
    g = run(G0, m, StepSchedule(0.05, 1, 0.1, 0.3))
    g.write_csv(tmp_path / "g.csv")
    rows = _read(tmp_path / "g.csv")
    assert rows[0] == ["t", "n", "mu_s0", "mu_f0", "cov_00", "cov_01", "cov_11",
                       "newton_iters", "newton_residual", "failed"]
    assert len(rows) == 5 and float(rows[-1][2]) == g.records[-1].mean[0]
    e = run(Ensemble.sample_gaussian(G0, 500, seed=2), m, StepSchedule(0.05, 1, 0.1, 0.3))
    e.write_csv(tmp_path / "e.csv")
    rows = _read(tmp_path / "e.csv")
    for col in ("m2_0", "m3_1", "m4_0", "cov_01", "se_k4_1", "newton_iters", "failed"):
        assert col in rows[0]
    assert all(len(r) == len(rows[0]) for r in rows)
    m4 = float(rows[1][rows[0].index("m4_0")])
    x = e.records[0]
    assert m4 == pytest.approx(x.cumulants.fourth[0] + 3 * x.cov[0, 0] ** 2, rel=1e-12)


def test_trajectory_accessors_skip_failed_rows():
    t = Trajectory("gaussian", 1, 1)
    assert t.verdict == "stable" and t.failure_time is None
