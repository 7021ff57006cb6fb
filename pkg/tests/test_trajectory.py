"""Cosine-basis trajectories: basis properties, evaluation, fitting."""

import numpy as np
import pytest

from trajfield import trajectory as tj


def random_coeffs(rng, T=24, K=23, scale=1.0):
    return tj.TrajectoryCoeffs(coeffs=rng.normal(0, scale, size=(3, K)), T=T)


class TestBasis:
    def test_orthonormal_rows(self):
        b = tj.basis_matrix(24, 23)            # (K, T)
        gram = b @ b.T
        assert np.max(np.abs(gram - np.eye(23))) < 1e-12

    def test_first_frame_value(self):
        # T=24, K=1, phi_x1 = 1: x(0) = sqrt(2/24) * cos(pi/48)
        c = tj.TrajectoryCoeffs(coeffs=np.array([[1.0], [0.0], [0.0]]), T=24)
        expected = np.sqrt(2.0 / 24.0) * np.cos(np.pi / 48.0)
        assert np.isclose(tj.idct_eval(c, 0.0)[0], expected, rtol=0, atol=1e-15)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        c1, c2 = random_coeffs(rng), random_coeffs(rng)
        a, b = 0.7, -1.3
        mix = tj.TrajectoryCoeffs(coeffs=a * c1.coeffs + b * c2.coeffs, T=24)
        ts = rng.uniform(0, 23, size=11)
        lhs = tj.idct_eval(mix, ts)
        rhs = a * tj.idct_eval(c1, ts) + b * tj.idct_eval(c2, ts)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_velocity_bound(self):
        # |T(t+eps) - T(t)| / eps <= sqrt(2/T) * sum_k |phi_k| * pi k / T
        rng = np.random.default_rng(1)
        c = random_coeffs(rng, T=16, K=10)
        k = np.arange(1, 11)
        bound = np.sqrt(2.0 / 16.0) * np.sum(
            np.abs(c.coeffs) * np.pi * k / 16.0, axis=1)
        eps = 1e-6
        ts = np.linspace(0, 15 - eps, 400)
        vel = (tj.idct_eval(c, ts + eps) - tj.idct_eval(c, ts)) / eps
        assert np.all(np.abs(vel) <= bound[None, :] + 1e-9)


class TestDisplacement:
    def test_same_time_zero(self):
        c = random_coeffs(np.random.default_rng(2))
        for t in (0.0, 3.7, 23.0):
            assert np.array_equal(tj.displacement(c, t, t), np.zeros(3))

    def test_antisymmetry(self):
        c = random_coeffs(np.random.default_rng(3))
        d1 = tj.displacement(c, 2.0, 9.5)
        d2 = tj.displacement(c, 9.5, 2.0)
        assert np.allclose(d1, -d2, atol=1e-15)

    def test_zero_coeffs_no_motion(self):
        c = tj.TrajectoryCoeffs(coeffs=np.zeros((3, 23)), T=24)
        p = np.array([0.1, -0.5, 0.3])
        for t1 in range(24):
            assert np.array_equal(tj.correspond(p, c, 0, t1), p)

    def test_displacement_matrix_matches_pointwise(self):
        rng = np.random.default_rng(4)
        c = random_coeffs(rng)
        m = tj.displacement_matrix(24, 23, 3.0, 17.0)
        assert np.allclose(c.flat @ m, tj.displacement(c, 3.0, 17.0), atol=1e-14)


class TestFit:
    def test_constant_track_all_zero(self):
        track = np.tile([1.0, -2.0, 0.5], (24, 1))
        c = tj.fit_dct(track, K=23)
        assert np.max(np.abs(c.coeffs)) < 1e-12

    def test_roundtrip_known_coeffs(self):
        rng = np.random.default_rng(5)
        c = random_coeffs(rng)
        samples = tj.idct_eval(c, np.arange(24.0))
        rec = tj.fit_dct(samples, K=23)
        assert np.max(np.abs(rec.coeffs - c.coeffs)) < 1e-9

    def test_fit_then_eval_matches_samples(self):
        rng = np.random.default_rng(6)
        c = random_coeffs(rng, K=7)
        samples = tj.idct_eval(c, np.arange(24.0))
        rec = tj.fit_dct(samples, K=7)
        again = tj.idct_eval(rec, np.arange(24.0))
        assert np.max(np.abs(again - samples)) < 1e-9

    def test_full_basis_residual_equals_dc_removal(self):
        # K = T-1 spans everything except the constant; the fit residual is
        # exactly the per-axis mean-removed ... zero.
        rng = np.random.default_rng(7)
        track = rng.normal(size=(12, 3))
        c = tj.fit_dct(track, K=11)
        rec = tj.idct_eval(c, np.arange(12.0))
        resid = track - rec
        # residual should be a constant per axis (the discarded DC term)
        assert np.max(np.abs(resid - resid.mean(axis=0))) < 1e-9

    def test_linear_track_correspondence(self):
        # A linearly translating point is reproduced to fit residual.
        vel = np.array([0.05, -0.02, 0.01])
        track = np.arange(24.0)[:, None] * vel
        c = tj.fit_dct(track, K=23)
        p = np.array([1.0, 2.0, 3.0])
        for t1 in (5, 23):
            expect = p + (track[t1] - track[0])
            got = tj.correspond(p, c, 0, t1)
            assert np.max(np.abs(got - expect)) < 1e-9

    def test_validation(self):
        with pytest.raises(ValueError):
            tj.fit_dct(np.zeros((24, 3)), K=24)
        with pytest.raises(ValueError):
            tj.TrajectoryCoeffs(coeffs=np.zeros((3, 24)), T=24)

    def test_default_num_coeffs(self):
        assert tj.default_num_coeffs(24) == 23
        assert tj.default_num_coeffs(32) == 31
        assert tj.default_num_coeffs(33) == 16


def test_a1_style_roundtrip_sweep():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        c = random_coeffs(rng)
        samples = tj.idct_eval(c, np.arange(24.0))
        rec = tj.fit_dct(samples, K=23)
        worst = max(worst, float(np.max(np.abs(rec.coeffs - c.coeffs))))
    assert worst < 1e-9
