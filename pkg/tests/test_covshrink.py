import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xferscore.covshrink import (
    ShrunkCovarianceModel,
    _alpha_from_moments,
    center_and_standardize,
    class_conditional_covariances,
    class_statistics,
    fit_shrunk_covariance,
    ledoit_wolf_alpha,
    sample_covariance,
    shrunk_covariance,
)
from xferscore.errors import DegenerateInputError, ValidationError


def lw_alpha_literal(F):
    """Direct transcription: per-sample outer products and the normalized Frobenius norm."""
    n, d = F.shape
    S = np.zeros((d, d))
    for i in range(n):
        S += np.outer(F[i], F[i])
    S /= n

    def nrm2(A):
        return np.trace(A @ A.T) / d

    num = sum(nrm2(np.outer(F[i], F[i]) - S) for i in range(n)) / n**2
    den = nrm2(S - np.trace(S) / d * np.eye(d))
    if den < 1e-18:
        return 1.0
    return min(max(num / den, 0.0), 1.0)


def test_standardize_small_cases():
    out = center_and_standardize(np.array([[1.0, 5.0], [3.0, 5.0]]))
    np.testing.assert_array_equal(out[:, 0], [-1.0, 1.0])
    np.testing.assert_array_equal(out[:, 1], [0.0, 0.0])
    out = center_and_standardize(np.array([[5.0], [5.0], [5.0]]))
    np.testing.assert_array_equal(out, 0.0)


def test_standardize_moments(rng):
    F = rng.normal(3.0, 7.0, size=(100, 10))
    Z = center_and_standardize(F)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-10)
    np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-8)


def test_standardize_needs_two_rows():
    with pytest.raises(DegenerateInputError):
        center_and_standardize(np.ones((1, 3)))


def test_sample_covariance_cases(rng):
    np.testing.assert_array_equal(sample_covariance(np.array([[1.0, 0.0], [-1.0, 0.0]])), [[1.0, 0.0], [0.0, 0.0]])
    d = 4
    np.testing.assert_allclose(sample_covariance(np.eye(d)), np.eye(d) / d)
    F = rng.standard_normal((50, 5))
    F -= F.mean(axis=0)
    S = sample_covariance(F)
    ref = np.zeros((5, 5))
    for a in range(5):
        for b in range(5):
            ref[a, b] = sum(F[i, a] * F[i, b] for i in range(50)) / 50
    np.testing.assert_allclose(S, ref, atol=1e-10)
    np.testing.assert_array_equal(S, S.T)
    assert np.linalg.eigvalsh(S).min() > -1e-12


@pytest.mark.parametrize("seed", range(5))
def test_alpha_matches_literal_oracle(seed):
    r = np.random.default_rng(seed)
    F = r.standard_normal((30, 8)) @ r.standard_normal((8, 8))
    F -= F.mean(axis=0)
    assert abs(ledoit_wolf_alpha(F) - lw_alpha_literal(F)) < 1e-10


def test_alpha_wide_matrix_uses_same_formula(rng):
    F = rng.standard_normal((12, 40))
    F -= F.mean(axis=0)
    assert abs(ledoit_wolf_alpha(F) - lw_alpha_literal(F)) < 1e-10


def test_alpha_degenerate_denominator():
    # a single centred row is the zero matrix: no anisotropy, full shrinkage
    assert _alpha_from_moments(1, 3, 0.0, 0.0, 0.0) == 1.0
    F = np.eye(4) * 2.0
    assert ledoit_wolf_alpha(F) == 1.0


def test_alpha_needs_two_rows():
    with pytest.raises(DegenerateInputError):
        ledoit_wolf_alpha(np.ones((1, 3)))


def test_alpha_isotropic_population():
    # the shrinkage target is exact here, so large samples clip to alpha = 1
    # while small ones land just below it
    for seed in range(20):
        r = np.random.default_rng(seed)
        small = r.standard_normal((50, 200))
        big = r.standard_normal((5000, 200))
        a_small = ledoit_wolf_alpha(small - small.mean(axis=0))
        assert 0.0 < a_small < 1.0
        assert ledoit_wolf_alpha(big - big.mean(axis=0)) >= a_small


def test_alpha_shrinks_more_with_fewer_samples():
    scales = np.geomspace(0.2, 5.0, 200)
    larger = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        small = r.standard_normal((50, 200)) * scales
        big = r.standard_normal((5000, 200)) * scales
        a_small = ledoit_wolf_alpha(small - small.mean(axis=0))
        a_big = ledoit_wolf_alpha(big - big.mean(axis=0))
        assert 0.0 < a_small < 1.0
        larger += a_small > a_big
    assert larger > 10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40), st.integers(1, 30), st.floats(1e-3, 1e3))
def test_alpha_range_and_scale_invariance(seed, n, d, c):
    r = np.random.default_rng(seed)
    F = r.standard_normal((n, d)) * r.uniform(0.1, 3.0, size=d)
    F -= F.mean(axis=0)
    a = ledoit_wolf_alpha(F)
    assert 0.0 <= a <= 1.0
    assert abs(ledoit_wolf_alpha(c * F) - a) < 1e-8


def test_shrunk_covariance_limits_and_spectrum(rng):
    A = rng.standard_normal((20, 4))
    A -= A.mean(axis=0)
    m0 = fit_shrunk_covariance(A, alpha=0.0)
    np.testing.assert_allclose(shrunk_covariance(m0), m0.sigma_f)
    m1 = fit_shrunk_covariance(A, alpha=1.0)
    np.testing.assert_allclose(shrunk_covariance(m1), m1.sigma_bar * np.eye(4))
    m = fit_shrunk_covariance(A, alpha=0.3)
    got = np.linalg.eigvalsh(shrunk_covariance(m))
    want = 0.7 * np.linalg.eigvalsh(m.sigma_f) + 0.3 * m.sigma_bar
    np.testing.assert_allclose(got, want, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1.0))
def test_shrunk_min_eigenvalue(seed, alpha):
    r = np.random.default_rng(seed)
    F = r.standard_normal((5, 12))
    F -= F.mean(axis=0)
    m = fit_shrunk_covariance(F, alpha=alpha)
    out = shrunk_covariance(m)
    np.testing.assert_array_equal(out, out.T)
    assert np.linalg.eigvalsh(out).min() >= alpha * m.sigma_bar * (1 - 1e-8)


def test_model_validation():
    with pytest.raises(ValidationError):
        ShrunkCovarianceModel(np.eye(2), alpha=1.5, sigma_bar=1.0)
    with pytest.raises(ValidationError):
        ShrunkCovarianceModel(np.eye(2), alpha=0.5, sigma_bar=-1.0)


def test_class_statistics(rng):
    F = rng.standard_normal((60, 4))
    F -= F.mean(axis=0)
    y = rng.integers(0, 3, 60)
    cs = class_statistics(F, y)
    assert cs.n_samples == 60 and cs.n_classes == 3
    assert np.abs((cs.class_counts[:, None] * cs.class_means).sum(axis=0)).max() < 1e-8 * 60
    # covariance of the class-conditional means, one copy per sample
    Z = cs.class_means[y]
    np.testing.assert_allclose(cs.between_covariance(), Z.T @ Z / 60, atol=1e-10)


def test_one_sample_per_class_has_zero_within(rng):
    F = rng.standard_normal((4, 3))
    F -= F.mean(axis=0)
    y = np.arange(4)
    covs = class_conditional_covariances(F, y)
    assert all(np.all(c == 0) for c in covs)
    np.testing.assert_allclose(class_statistics(F, y).between_covariance(), sample_covariance(F), atol=1e-12)


def test_total_covariance_identity(rng):
    F = rng.standard_normal((60, 4))
    F -= F.mean(axis=0)
    y = rng.integers(0, 3, 60)
    counts = np.bincount(y)
    within = sum(n_c / 60 * c for n_c, c in zip(counts, class_conditional_covariances(F, y)))
    np.testing.assert_allclose(within + class_statistics(F, y).between_covariance(), sample_covariance(F), atol=1e-10)


def test_identical_classes_have_small_between():
    r = np.random.default_rng(3)
    F = r.standard_normal((2000, 5))
    F -= F.mean(axis=0)
    y = r.integers(0, 2, 2000)
    between = class_statistics(F, y).between_covariance()
    assert np.linalg.norm(between) < 0.1 * np.linalg.norm(sample_covariance(F))
