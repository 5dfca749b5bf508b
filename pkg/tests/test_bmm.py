import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from drpl import bmm
from drpl.dataset import Dataset
from drpl.errors import ParameterError, ValidationError


def sample_mixture(n, w_clean, clean=(2.0, 20.0), noisy=(20.0, 2.0), seed=0):
    rng = np.random.default_rng(seed)
    is_noisy = rng.random(n) >= w_clean
    x = np.where(is_noisy, rng.beta(*noisy, size=n), rng.beta(*clean, size=n))
    return np.clip(x, bmm.LOSS_EPS, 1 - bmm.LOSS_EPS), is_noisy


def test_normalize_examples():
    np.testing.assert_allclose(bmm.normalize_losses([0.0, 5.0, 10.0]), [1e-4, 0.5, 1 - 1e-4])
    np.testing.assert_array_equal(bmm.normalize_losses([3.0, 3.0, 3.0]), [0.5] * 3)


@pytest.mark.parametrize("bad", [[1.0, np.nan], [np.inf, 0.0], [1.0]])
def test_normalize_rejects(bad):
    with pytest.raises(ValidationError):
        bmm.normalize_losses(bad)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=50))
def test_normalize_range_and_order(raw):
    x = bmm.normalize_losses(raw)
    assert np.all((x >= bmm.LOSS_EPS) & (x <= 1 - bmm.LOSS_EPS))
    raw = np.asarray(raw)
    i, j = np.meshgrid(np.arange(len(raw)), np.arange(len(raw)))
    assert np.all(x[i][raw[i] < raw[j]] <= x[j][raw[i] < raw[j]])


def test_beta_logpdf_matches_scipy():
    x = np.linspace(0.01, 0.99, 25)
    np.testing.assert_allclose(bmm.beta_logpdf(x, 2.5, 7.0), stats.beta.logpdf(x, 2.5, 7.0), rtol=1e-12)


def test_moment_shapes_recover_mean():
    for a, b in [(2.0, 20.0), (0.8, 0.9), (150.0, 40.0)]:
        mean = a / (a + b)
        var = a * b / ((a + b) ** 2 * (a + b + 1))
        np.testing.assert_allclose(bmm._moments_to_shapes(mean, var), (a, b), rtol=1e-9)


def test_moment_shapes_clamp_keeps_mean():
    # very tight component near zero: clamping alpha and beta separately would move it to 0.5
    a, b = bmm._moments_to_shapes(0.01, 1e-10)
    assert bmm.SHAPE_MIN <= a <= bmm.SHAPE_MAX and bmm.SHAPE_MIN <= b <= bmm.SHAPE_MAX
    assert a / (a + b) == pytest.approx(0.01, rel=1e-9)


def test_recovers_known_mixture():
    x, _ = sample_mixture(4000, 0.7, seed=1)
    m = bmm.fit(x)
    assert m.weights[0] == pytest.approx(0.7, abs=0.03)
    assert m.means[0] == pytest.approx(2 / 22, abs=0.02)
    assert m.means[1] == pytest.approx(20 / 22, abs=0.02)
    assert not m.degenerate
    assert sum(m.weights) == pytest.approx(1.0, abs=1e-12)
    assert m.iterations == 10 and len(m.log_likelihoods) == 10


def test_log_likelihood_does_not_collapse():
    x, _ = sample_mixture(2000, 0.5, seed=2)
    lls = bmm.fit(x).log_likelihoods
    # moment matching is not an exact M-step, so only require no net loss and a settled tail
    assert lls[-1] >= lls[0]
    assert abs(lls[-1] - lls[-2]) < 1e-6 * abs(lls[-1])


def test_components_ordered_by_mean():
    x, _ = sample_mixture(1000, 0.2, seed=3)
    m = bmm.fit(x)
    assert m.means[0] < m.means[1]


def test_losses_near_half_are_degenerate():
    x = np.random.default_rng(4).normal(0.5, 0.01, size=1000)
    assert bmm.fit(x).degenerate


def test_constant_input_fits_and_flags():
    m = bmm.fit(np.full(50, 0.5))
    assert m.degenerate
    assert np.isfinite(m.weights).all() and np.isfinite(m.alphas).all()


def test_fit_rejects():
    with pytest.raises(ValidationError):
        bmm.fit(np.linspace(0.1, 0.9, 5))
    with pytest.raises(ValidationError):
        bmm.fit(np.r_[np.linspace(0.1, 0.9, 20), np.nan])
    with pytest.raises(ParameterError):
        bmm.fit(np.linspace(0.1, 0.9, 20), iters=0)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_fit_permutation_invariant(seed):
    x, _ = sample_mixture(200, 0.6, seed=seed)
    perm = np.random.default_rng(seed + 1).permutation(x.shape[0])
    a, b = bmm.fit(x), bmm.fit(x[perm])
    np.testing.assert_allclose(a.weights, b.weights, rtol=1e-9)
    np.testing.assert_allclose(a.alphas, b.alphas, rtol=1e-9)
    np.testing.assert_allclose(a.betas, b.betas, rtol=1e-9)


def test_posterior_matches_scipy_oracle():
    m = bmm.BetaMixture((0.6, 0.4), (2.0, 6.0), (8.0, 3.0))
    x = np.linspace(0.02, 0.98, 30)
    c = 0.6 * stats.beta.pdf(x, 2.0, 8.0)
    n = 0.4 * stats.beta.pdf(x, 6.0, 3.0)
    post = bmm.posterior(m, x)
    np.testing.assert_allclose(post.noisy, n / (c + n), rtol=1e-10)
    np.testing.assert_allclose(post.clean + post.noisy, 1.0)
    # log-odds equal the density ratio
    np.testing.assert_allclose(np.log(post.noisy / post.clean), np.log(n / c), rtol=1e-8)


def test_posterior_symmetric_mixture():
    m = bmm.BetaMixture((0.5, 0.5), (2.0, 5.0), (5.0, 2.0))
    x = np.linspace(0.05, 0.95, 19)
    p = bmm.posterior(m, x).noisy
    np.testing.assert_allclose(p, 1 - p[::-1], atol=1e-12)
    assert p[9] == pytest.approx(0.5)
    assert np.all(np.diff(p) > 0)


def test_posterior_no_nan_at_extremes():
    m = bmm.BetaMixture((0.5, 0.5), (bmm.SHAPE_MIN, 300.0), (300.0, bmm.SHAPE_MIN))
    p = bmm.posterior(m, [0.0, 1e-12, 0.5, 1 - 1e-12, 1.0]).noisy
    assert np.all(np.isfinite(p)) and np.all((p >= 0) & (p <= 1))


def test_bimodal_posterior_agrees_with_truth():
    rng = np.random.default_rng(5)
    truth = np.r_[np.zeros(500, bool), np.ones(500, bool)]
    x = np.clip(np.where(truth, rng.normal(0.9, 0.04, 1000), rng.normal(0.1, 0.04, 1000)), 1e-4, 1 - 1e-4)
    p = bmm.posterior(bmm.fit(x), x).noisy
    assert np.mean((p > 0.5) == truth) >= 0.99


def _ds(n):
    y = np.arange(n) % 2
    return Dataset(np.zeros((n, 1)), y, 2)


def test_split_example():
    s = bmm.split(_ds(3), np.array([0.01, 0.5, 0.99]), 0.05)
    assert s.labeled.tolist() == [0] and s.unlabeled.tolist() == [1, 2]
    assert s.labels.tolist() == [0]
    assert s.sizes == (1, 2)


def test_split_boundary_is_inclusive():
    s = bmm.split(_ds(2), np.array([0.5, 0.5000001]), 0.5)
    assert s.labeled.tolist() == [0]


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 0.99))
def test_split_partitions(p, gamma):
    ds = _ds(len(p))
    s = bmm.split(ds, np.array(p), gamma)
    assert sorted(np.r_[s.labeled, s.unlabeled].tolist()) == list(range(len(p)))
    np.testing.assert_array_equal(s.labels, ds.observed[s.labeled])


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.2])
def test_split_rejects_gamma(gamma):
    with pytest.raises(ParameterError):
        bmm.split(_ds(3), np.zeros(3), gamma)


def test_split_rejects_length():
    with pytest.raises(ValidationError):
        bmm.split(_ds(3), np.zeros(4), 0.5)


def test_json_round_trip():
    x, _ = sample_mixture(300, 0.5, seed=6)
    m = bmm.fit(x)
    assert bmm.BetaMixture.from_json(m.to_json()) == m
