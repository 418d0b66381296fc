import numpy as np
import pytest

from gii import models as mo
from gii.models import ModelError, ShockSet, StructuralConfig


def _shockset(x, eta, seed=0):
    return ShockSet(np.asarray(x, dtype=float), np.asarray(eta, dtype=float), seed)


def test_config_validation():
    with pytest.raises(ModelError):
        StructuralConfig("M9", [1.0], n=1)
    with pytest.raises(ModelError):
        StructuralConfig("M1", [1.0, 0.2, 0.3], n=5, T=2)
    with pytest.raises(ModelError):
        StructuralConfig("M3", [1, 0.2, 0.4], n=5, T=5, s=5)
    with pytest.raises(ModelError):
        StructuralConfig("M4", np.zeros(8), n=5, T=2)
    with pytest.raises(ModelError):
        StructuralConfig("M1", [1, 0.4], n=5, T=3, s=1)
    assert StructuralConfig("M4", np.zeros(8), n=3).J == 3


def test_m1_latent_static():
    cfg = StructuralConfig("M1", [1.0, 0.0], n=1, T=1)
    sh = _shockset([[[0.3]]], [[[[0.0]]], [[[-0.1]]]])
    assert mo.simulate_latent(cfg, sh, 1)[0, 0, 0] == pytest.approx(0.2, abs=1e-15)


def test_m1_latent_ar1_step():
    cfg = StructuralConfig("M1", [1.0, 0.5], n=1, T=2)
    sh = _shockset(np.zeros((1, 2, 1)), np.array([[[[1.0], [0.0]]]]))
    u = mo.simulate_latent(cfg, sh, 0)
    assert u[0, 1, 0] == pytest.approx(0.5, abs=1e-15)


def test_m4_latent_substitution():
    cfg = StructuralConfig("M4", [0, 0, 0, 0, 0, 0, 1, 1], n=1)
    sh = _shockset(np.zeros((3, 1, 1)), np.array([[[[0.2]], [[0.3]]]]))
    u = mo.simulate_latent(cfg, sh, 0)[0, 0]
    np.testing.assert_allclose(u, [0.2, 0.5], atol=1e-15)


def test_binary_half_at_zero_difference():
    cfg = StructuralConfig("M1", [1.0, 0.0], n=1, T=1)
    sh = _shockset([[[0.25]]], [[[[-0.25]]]])
    y = mo.smooth_choices(cfg, sh, 0, 0.1).y
    assert y[0, 0, 0] == 0.5


def test_hard_choice_is_exact_indicator_and_ties_go_to_zero():
    cfg = StructuralConfig("M1", [1.0, 0.0], n=3, T=1)
    sh = _shockset([[[0.5, -0.5, 0.25]]], [[[[0.1, 0.1, -0.25]]]])
    y = mo.smooth_choices(cfg, sh, 0, 0.0).y[:, 0, 0]
    assert y.tolist() == [1.0, 0.0, 0.0]


def test_m2_product_base_case():
    lam = 0.2
    cfg = StructuralConfig("M2", [1.0, 0.7, 0.3], n=4, T=3)
    sh = mo.draw_shocks(cfg, 1, 5)
    y = mo.smooth_choices(cfg, sh, 1, lam).y[:, :, 0]
    v1 = cfg.beta[0] * sh.x[0, 0] + sh.eta[1, 0, 0]
    np.testing.assert_allclose(y[:, 0], 1 / (1 + np.exp(-v1 / lam)), rtol=1e-14)


def _recursion_oracle(b1, b2, r, x, eta, lam, nested):
    K = lambda v: 1.0 / (1.0 + np.exp(-v / lam))
    T, n = x.shape
    eps = np.zeros(n)
    prev = np.zeros(n)
    out = np.zeros((T, n))
    for t in range(T):
        eps = r * eps + eta[t]
        v = b1 * x[t] + eps
        cur = K(v + b2 * prev) if nested else K(v) * (1 - prev) + K(v + b2) * prev
        out[t] = prev = cur
    return out


@pytest.mark.parametrize("nested", [False, True])
def test_dynamic_recursion_matches_loop_oracle(nested):
    cfg = StructuralConfig("M2", [0.8, 0.4, 0.6], n=50, T=6)
    sh = mo.draw_shocks(cfg, 2, 9)
    mode = "nested" if nested else "product"
    y = mo.smooth_choices(cfg, sh, 2, 0.05, dyn_mode=mode).y[:, :, 0].T
    ref = _recursion_oracle(0.8, 0.4, 0.6, sh.x[0], sh.eta[2, 0], 0.05, nested)
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-14)


def test_m4_softmax_oracle():
    cfg = StructuralConfig("M4", [0.1, 1, -0.5, 0.2, 0.7, 1, 0.3, 0.9], n=40)
    sh = mo.draw_shocks(cfg, 1, 3)
    lam = 0.3
    y = mo.smooth_choices(cfg, sh, 1, lam).y[:, 0, :]
    u = mo.simulate_latent(cfg, sh, 1)[:, 0, :]
    den = 1 + np.exp(u[:, 0] / lam) + np.exp(u[:, 1] / lam)
    np.testing.assert_allclose(y[:, 0], np.exp(u[:, 0] / lam) / den, rtol=1e-12)
    np.testing.assert_allclose(y[:, 1], np.exp(u[:, 1] / lam) / den, rtol=1e-12)


def test_m4_hard_choice_is_argmax():
    cfg = StructuralConfig("M4", [0, 1, 1, 0, 1, 1, 0, 1], n=200)
    sh = mo.draw_shocks(cfg, 0, 3)
    y = mo.smooth_choices(cfg, sh, 0, 0.0).y[:, 0, :]
    u = mo.simulate_latent(cfg, sh, 0)[:, 0, :]
    choice = np.argmax(np.column_stack([np.zeros(200), u]), axis=1)
    np.testing.assert_array_equal(y[:, 0], choice == 1)
    np.testing.assert_array_equal(y[:, 1], choice == 2)


def test_m5_selection_outputs():
    cfg = StructuralConfig("M5", [0.5, 1, 0.1, 1, 0.5, 0.8, 0.6], n=100)
    sh = mo.draw_shocks(cfg, 1, 4)
    lam = 0.05
    y = mo.smooth_choices(cfg, sh, 1, lam).y[:, 0, :]
    u, w = mo.simulate_latent(cfg, sh, 1)[:, 0, :].T
    k = 1 / (1 + np.exp(-u / lam))
    np.testing.assert_allclose(y[:, 0], k, rtol=1e-12)
    np.testing.assert_allclose(y[:, 1], w * k, rtol=1e-12)


def test_generate_observed_m3_hides_initial_periods():
    cfg = StructuralConfig("M3", [1, 0.2, 0.4], n=30, T=15, s=5)
    data = mo.generate_observed(cfg, mo.draw_shocks(cfg, 0, 1))
    assert data.y.shape == (30, 15, 1) and data.x.shape == (30, 15, 1)
    assert np.isnan(data.y[:, :5]).all()
    obs = data.y[:, 5:]
    assert obs.shape[1] == 10 and set(np.unique(obs)) <= {0.0, 1.0}


def test_generate_observed_m1_matches_latent_sign():
    cfg = StructuralConfig("M1", [1, 0.4], n=2, T=2)
    sh = mo.draw_shocks(cfg, 0, 8)
    data = mo.generate_observed(cfg, sh)
    u = mo.simulate_latent(cfg, sh, 0)
    np.testing.assert_array_equal(data.y, (u > 0).astype(float))


def test_generate_observed_m5_wage_missing_when_not_working():
    cfg = StructuralConfig("M5", [0.5, 1, -0.2, 1, 0.5, 0.8, 0.6], n=300)
    sh = mo.draw_shocks(cfg, 0, 2)
    data = mo.generate_observed(cfg, sh)
    work, wage = data.y[:, 0, 0], data.y[:, 0, 1]
    u = mo.simulate_latent(cfg, sh, 0)[:, 0, 0]
    np.testing.assert_array_equal(work, (u > 0).astype(float))
    assert np.isnan(wage[u < 0]).all() and np.isfinite(wage[u > 0]).all()


@pytest.mark.parametrize("mid,beta,T", [("M1", [1, 0.4], 5), ("M2", [1, 0.2, 0.4], 5),
                                        ("M4", [0, 1, 1, 0, 1, 1, 0, 1], 1)])
def test_smoothed_in_unit_interval_and_converges(mid, beta, T):
    cfg = StructuralConfig(mid, beta, n=200, T=T)
    sh = mo.draw_shocks(cfg, 2, 6)
    hard = mo.smooth_batch(cfg, sh, 1, 0.0)
    gaps = []
    for lam in (0.1, 0.01, 0.001):
        y = mo.smooth_batch(cfg, sh, 1, lam)
        # (0, 1) in exact arithmetic; saturates to 0.0 / 1.0 in double precision
        assert np.all((y >= 0) & (y <= 1))
        gaps.append(np.max(np.abs(y - hard)))
    # max gap over the panel shrinks; the median individual converges fast
    assert gaps[0] > gaps[1] > gaps[2]
    y = mo.smooth_batch(cfg, sh, 1, 1e-4)
    assert np.median(np.abs(y - hard)) < 1e-8


def test_common_random_numbers_and_reproducibility():
    cfg = StructuralConfig("M1", [1, 0.4], n=50, T=4)
    a = mo.draw_shocks(cfg, 3, 42)
    b = mo.draw_shocks(cfg.with_beta([0.5, -0.2]), 3, 42)
    assert a.digest() == b.digest()
    # first panels do not depend on how many were drawn
    c = mo.draw_shocks(cfg, 7, 42)
    assert c.digest(2) == a.digest(2)
    assert mo.draw_shocks(cfg, 3, 43).digest() != a.digest()
    assert not a.eta.flags.writeable


def test_continuous_in_beta():
    cfg = StructuralConfig("M2", [1, 0.2, 0.4], n=100, T=5)
    sh = mo.draw_shocks(cfg, 1, 1)
    lam, h = 0.03, 1e-7
    y0 = mo.smooth_batch(cfg, sh, 1, lam)
    y1 = mo.smooth_batch(cfg.with_beta(cfg.beta + h), sh, 1, lam)
    assert np.all(np.isfinite(y1))
    assert np.max(np.abs(y1 - y0)) < 50 * h / lam


def test_bad_inputs():
    cfg = StructuralConfig("M1", [1, 0.4], n=5, T=2)
    sh = mo.draw_shocks(cfg, 1, 1)
    with pytest.raises(ModelError):
        mo.smooth_batch(cfg, sh, 1, -0.1)
    with pytest.raises(ModelError):
        mo.smooth_batch(cfg.with_beta([np.nan, 0.1]), sh, 1, 0.1)
    with pytest.raises(ModelError):
        mo.smooth_batch(cfg, sh, 5, 0.1)
    with pytest.raises(ModelError):
        mo.smooth_batch(StructuralConfig("M1", [1, 0.4], n=6, T=2), sh, 1, 0.1)


def test_gaussian_kernel_option():
    from scipy.special import ndtr
    cfg = StructuralConfig("M1", [1, 0.0], n=20, T=1)
    sh = mo.draw_shocks(cfg, 1, 1)
    y = mo.smooth_choices(cfg, sh, 1, 0.5, kernel="gaussian_cdf").y[:, 0, 0]
    u = mo.simulate_latent(cfg, sh, 1)[:, 0, 0]
    np.testing.assert_allclose(y, ndtr(u / 0.5), rtol=1e-13)


def test_static_smoothed_choice_monotone_in_utility():
    cfg = StructuralConfig("M1", [1, 0.0], n=500, T=1)
    sh = mo.draw_shocks(cfg, 1, 2)
    u = mo.simulate_latent(cfg, sh, 1)[:, 0, 0]
    y = mo.smooth_choices(cfg, sh, 1, 0.3).y[:, 0, 0]
    order = np.argsort(u)
    assert np.all(np.diff(y[order]) >= 0)
    assert np.all((y > 0) & (y < 1))  # no saturation at this bandwidth and range
