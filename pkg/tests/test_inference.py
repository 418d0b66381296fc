import numpy as np
import pytest

from gii import auxiliary as aux
from gii import inference as inf
from gii.inference import InferenceError, VarianceParts
from gii.optimize import OptimizerConfig, minimize


def _spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + d * np.eye(d)


# ---------------------------------------------------------------------------
# sandwich algebra


def test_sandwich_identity_inputs():
    I = np.eye(3)
    Omega, se = inf.sandwich(VarianceParts(I, I, I, I), n=4)
    np.testing.assert_allclose(Omega, I, atol=1e-14)
    np.testing.assert_allclose(se, 0.5)


def test_sandwich_scalar_formula():
    g, h, v, u = 0.7, -2.5, 3.0, 1.9
    Omega, _ = inf.sandwich(VarianceParts(*(np.array([[a]]) for a in (g, h, v, u))), n=1)
    assert Omega[0, 0] == pytest.approx(v / (g * g * h * h), rel=1e-13)


def test_sandwich_square_G_is_weight_invariant(rng):
    d = 4
    G = rng.standard_normal((d, d))
    H, V = -_spd(rng, d), _spd(rng, d)
    ref, _ = inf.sandwich(VarianceParts(G, H, V, np.eye(d)), 100)
    for _ in range(3):
        alt, _ = inf.sandwich(VarianceParts(G, H, V, _spd(rng, d)), 100)
        np.testing.assert_allclose(alt, ref, rtol=1e-9, atol=1e-12)
    # closed form for the exactly identified case
    Gi, Hh = np.linalg.inv(G), np.linalg.inv(H)
    np.testing.assert_allclose(ref, Gi @ Hh @ V @ Hh @ Gi.T, rtol=1e-9)


def test_sandwich_scales_with_V_and_n(rng):
    G = rng.standard_normal((6, 2))
    H, V, U = -_spd(rng, 6), _spd(rng, 6), _spd(rng, 6)
    O1, se1 = inf.sandwich(VarianceParts(G, H, V, U), 100)
    O2, se2 = inf.sandwich(VarianceParts(G, H, 3.0 * V, U), 400)
    np.testing.assert_allclose(O2, 3.0 * O1, rtol=1e-12)
    np.testing.assert_allclose(se2, se1 * np.sqrt(3.0 / 4.0), rtol=1e-12)
    assert np.all(np.linalg.eigvalsh(O1) > 0)


def test_sandwich_singular_raises():
    G = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])
    with pytest.raises(InferenceError):
        inf.sandwich(VarianceParts(G, -np.eye(3), np.eye(3), np.eye(3)), 10)


# ---------------------------------------------------------------------------
# score covariance


def test_V_zero_for_identical_panels(rng):
    s = rng.standard_normal((50, 5))
    V = inf.estimate_V_from_scores(s, np.stack([s, s, s]))
    np.testing.assert_allclose(V, 0.0, atol=1e-15)


@pytest.mark.parametrize("M", [1, 3, 7])
def test_V_block_algebra(rng, M):
    n, d = 40, 4
    s = [rng.standard_normal((n, d)) for _ in range(M + 1)]
    S = lambda a, b: s[a].T @ s[b] / n
    ref = S(0, 0)
    ref = ref - sum(S(0, m) + S(m, 0) for m in range(1, M + 1)) / M
    ref = ref + sum(S(m, l) for m in range(1, M + 1) for l in range(1, M + 1)) / M ** 2
    V = inf.estimate_V_from_scores(s[0], np.stack(s[1:]))
    np.testing.assert_allclose(V, ref, rtol=1e-12, atol=1e-14)
    assert np.linalg.eigvalsh(V)[0] >= -1e-12


def test_V_misaligned_raises(rng):
    with pytest.raises(InferenceError):
        inf.estimate_V_from_scores(rng.standard_normal((5, 2)), rng.standard_normal((2, 6, 2)))


def test_V_from_model_scores_is_psd(m1):
    crit = m1.criterion("LR", 0.03)
    ev = crit.binding(m1.cfg.beta)
    from gii.models import smooth_batch
    sim = smooth_batch(m1.cfg, m1.shocks, slice(1, m1.M + 1), 0.03)
    V = inf.estimate_V(m1.spec, m1.design, crit.theta_hat, m1.Y, ev.per_m[0], sim)
    assert V.shape == (m1.spec.d_theta,) * 2
    np.testing.assert_array_equal(V, V.T)
    assert np.linalg.eigvalsh(V)[0] > 0
    with pytest.raises(InferenceError):
        inf.estimate_V(m1.spec, m1.design, crit.theta_hat, m1.Y, ev.per_m[0][:2], sim)


# ---------------------------------------------------------------------------
# G and H


def test_G_recovers_linear_binding(m1, rng):
    crit = m1.criterion("Wald", 0.03)
    A = rng.standard_normal((m1.spec.d_theta, 2))
    c = rng.standard_normal(m1.spec.d_theta)
    crit.theta_bar = lambda b: A @ b + c
    G = inf.estimate_G(crit, np.array([0.8, 0.3]))
    np.testing.assert_allclose(G, A, rtol=1e-9, atol=1e-9)


def test_G_order_condition():
    class Tiny:
        class spec:
            d_theta = 1
        d_beta = 2
    with pytest.raises(InferenceError, match="order condition"):
        inf.estimate_G(Tiny(), np.zeros(2))


def test_G_rank_check():
    with pytest.raises(InferenceError):
        inf.check_rank(np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]]))
    sv = inf.check_rank(np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]]))
    np.testing.assert_allclose(sv, [2.0, 1.0])


def test_G_stable_under_step_halving(m1):
    beta = np.array([0.95, 0.38])
    c1 = m1.criterion("Wald", 0.03)
    c2 = m1.criterion("Wald", 0.03, fd_step=c1.ccfg.fd_step / 2)
    G1, G2 = inf.estimate_G(c1, beta), inf.estimate_G(c2, beta)
    assert np.max(np.abs(G1 - G2)) <= 0.02 * np.max(np.abs(G1))


def test_H_negative_definite_coefficient_block(m1):
    crit = m1.criterion("LR", 0.03)
    H = inf.estimate_H(m1.spec, crit.theta_hat, crit.data_stats)
    np.testing.assert_allclose(H, H.T, atol=1e-12)
    for g, sl in zip(m1.spec.groups, m1.spec.slices()):
        kd = g.k * g.d
        blk = H[sl, sl][:kd, :kd]
        assert np.linalg.eigvalsh(blk)[-1] < 0
    # at the fit the whole matrix is negative definite
    assert np.linalg.eigvalsh(H)[-1] < 0


def test_H_not_interior_raises(m1):
    crit = m1.criterion("LR", 0.03)
    theta = crit.theta_hat.copy()
    parts = aux.unpack(m1.spec, theta)
    A, P = parts[0]
    parts[0] = (A, -P)
    with pytest.raises(InferenceError):
        inf.estimate_H(m1.spec, aux.pack(m1.spec, parts), crit.data_stats)


# ---------------------------------------------------------------------------
# end to end


@pytest.mark.parametrize("kind", ["Wald", "LR", "LM"])
def test_criterion_inference_report(m1, kind):
    crit = m1.criterion(kind, 0.03)
    res = minimize(crit, m1.cfg.beta, OptimizerConfig())
    ir = inf.criterion_inference(crit, res.beta, m1.Y[0])
    rep = ir.report(res.beta, ["b", "r"])
    assert set(rep) == {"beta_hat", "se", "Omega", "condition_numbers"}
    assert set(rep["condition_numbers"]) == {"G", "H", "V", "U"}
    assert np.all(np.isfinite(ir.se)) and np.all(ir.se > 0)
    # n = 1000, T = 5: standard errors of a few hundredths
    assert np.all((ir.se > 0.01) & (ir.se < 0.1))
    np.testing.assert_allclose(ir.se, np.sqrt(np.diag(ir.Omega) / 1000))
    if kind == "LR":
        np.testing.assert_array_equal(ir.parts.U, ir.parts.H)
    elif kind == "Wald":
        np.testing.assert_array_equal(ir.parts.U, crit.W)
