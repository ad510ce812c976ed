"""Attention layer behavior: simplex samples, limits, masking, composition."""

import numpy as np
import pytest

from stochattn import autodiff as ad
from stochattn import attention as attn
from stochattn.errors import ConfigError, DegenerateRowError, DimensionError

from test_autodiff import check_grads, leaf


def wcfg(k=2.0, **kw):
    base = dict(mode="weibull", d_k=3, d_v=2, k=k)
    base.update(kw)
    return attn.AttentionConfig(**base)


def lcfg(sigma=0.5, **kw):
    base = dict(mode="lognormal", d_k=3, d_v=2, sigma=sigma)
    base.update(kw)
    return attn.AttentionConfig(**base)


# -------------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ConfigError):
        attn.AttentionConfig(mode="gumbel", d_k=2, d_v=2)
    with pytest.raises(ConfigError):
        attn.AttentionConfig(mode="weibull", d_k=2, d_v=2)  # k missing
    with pytest.raises(ConfigError):
        attn.AttentionConfig(mode="lognormal", d_k=2, d_v=2, sigma=-1.0)
    with pytest.raises(ConfigError):
        attn.AttentionConfig(mode="deterministic", d_k=2, d_v=2, heads=0)
    with pytest.raises(ConfigError):
        attn.AttentionConfig(mode="deterministic", d_k=2, d_v=2, score_fn="bilinear")


# --------------------------------------------------------------------- score

def test_scaled_dot_identity():
    eye = ad.Tensor(np.eye(2))
    phi = attn.score(eye, eye, "scaled-dot-product")
    np.testing.assert_allclose(phi.data, np.eye(2) / np.sqrt(2.0), rtol=1e-15)


def test_additive_zero_vectors_give_zero_scores():
    rng = np.random.default_rng(0)
    q = ad.Tensor(rng.normal(size=(4, 3)))
    k = ad.Tensor(rng.normal(size=(5, 3)))
    zero = ad.Tensor(np.zeros((3, 1)))
    phi = attn.score(q, k, "additive-leakyrelu", attn_src=zero, attn_dst=zero)
    np.testing.assert_array_equal(phi.data, np.zeros((4, 5)))


def test_score_gradients():
    rng = np.random.default_rng(1)
    q = leaf(rng, 4, 3)
    k = leaf(rng, 5, 3)
    coef = leaf(rng, 4, 5)
    check_grads(lambda: (attn.score(q, k) * coef).sum(), [q, k])
    a_src = leaf(rng, 3, 1)
    a_dst = leaf(rng, 3, 1)

    def f():
        phi = attn.score(q, k, "additive-leakyrelu", attn_src=a_src, attn_dst=a_dst)
        return (phi * coef).sum()

    check_grads(f, [q, k, a_src, a_dst])


def test_score_dimension_errors():
    with pytest.raises(DimensionError):
        attn.score(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 4))))
    with pytest.raises(DimensionError):
        attn.score(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 3))),
                   "additive-leakyrelu", attn_src=ad.Tensor(np.zeros((2, 1))),
                   attn_dst=ad.Tensor(np.zeros((3, 1))))


# ------------------------------------------------------------- deterministic

def test_deterministic_uniform_weights():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(5, 3))
    _, o = attn.deterministic_attention(ad.Tensor(np.zeros((2, 5))), ad.Tensor(v))
    np.testing.assert_allclose(o.data, np.tile(v.mean(axis=0), (2, 1)), rtol=1e-12)


def test_deterministic_one_hot_mask():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(4, 2))
    mask = np.zeros((3, 4), dtype=bool)
    mask[:, 2] = True
    w, o = attn.deterministic_attention(ad.Tensor(rng.normal(size=(3, 4))),
                                        ad.Tensor(v), mask=mask)
    np.testing.assert_array_equal(w.data[:, 2], np.ones(3))
    np.testing.assert_allclose(o.data, np.tile(v[2], (3, 1)), rtol=1e-15)


def test_deterministic_rows_sum_to_one():
    rng = np.random.default_rng(4)
    w, _ = attn.deterministic_attention(ad.Tensor(rng.normal(size=(4, 6))),
                                        ad.Tensor(rng.normal(size=(6, 2))))
    np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------- stochastic

def test_expectation_substitution_bit_identical():
    rng = np.random.default_rng(5)
    phi = ad.Tensor(rng.normal(size=(4, 6)))
    v = ad.Tensor(rng.normal(size=(6, 2)))
    mask = rng.random((4, 6)) < 0.7
    mask[:, 0] = True
    _, o_det = attn.deterministic_attention(phi, v, mask=mask)
    for cfg in (wcfg(), lcfg()):
        sample, o = attn.stochastic_attention(phi, v, cfg, None, mask=mask,
                                              training=False)
        np.testing.assert_array_equal(o.data, o_det.data)
        np.testing.assert_array_equal(sample.w.data[~mask], 0.0)


def test_lognormal_tiny_sigma_matches_deterministic():
    rng = np.random.default_rng(6)
    phi = ad.Tensor(rng.normal(size=(3, 5)))
    v = ad.Tensor(rng.normal(size=(5, 2)))
    cfg = lcfg(sigma=1e-8)
    eps = rng.normal(size=15)
    _, o = attn.stochastic_attention(phi, v, cfg, eps, training=True)
    _, o_det = attn.deterministic_attention(phi, v)
    np.testing.assert_allclose(o.data, o_det.data, atol=1e-6)


def test_weibull_large_k_mean_matches_softmax():
    rng = np.random.default_rng(7)
    phi = ad.Tensor(rng.normal(size=(3, 5)))
    cfg = wcfg(k=1000.0)
    target = ad.softmax_rows(phi).data
    acc = np.zeros((3, 5))
    n = 10 ** 4
    for _ in range(n):
        sample = attn.stochastic_weights_dense(phi, cfg, rng.random(15))
        acc += sample.w.data
    assert np.abs(acc / n - target).max() < 0.002


def test_sampled_rows_on_simplex():
    rng = np.random.default_rng(8)
    phi = ad.Tensor(rng.normal(size=(5, 7)) * 3.0)
    mask = rng.random((5, 7)) < 0.6
    mask[:, 3] = True
    for cfg in (wcfg(k=0.7), lcfg(sigma=2.0)):
        eps = attn.draw_noise(cfg, int(mask.sum()), rng)
        sample = attn.stochastic_weights_dense(phi, cfg, eps, mask=mask)
        w = sample.w.data
        assert np.all(w >= 0.0)
        np.testing.assert_array_equal(w[~mask], 0.0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(sample.s.data[mask] > 0.0)
        np.testing.assert_allclose(
            w[mask], sample.s.data[mask] / sample.s.data.sum(axis=1, keepdims=True)
            .repeat(7, axis=1)[mask], rtol=1e-12)


def test_sampling_reproducible_from_seed():
    phi = ad.Tensor(np.random.default_rng(9).normal(size=(4, 4)))
    cfg = wcfg()
    w1 = attn.stochastic_weights_dense(
        phi, cfg, attn.draw_noise(cfg, 16, np.random.default_rng(123))).w.data
    w2 = attn.stochastic_weights_dense(
        phi, cfg, attn.draw_noise(cfg, 16, np.random.default_rng(123))).w.data
    np.testing.assert_array_equal(w1, w2)


def test_large_scores_stay_finite():
    phi = ad.Tensor(np.array([[500.0, -300.0, 200.0], [900.0, 899.0, -900.0]]))
    rng = np.random.default_rng(10)
    for cfg in (wcfg(), lcfg()):
        eps = attn.draw_noise(cfg, 6, rng)
        sample = attn.stochastic_weights_dense(phi, cfg, eps)
        assert np.isfinite(sample.w.data).all()
        np.testing.assert_allclose(sample.w.data.sum(axis=1), 1.0, atol=1e-9)


def test_stochastic_pathwise_gradients():
    rng = np.random.default_rng(11)
    phi = leaf(rng, 3, 4)
    v = leaf(rng, 4, 2)
    mask = rng.random((3, 4)) < 0.75
    mask[:, 1] = True
    count = int(mask.sum())
    for cfg in (wcfg(), lcfg()):
        eps = attn.draw_noise(cfg, count, rng)

        def f():
            _, o = attn.stochastic_attention(phi, v, cfg, eps, mask=mask)
            return (o * o).sum()

        check_grads(f, [phi, v])


def test_degenerate_row_and_noise_count_errors():
    phi = ad.Tensor(np.zeros((2, 3)))
    mask = np.array([[True, True, True], [False, False, False]])
    with pytest.raises(DegenerateRowError):
        attn.stochastic_weights_dense(phi, wcfg(), np.full(3, 0.5), mask=mask)
    with pytest.raises(DimensionError):
        attn.stochastic_weights_dense(phi, wcfg(), np.full(4, 0.5))
    with pytest.raises(ConfigError):
        attn.stochastic_weights_dense(
            phi, attn.AttentionConfig(mode="deterministic", d_k=3, d_v=2), np.ones(6))


# ----------------------------------------------------------------- edge path

def edges_from_mask(mask):
    rows, cols = np.nonzero(mask)
    return rows, cols


def test_edge_layout_matches_dense_layout():
    rng = np.random.default_rng(12)
    phi_data = rng.normal(size=(5, 6)) * 2.0
    mask = rng.random((5, 6)) < 0.5
    mask[np.arange(5), np.arange(5)] = True
    rows, cols = edges_from_mask(mask)
    for cfg in (wcfg(k=1.0), lcfg(sigma=0.9)):
        eps = attn.draw_noise(cfg, len(rows), np.random.default_rng(77))
        dense = attn.stochastic_weights_dense(ad.Tensor(phi_data), cfg, eps, mask=mask)
        edge = attn.stochastic_weights_edges(
            ad.Tensor(phi_data[rows, cols]), rows, 5, cfg, eps)
        np.testing.assert_allclose(edge.w.data, dense.w.data[rows, cols],
                                   rtol=1e-10, atol=1e-14)
        # evaluation path too
        dense_e = attn.stochastic_weights_dense(ad.Tensor(phi_data), cfg, None,
                                                mask=mask, training=False)
        edge_e = attn.stochastic_weights_edges(
            ad.Tensor(phi_data[rows, cols]), rows, 5, cfg, None, training=False)
        np.testing.assert_allclose(edge_e.w.data, dense_e.w.data[rows, cols],
                                   rtol=1e-10, atol=1e-14)


def test_edge_layout_gradients_and_errors():
    rng = np.random.default_rng(13)
    rows = np.array([0, 0, 1, 1, 1, 2])
    phi_e = leaf(rng, 6)
    coef = leaf(rng, 6)
    cfg = wcfg()
    eps = attn.draw_noise(cfg, 6, rng)
    check_grads(lambda: (attn.stochastic_weights_edges(phi_e, rows, 3, cfg, eps).w
                         * coef).sum(), [phi_e])
    with pytest.raises(DegenerateRowError):
        attn.stochastic_weights_edges(phi_e, rows, 4, cfg, eps)


# ------------------------------------------------------- multi-head / stacks

def head_params(rng, d_in, d_k, d_v, additive=False):
    kw = {}
    if additive:
        kw = dict(attn_src=leaf(rng, d_k, 1), attn_dst=leaf(rng, d_k, 1))
    return attn.HeadParams(m_q=leaf(rng, d_in, d_k), m_k=leaf(rng, d_in, d_k),
                           m_v=leaf(rng, d_in, d_v), **kw)


def test_single_head_layer_reduces_to_plain_attention():
    rng = np.random.default_rng(14)
    x = ad.Tensor(rng.normal(size=(4, 5)))
    head = head_params(rng, 5, 3, 2)
    cfg = wcfg(heads=1)
    eps = attn.draw_noise(cfg, 16, np.random.default_rng(5))
    out, samples = attn.multi_head_layer(x, x, [head], cfg, eps=[eps])
    q = x.data @ head.m_q.data
    k = x.data @ head.m_k.data
    v = x.data @ head.m_v.data
    phi = ad.Tensor(q @ k.T / np.sqrt(3.0))
    sample, o = attn.stochastic_attention(phi, ad.Tensor(v), cfg, eps)
    np.testing.assert_allclose(out.data, o.data, rtol=1e-12)
    assert len(samples) == 1


def test_two_identical_heads_give_identical_halves():
    rng = np.random.default_rng(15)
    x = ad.Tensor(rng.normal(size=(4, 5)))
    head = head_params(rng, 5, 3, 2)
    cfg = wcfg(heads=2)
    eps = attn.draw_noise(cfg, 16, rng)
    out, _ = attn.multi_head_layer(x, x, [head, head], cfg, eps=[eps, eps])
    np.testing.assert_array_equal(out.data[:, :2], out.data[:, 2:])


def test_multi_head_gradients():
    rng = np.random.default_rng(16)
    x = ad.Tensor(rng.normal(size=(3, 4)))
    heads = [head_params(rng, 4, 3, 2) for _ in range(2)]
    cfg = wcfg(heads=2)
    eps = [attn.draw_noise(cfg, 9, rng) for _ in range(2)]

    def f():
        out, _ = attn.multi_head_layer(x, x, heads, cfg, eps=eps)
        return (out * out).sum()

    check_grads(f, [heads[0].m_q, heads[1].m_v])


def test_multi_head_errors():
    rng = np.random.default_rng(17)
    x = ad.Tensor(rng.normal(size=(3, 4)))
    head = head_params(rng, 4, 3, 2)
    with pytest.raises(DimensionError):
        attn.multi_head_layer(x, x, [head], wcfg(heads=2), eps=np.random.default_rng(0))
    bad = attn.HeadParams(m_q=head.m_q, m_k=head.m_k,
                          m_v=ad.Tensor(np.zeros((4, 5))))
    with pytest.raises(DimensionError):
        attn.multi_head_layer(x, x, [bad], wcfg(heads=1), eps=np.random.default_rng(0))
    with pytest.raises(ConfigError):
        attn.multi_head_layer(x, x, [head], wcfg(heads=1), eps=None, training=True)


def test_stack_single_layer_equals_multi_head_layer():
    rng = np.random.default_rng(18)
    x = ad.Tensor(rng.normal(size=(4, 5)))
    head = head_params(rng, 5, 3, 2)
    cfg = wcfg(heads=1)
    eps = attn.draw_noise(cfg, 16, rng)
    out1, _ = attn.multi_head_layer(x, x, [head], cfg, eps=[eps])
    out2, samples = attn.stack_layers(
        [attn.LayerSpec(heads=[head], cfg=cfg)], x, eps=[[eps]])
    np.testing.assert_array_equal(out1.data, out2.data)
    assert len(samples) == 1 and len(samples[0]) == 1


def test_stack_eval_equals_deterministic_stack():
    rng = np.random.default_rng(19)
    x = ad.Tensor(rng.normal(size=(4, 5)))
    h1 = head_params(rng, 5, 3, 3)
    h2 = head_params(rng, 3, 2, 2)
    stoch = [attn.LayerSpec(heads=[h1], cfg=wcfg(d_v=3), activation=ad.elu),
             attn.LayerSpec(heads=[h2], cfg=wcfg(d_k=2))]
    det = [attn.LayerSpec(heads=[h1],
                          cfg=attn.AttentionConfig(mode="deterministic", d_k=3, d_v=3),
                          activation=ad.elu),
           attn.LayerSpec(heads=[h2],
                          cfg=attn.AttentionConfig(mode="deterministic", d_k=2, d_v=2))]
    out_s, _ = attn.stack_layers(stoch, x, eps=None, training=False)
    out_d, _ = attn.stack_layers(det, x, eps=None, training=False)
    np.testing.assert_array_equal(out_s.data, out_d.data)


def test_stack_cross_layer_noise_dependency():
    rng = np.random.default_rng(20)
    x = ad.Tensor(rng.normal(size=(4, 5)))
    h1 = head_params(rng, 5, 3, 3)
    h2 = head_params(rng, 3, 2, 2)
    specs = [attn.LayerSpec(heads=[h1], cfg=wcfg(d_v=3)),
             attn.LayerSpec(heads=[h2], cfg=wcfg(d_k=2))]
    eps2 = attn.draw_noise(specs[1].cfg, 16, rng)
    eps1_a = attn.draw_noise(specs[0].cfg, 16, rng)
    eps1_b = attn.draw_noise(specs[0].cfg, 16, rng)
    _, samples_a = attn.stack_layers(specs, x, eps=[[eps1_a], [eps2]])
    _, samples_b = attn.stack_layers(specs, x, eps=[[eps1_b], [eps2]])
    phi_a = samples_a[1][0].phi.data
    phi_b = samples_b[1][0].phi.data
    assert np.abs(phi_a - phi_b).max() > 1e-6
