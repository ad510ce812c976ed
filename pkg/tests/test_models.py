import numpy as np
import pytest

from stochattn import autodiff as ad
from stochattn import models as md
from stochattn import objective as obj
from stochattn import prior as pr
from stochattn.data import GraphDataset
from stochattn.errors import ConfigError


def toy_graph(n=12, f=5, c=3, seed=0):
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(n, f))
    edges = np.array([[i, (i * 3 + 1) % n] for i in range(n)], dtype=np.intp)
    labels = rng.integers(0, c, size=n)
    thirds = n // 3
    splits = {"train": np.arange(0, thirds), "val": np.arange(thirds, 2 * thirds),
              "test": np.arange(2 * thirds, n), "none": np.array([], dtype=np.intp)}
    return GraphDataset("toy", features, edges, labels, splits)


WC_PRIOR = pr.PriorConfig(kind="contextual", family="gamma", beta=1.0, d_mid=2)
LC_PRIOR = pr.PriorConfig(kind="fixed", family="lognormal", sigma1=1.0, mu_fixed=0.0)

MODES = [
    dict(mode="deterministic"),
    dict(mode="weibull", k=2.0, prior=WC_PRIOR),
    dict(mode="lognormal", sigma=0.5, prior=LC_PRIOR),
]


# ------------------------------------------------------------- adjacency

def test_adjacency_symmetric_with_self_loops():
    edges = np.array([[0, 1], [2, 1]])
    rows, cols = md.build_adjacency(edges, 4)
    pairs = set(zip(rows.tolist(), cols.tolist()))
    assert pairs == {(0, 0), (1, 1), (2, 2), (3, 3), (0, 1), (1, 0), (1, 2), (2, 1)}
    # sorted row-major
    order = np.lexsort((cols, rows))
    assert np.array_equal(order, np.arange(len(rows)))


def test_adjacency_deduplicates():
    edges = np.array([[0, 1], [1, 0], [0, 0]])
    rows, cols = md.build_adjacency(edges, 2)
    assert len(rows) == 4  # 2 loops + 2 directions


def test_adjacency_no_edges_is_loops_only():
    rows, cols = md.build_adjacency(np.zeros((0, 2), dtype=np.intp), 3)
    assert np.array_equal(rows, [0, 1, 2]) and np.array_equal(cols, [0, 1, 2])


# ----------------------------------------------------------- config checks

def test_graph_config_validation():
    with pytest.raises(ConfigError):
        md.GraphModelConfig(mode="gumbel")
    with pytest.raises(ConfigError):
        md.GraphModelConfig(mode="weibull")  # k missing
    with pytest.raises(ConfigError):
        md.GraphModelConfig(mode="lognormal")  # sigma missing
    with pytest.raises(ConfigError):
        md.GraphModelConfig(mode="deterministic", prior=WC_PRIOR)
    with pytest.raises(ConfigError):
        md.GraphModelConfig(mode="weibull", k=1.0, prior=LC_PRIOR)  # family mismatch
    with pytest.raises(ConfigError):
        md.GraphModelConfig(dropout=1.0)
    with pytest.raises(ConfigError):
        md.GraphModelConfig(layout="blocked")


# ------------------------------------------------------------ trivial cases

def test_identical_features_give_uniform_attention_and_logits():
    n = 5
    features = np.ones((n, 3))
    edges = np.array([[i, j] for i in range(n) for j in range(i + 1, n)])
    labels = np.zeros(n, dtype=np.intp)
    splits = {"train": np.arange(n), "val": np.arange(n), "test": np.arange(n),
              "none": np.array([], dtype=np.intp)}
    ds = GraphDataset("toy", features, edges, labels, splits)
    model = md.GraphModel(ds, md.GraphModelConfig(heads1=2, feat1=4, dropout=0.0), seed=0)
    logits, _ = model.forward(rng=None, training=False)
    # every node sees the same neighborhood of identical features
    assert np.allclose(logits.data, logits.data[0], atol=1e-12)
    maps = model.attention_maps(1, 0, np.random.default_rng(0))
    np.testing.assert_allclose(maps["expected"], 1.0 / n, atol=1e-12)


# ----------------------------------------------------- layout equivalence

@pytest.mark.parametrize("kw", MODES, ids=lambda kw: kw["mode"])
def test_dense_and_sparse_layouts_agree(kw):
    ds = toy_graph()
    outs = []
    for layout in ("sparse", "dense"):
        cfg = md.GraphModelConfig(heads1=2, feat1=4, dropout=0.4, layout=layout, **kw)
        model = md.GraphModel(ds, cfg, seed=1)
        logits, kls = model.forward(np.random.default_rng(7), training=True)
        outs.append((logits.data, sum(k.item() for k in kls)))
    assert np.abs(outs[0][0] - outs[1][0]).max() <= 1e-10
    assert abs(outs[0][1] - outs[1][1]) <= 1e-10


@pytest.mark.parametrize("kw", MODES, ids=lambda kw: kw["mode"])
def test_dense_and_sparse_agree_at_eval(kw):
    ds = toy_graph()
    outs = []
    for layout in ("sparse", "dense"):
        cfg = md.GraphModelConfig(heads1=2, feat1=4, layout=layout, **kw)
        model = md.GraphModel(ds, cfg, seed=1)
        logits, _ = model.forward(rng=None, training=False)
        outs.append(logits.data)
    assert np.abs(outs[0] - outs[1]).max() <= 1e-10


def test_eval_equals_deterministic_model_bitwise():
    # expectation substitution: a stochastic model at eval time is exactly the
    # softmax model with the same attention parameters
    ds = toy_graph()
    det = md.GraphModel(ds, md.GraphModelConfig(heads1=2, feat1=4), seed=9)
    for kw in MODES[1:]:
        stoch = md.GraphModel(ds, md.GraphModelConfig(heads1=2, feat1=4, **kw), seed=9)
        a, _ = det.forward(rng=None, training=False)
        b, _ = stoch.forward(rng=None, training=False)
        np.testing.assert_array_equal(a.data, b.data)


# --------------------------------------------------------- equivariance

def test_permutation_equivariance_deterministic():
    ds = toy_graph()
    n = ds.n_nodes
    model = md.GraphModel(ds, md.GraphModelConfig(heads1=2, feat1=4), seed=3)
    logits, _ = model.forward(rng=None, training=False)

    rng = np.random.default_rng(1)
    old_of = rng.permutation(n)          # new index j holds old node old_of[j]
    new_of = np.empty(n, dtype=np.intp)
    new_of[old_of] = np.arange(n)
    permuted = GraphDataset(
        name="toy",
        features=ds.features[old_of],
        edges=new_of[ds.edges],
        labels=ds.labels[old_of],
        splits={k: np.sort(new_of[v]) for k, v in ds.splits.items()},
    )
    model_p = md.GraphModel(permuted, md.GraphModelConfig(heads1=2, feat1=4), seed=3)
    logits_p, _ = model_p.forward(rng=None, training=False)
    np.testing.assert_allclose(logits_p.data, logits.data[old_of], atol=1e-10)


# ------------------------------------------------------------- training api

def test_loss_uses_train_split_and_counts_kl_terms():
    ds = toy_graph()
    cfg = md.GraphModelConfig(mode="weibull", k=2.0, prior=WC_PRIOR,
                              heads1=2, feat1=4, dropout=0.0)
    model = md.GraphModel(ds, cfg, seed=0)
    bd = model.loss(np.random.default_rng(0), kl_weight=0.5)
    assert len(bd.kl_per_layer) == cfg.heads1 + cfg.heads2
    assert np.isfinite(bd.total.item())


def test_zero_kl_weight_leaves_prior_net_untouched():
    ds = toy_graph()
    cfg = md.GraphModelConfig(mode="weibull", k=2.0, prior=WC_PRIOR,
                              heads1=2, feat1=4, dropout=0.0)
    model = md.GraphModel(ds, cfg, seed=0)
    params = model.parameters()
    ad.zero_grads(params.values())
    with ad.Tape() as tape:
        bd = model.loss(np.random.default_rng(0), kl_weight=0.0)
    tape.backward(bd.total)
    for name, p in params.items():
        if ".prior." in name:
            assert p.grad is None  # exactly zero influence, not just small
        else:
            assert p.grad is not None


def test_gradients_flow_to_every_parameter():
    ds = toy_graph()
    for kw in MODES:
        cfg = md.GraphModelConfig(heads1=2, feat1=4, dropout=0.0, **kw)
        model = md.GraphModel(ds, cfg, seed=0)
        params = model.parameters()
        ad.zero_grads(params.values())
        rng = np.random.default_rng(4)
        with ad.Tape() as tape:
            bd = model.loss(rng, kl_weight=0.5)
        tape.backward(bd.total)
        missing = [name for name, p in params.items() if p.grad is None]
        assert missing == [], f"{kw['mode']}: no gradient for {missing}"


def test_metrics_deterministic_and_plausible():
    ds = toy_graph()
    model = md.GraphModel(ds, md.GraphModelConfig(heads1=2, feat1=4), seed=0)
    m1 = model.metrics("val")
    m2 = model.metrics("val")
    assert m1 == m2
    assert 0.0 <= m1["accuracy"] <= 1.0 and m1["loss"] > 0.0


def test_snapshot_load_round_trip():
    ds = toy_graph()
    model = md.GraphModel(ds, md.GraphModelConfig(heads1=2, feat1=4), seed=0)
    snap = {k: v.data.copy() for k, v in model.parameters().items()}
    before, _ = model.forward(rng=None, training=False)
    for p in model.parameters().values():
        p.data += 1.0
    after, _ = model.forward(rng=None, training=False)
    assert np.abs(after.data - before.data).max() > 1e-3
    model.load(snap)
    restored, _ = model.forward(rng=None, training=False)
    np.testing.assert_array_equal(restored.data, before.data)


def test_parameter_counts():
    ds = toy_graph()  # f=5, c=3
    cfg = md.GraphModelConfig(mode="weibull", k=2.0, prior=WC_PRIOR,
                              heads1=2, feat1=4)
    model = md.GraphModel(ds, cfg, seed=0)
    total, in_prior = model.parameter_counts()
    # layer 1: 2 heads x (5*4 + 4 + 4); layer 2: 8*3 + 3 + 3
    # prior nets (d_mid=2): 2 x (4*2+2+2*1+1) for layer 1, (3*2+2+2+1) for layer 2
    assert total - in_prior == 2 * 28 + 30
    assert in_prior == 2 * 13 + 11
    assert len(model.l2_parameters()) == 9  # attention tensors only


def test_graph_training_improves_fit():
    ds = toy_graph(n=18, f=6, c=3, seed=2)
    cfg = md.GraphModelConfig(heads1=2, feat1=4, dropout=0.0, l2_lambda=0.0)
    model = md.GraphModel(ds, cfg, seed=0)
    before = model.metrics("train")["loss"]
    settings = obj.TrainSettings(max_epochs=60, patience=60, rho=0.1,
                                 adam=obj.AdamConfig(lr=0.02))
    result = obj.train(model, settings, seed=0)
    model.load(result.params)
    assert model.metrics("train")["loss"] < before * 0.7


# ------------------------------------------------------------ attention maps

def test_attention_maps_contract():
    ds = toy_graph()
    cfg = md.GraphModelConfig(mode="weibull", k=2.0, prior=WC_PRIOR,
                              heads1=2, feat1=4)
    model = md.GraphModel(ds, cfg, seed=1)
    maps = model.attention_maps(1, 1, np.random.default_rng(0))
    rows, cols = maps["rows"], maps["cols"]
    assert np.array_equal(rows, model.rows) and np.array_equal(cols, model.cols)
    for key in ("expected", "sampled"):
        sums = np.bincount(rows, weights=maps[key], minlength=ds.n_nodes)
        np.testing.assert_allclose(sums, 1.0, atol=1e-9)
    assert abs(maps["psi"].sum() - 1.0) < 1e-9
    det = md.GraphModel(ds, md.GraphModelConfig(heads1=2, feat1=4), seed=1)
    assert det.attention_maps(1, 0, np.random.default_rng(0))["sampled"] is None
    with pytest.raises(ConfigError):
        model.attention_maps(3, 0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        model.attention_maps(2, 5, np.random.default_rng(0))


# ---------------------------------------------------------------- synthetic

def test_synthetic_config_validation():
    with pytest.raises(ConfigError):
        md.SyntheticTaskConfig(n_keys=6, classes=4)  # not a multiple
    with pytest.raises(ConfigError):
        md.SyntheticTaskConfig(n_features=4, classes=4)  # no room for marker
    with pytest.raises(ConfigError):
        md.SyntheticTaskConfig(signal=-1.0)
    with pytest.raises(ConfigError):
        md.SyntheticModelConfig(batch=0)


def test_synthetic_generator_shapes_and_balance():
    cfg = md.SyntheticTaskConfig(train_count=40, val_count=10, test_count=10)
    data = md.generate_synthetic(cfg, seed=0)
    split = data.train
    assert split.keys.shape == (40 * 8, 16)
    assert split.queries.shape == (40, 16)
    keys = split.keys.reshape(40, 8, 16)
    classes = keys[:, :, :4].argmax(axis=2)
    # balanced: every instance holds exactly n/C keys of each class, so with
    # the marker absent the label posterior is uniform and chance is exactly 1/C
    counts = np.stack([(classes == c).sum(axis=1) for c in range(4)], axis=1)
    assert (counts == 2).all()
    marked_class = classes[np.arange(40), split.marked]
    np.testing.assert_array_equal(marked_class, split.labels)
    # the marker column carries the signal only on the marked key
    marker = keys[:, :, 4]
    assert np.allclose(marker[np.arange(40), split.marked], cfg.signal)
    unmarked = marker.copy()
    unmarked[np.arange(40), split.marked] = 0.0
    assert np.all(unmarked == 0.0)


def test_synthetic_zero_signal_hides_the_marked_key():
    cfg = md.SyntheticTaskConfig(signal=0.0, train_count=20, val_count=5, test_count=5)
    data = md.generate_synthetic(cfg, seed=0)
    marker = data.train.keys.reshape(20, 8, 16)[:, :, 4]
    assert np.all(marker == 0.0)


def test_synthetic_generation_deterministic():
    cfg = md.SyntheticTaskConfig(train_count=15, val_count=5, test_count=5)
    a = md.generate_synthetic(cfg, seed=4)
    b = md.generate_synthetic(cfg, seed=4)
    np.testing.assert_array_equal(a.train.keys, b.train.keys)
    np.testing.assert_array_equal(a.test.labels, b.test.labels)
    c = md.generate_synthetic(cfg, seed=5)
    assert not np.array_equal(a.train.keys, c.train.keys)


def test_synthetic_single_key_is_linear_readout():
    cfg = md.SyntheticTaskConfig(train_count=4, val_count=2, test_count=2)
    data = md.generate_synthetic(cfg, seed=0)
    model = md.SyntheticModel(data, md.SyntheticModelConfig(), seed=0)
    rng = np.random.default_rng(2)
    key = rng.normal(size=(1, 16))
    query = rng.normal(size=(1, 16))
    logits, _ = model._forward(key, query, rng=None, training=False)
    p = model.parameters()
    manual = key @ p["m_v"].data @ p["w_out"].data + p["b_out"].data
    np.testing.assert_allclose(logits.data, manual, atol=1e-12)


def test_synthetic_modes_run_and_scale_kl_by_batch():
    cfg = md.SyntheticTaskConfig(train_count=30, val_count=10, test_count=10)
    data = md.generate_synthetic(cfg, seed=0)
    mcfg = md.SyntheticModelConfig(mode="weibull", k=1.0, batch=10,
                                   prior=pr.PriorConfig(kind="contextual",
                                                        family="gamma", beta=0.5,
                                                        d_mid=1))
    model = md.SyntheticModel(data, mcfg, seed=1)
    bd = model.loss(np.random.default_rng(0), kl_weight=0.5)
    assert len(bd.kl_per_layer) == 1 and np.isfinite(bd.total.item())
    m = model.metrics("val")
    assert 0.0 <= m["accuracy"] <= 1.0


@pytest.mark.slow
def test_synthetic_trains_to_high_accuracy_both_modes():
    data = md.generate_synthetic(md.SyntheticTaskConfig(), seed=0)
    for mcfg in (md.SyntheticModelConfig(),
                 md.SyntheticModelConfig(mode="weibull", k=1.0,
                                         prior=pr.PriorConfig(kind="contextual",
                                                              family="gamma",
                                                              beta=1e-10, d_mid=1))):
        model = md.SyntheticModel(data, mcfg, seed=0)
        settings = obj.TrainSettings(max_epochs=1500, patience=400, rho=0.1,
                                     eval_every=25, adam=obj.AdamConfig(lr=0.01))
        result = obj.train(model, settings, seed=0)
        model.load(result.params)
        assert model.metrics("test")["accuracy"] > 0.95


def test_sampling_interfaces():
    data = md.generate_synthetic(md.SyntheticTaskConfig(train_count=10, val_count=5,
                                                        test_count=5), seed=0)
    model = md.SyntheticModel(data, md.SyntheticModelConfig(mode="weibull", k=2.0),
                              seed=0)
    probs = model.predict_probabilities("test")
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    s1 = model.sample_probabilities(np.random.default_rng(0))
    s2 = model.sample_probabilities(np.random.default_rng(0))
    s3 = model.sample_probabilities(np.random.default_rng(1))
    np.testing.assert_array_equal(s1, s2)
    assert not np.array_equal(s1, s3)
