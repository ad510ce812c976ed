"""Task models: a two-layer graph attention classifier and a synthetic
single-query retrieval task.

Both models expose the training interface the loop in objective.py expects
(parameters / loss / metrics) and a sampling entry point for uncertainty
estimation. The graph model supports two numerically equivalent layouts:
"sparse" runs attention over the edge list with segment reductions,
"dense" materializes the full masked score matrix. Noise and dropout are
drawn row-major over the edge support in both layouts, so the two agree to
floating-point roundoff draw for draw.
"""

from dataclasses import dataclass, field

import numpy as np

from . import attention as attn
from . import autodiff as ad
from . import objective as obj
from . import prior as pr
from .errors import ConfigError, DimensionError, DivergenceError, DomainError

LAYOUTS = ("sparse", "dense")


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out) if shape is None else shape)


def build_adjacency(edges, n):
    """Directed support of an undirected edge list: both directions plus a
    self-loop per node, deduplicated and sorted by (row, col)."""
    loops = np.stack([np.arange(n)] * 2, axis=1)
    if len(edges):
        edges = np.asarray(edges, dtype=np.intp)
        both = np.concatenate([edges, edges[:, ::-1], loops])
    else:
        both = loops
    pairs = np.unique(both, axis=0)
    return pairs[:, 0], pairs[:, 1]


def _check_mode(mode, k, sigma, prior):
    if mode not in attn.MODES:
        raise ConfigError(f"unknown attention mode {mode!r}")
    if mode == "weibull" and (k is None or k <= 0):
        raise ConfigError("weibull mode needs shape k > 0")
    if mode == "lognormal" and (sigma is None or sigma <= 0):
        raise ConfigError("lognormal mode needs posterior sigma > 0")
    if prior.kind != "none":
        if mode == "deterministic":
            raise ConfigError("deterministic mode takes no prior (kind must be 'none')")
        want = "gamma" if mode == "weibull" else "lognormal"
        if prior.family != want:
            raise ConfigError(f"mode {mode!r} pairs with a {want} prior, "
                              f"got family {prior.family!r}")


def _masked_edge_dropout(w, mask, p, rng):
    # same number/order of draws as vector dropout over the edge list
    keep = (rng.random(int(mask.sum())) >= p) / (1.0 - p)
    mult = np.zeros(mask.shape)
    mult[mask] = keep
    return ad.mul(w, mult)


def _softmax_np(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class GraphModelConfig:
    mode: str = "deterministic"
    k: float = None
    sigma: float = None
    prior: pr.PriorConfig = field(default_factory=lambda: pr.PriorConfig(kind="none"))
    heads1: int = 8
    feat1: int = 8
    heads2: int = 1
    dropout: float = 0.6
    l2_lambda: float = 5e-4
    slope: float = 0.2
    layout: str = "sparse"

    def __post_init__(self):
        _check_mode(self.mode, self.k, self.sigma, self.prior)
        if self.heads1 < 1 or self.heads2 < 1 or self.feat1 < 1:
            raise ConfigError("head and feature counts must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"layout must be one of {LAYOUTS}")


class GraphModel:
    """Two attention layers over a node graph.

    Layer 1 concatenates heads1 heads of feat1 features each under an ELU;
    layer 2 maps to class logits, averaging when it has several heads.
    Scores are additive with a LeakyReLU, keys and values share the per-head
    projection, and the adjacency always includes self-loops. Dropout hits
    the layer inputs and the normalized attention coefficients.
    """

    def __init__(self, dataset, config, seed):
        self.data = dataset
        self.cfg = config
        self.rows, self.cols = build_adjacency(dataset.edges, dataset.n_nodes)
        n = dataset.n_nodes
        self.mask = np.zeros((n, n), dtype=bool)
        self.mask[self.rows, self.cols] = True
        self.capture = None

        c = dataset.n_classes
        f = dataset.n_features
        d1 = config.feat1
        d_in2 = config.heads1 * d1
        rng = np.random.default_rng(seed)
        params = {}
        # attention parameters first, prior nets after, so models that differ
        # only in the prior share their attention initialization per seed
        for h in range(config.heads1):
            params[f"l1.h{h}.w"] = ad.Tensor(glorot(rng, f, d1), requires_grad=True)
            params[f"l1.h{h}.a_src"] = ad.Tensor(glorot(rng, d1, 1), requires_grad=True)
            params[f"l1.h{h}.a_dst"] = ad.Tensor(glorot(rng, d1, 1), requires_grad=True)
        for h in range(config.heads2):
            params[f"l2.h{h}.w"] = ad.Tensor(glorot(rng, d_in2, c), requires_grad=True)
            params[f"l2.h{h}.a_src"] = ad.Tensor(glorot(rng, c, 1), requires_grad=True)
            params[f"l2.h{h}.a_dst"] = ad.Tensor(glorot(rng, c, 1), requires_grad=True)
        self._prior_nets = {}
        if config.prior.kind == "contextual":
            for layer, d_k, heads in ((1, d1, config.heads1), (2, c, config.heads2)):
                for h in range(heads):
                    net = pr.ContextualPriorNet.create(d_k, config.prior.d_mid, rng)
                    self._prior_nets[(layer, h)] = net
                    for pname in ("w1", "b1", "w2", "b2"):
                        params[f"l{layer}.h{h}.prior.{pname}"] = getattr(net, pname)
        self._params = params
        self._attn_cfg_cache = {}

    def parameters(self):
        return dict(self._params)

    def l2_parameters(self):
        # weight decay covers attention weights but not the prior nets
        return [p for name, p in self._params.items() if ".prior." not in name]

    def parameter_counts(self):
        total = sum(p.size for p in self._params.values())
        in_prior = sum(p.size for name, p in self._params.items() if ".prior." in name)
        return total, in_prior

    def load(self, snapshot):
        for name, arr in snapshot.items():
            if name not in self._params:
                raise DimensionError(f"unknown parameter {name!r} in snapshot")
            self._params[name].data[...] = arr

    def _attn_cfg(self, d):
        if d not in self._attn_cfg_cache:
            self._attn_cfg_cache[d] = attn.AttentionConfig(
                mode=self.cfg.mode, d_k=d, d_v=d, heads=1,
                score_fn="additive-leakyrelu", k=self.cfg.k, sigma=self.cfg.sigma,
                slope=self.cfg.slope)
        return self._attn_cfg_cache[d]

    def _head(self, x, layer, head, rng, training, dropout_active, want_capture):
        cfg = self.cfg
        p = self._params
        hp = ad.matmul(x, p[f"l{layer}.h{head}.w"])
        s_src = ad.matmul(hp, p[f"l{layer}.h{head}.a_src"])
        s_dst = ad.matmul(hp, p[f"l{layer}.h{head}.a_dst"])
        n = hp.shape[0]
        n_edges = self.rows.size
        acfg = self._attn_cfg(hp.shape[1])
        stochastic = cfg.mode != "deterministic"

        if cfg.layout == "sparse":
            raw = ad.add(ad.gather_rows(s_src, self.rows), ad.gather_rows(s_dst, self.cols))
            phi = ad.leaky_relu(ad.reshape(raw, (n_edges,)), cfg.slope)
            if not stochastic:
                sample = None
                w = attn.softmax_edges(phi, self.rows, n)
            else:
                eps = attn.draw_noise(acfg, n_edges, rng) if training else None
                sample = attn.stochastic_weights_edges(phi, self.rows, n, acfg, eps,
                                                       training=training)
                w = sample.w
            if want_capture:
                self._capture_edges(layer, head, phi.data, w.data, acfg, stochastic, rng)
            if dropout_active and cfg.dropout > 0.0:
                w = ad.dropout(w, cfg.dropout, rng, True)
            contrib = ad.mul(ad.gather_rows(hp, self.cols), ad.reshape(w, (n_edges, 1)))
            out = ad.segment_sum(contrib, self.rows, n)
        else:
            phi = attn.score(hp, hp, "additive-leakyrelu",
                             p[f"l{layer}.h{head}.a_src"], p[f"l{layer}.h{head}.a_dst"],
                             cfg.slope)
            if not stochastic:
                sample = None
                w = ad.softmax_rows(phi, mask=self.mask)
            else:
                eps = attn.draw_noise(acfg, n_edges, rng) if training else None
                sample = attn.stochastic_weights_dense(phi, acfg, eps, mask=self.mask,
                                                       training=training)
                w = sample.w
            if want_capture:
                self._capture_edges(layer, head, phi.data[self.rows, self.cols],
                                    w.data[self.rows, self.cols], acfg, stochastic, rng)
            if dropout_active and cfg.dropout > 0.0:
                w = _masked_edge_dropout(w, self.mask, cfg.dropout, rng)
            out = ad.matmul(w, hp)

        kl = None
        if stochastic and cfg.prior.kind != "none" and training:
            psi = None
            if cfg.prior.kind == "contextual":
                psi = pr.contextual_psi(hp, self._prior_nets[(layer, head)])
            try:
                if cfg.layout == "sparse":
                    prior_p = pr.prior_params_edges(cfg.prior, self.cols, n, psi)
                else:
                    prior_p = pr.prior_params(cfg.prior, n, n, psi)
                kl = pr.layer_kl(sample, acfg, prior_p)
            except DomainError as err:
                # config constants were validated up front, so a bad value
                # here means the prior net's output collapsed or blew up
                raise DivergenceError(f"prior degenerated in training: {err}") from err
        return out, kl

    def _capture_edges(self, layer, head, phi_flat, w_flat, acfg, stochastic, rng):
        self.capture = {
            "layer": layer, "head": head,
            "rows": self.rows.copy(), "cols": self.cols.copy(),
            "phi": np.asarray(phi_flat, dtype=np.float64).copy(),
            "w": np.asarray(w_flat, dtype=np.float64).copy(),
        }

    def forward(self, rng, training, dropout_active=None, capture=None):
        """Full-graph logits plus the per-head KL terms (training only).

        dropout_active defaults to the training flag; passing False keeps
        attention sampling while silencing dropout, which the attention dump
        uses. capture=(layer, head) records that head's weights in edge
        layout on self.capture.
        """
        cfg = self.cfg
        if dropout_active is None:
            dropout_active = training
        x = ad.Tensor(self.data.features)
        if dropout_active and cfg.dropout > 0.0:
            x = ad.dropout(x, cfg.dropout, rng, True)
        kl_terms = []
        outs = []
        for h in range(cfg.heads1):
            out, kl = self._head(x, 1, h, rng, training, dropout_active,
                                 capture == (1, h))
            outs.append(out)
            if kl is not None:
                kl_terms.append(kl)
        h1 = ad.elu(ad.concat(outs, axis=1) if len(outs) > 1 else outs[0])
        if dropout_active and cfg.dropout > 0.0:
            h1 = ad.dropout(h1, cfg.dropout, rng, True)
        outs2 = []
        for h in range(cfg.heads2):
            out, kl = self._head(h1, 2, h, rng, training, dropout_active,
                                 capture == (2, h))
            outs2.append(out)
            if kl is not None:
                kl_terms.append(kl)
        logits = outs2[0]
        for out in outs2[1:]:
            logits = ad.add(logits, out)
        if len(outs2) > 1:
            logits = ad.mul(logits, 1.0 / len(outs2))
        return logits, kl_terms

    def loss(self, rng, kl_weight, training=True):
        logits, kl_terms = self.forward(rng, training)
        idx = self.data.splits["train"]
        return obj.loss(ad.gather_rows(logits, idx), self.data.labels[idx],
                        kl_terms, kl_weight, self.cfg.l2_lambda, self.l2_parameters())

    def metrics(self, split):
        logits, _ = self.forward(rng=None, training=False)
        idx = self.data.splits[split]
        labels = self.data.labels[idx]
        sub = logits.data[idx]
        ce = obj.cross_entropy(ad.Tensor(sub), labels).item()
        acc = float((sub.argmax(axis=1) == labels).mean())
        return {"loss": ce, "accuracy": acc}

    def predict_probabilities(self):
        logits, _ = self.forward(rng=None, training=False)
        return _softmax_np(logits.data)

    def sample_probabilities(self, rng):
        """One stochastic forward: attention sampling plus configured dropout."""
        logits, _ = self.forward(rng, training=True)
        return _softmax_np(logits.data)

    def attention_maps(self, layer, head, rng):
        """Edge-layout expected and sampled weights for one head, plus the
        contextual prior field when one is configured."""
        if layer not in (1, 2):
            raise ConfigError(f"layer must be 1 or 2, got {layer}")
        heads = self.cfg.heads1 if layer == 1 else self.cfg.heads2
        if not 0 <= head < heads:
            raise ConfigError(f"layer {layer} has {heads} heads, got head {head}")
        self.capture = None
        self.forward(rng=None, training=False, capture=(layer, head))
        expected = self.capture
        sampled = None
        if self.cfg.mode != "deterministic":
            self.capture = None
            self.forward(rng, training=True, dropout_active=False,
                         capture=(layer, head))
            sampled = self.capture["w"]
        psi = None
        if (layer, head) in self._prior_nets:
            x = ad.Tensor(self.data.features)
            if layer == 1:
                hp = ad.matmul(x, self._params[f"l1.h{head}.w"])
            else:
                outs = []
                for h in range(self.cfg.heads1):
                    hp1 = ad.matmul(x, self._params[f"l1.h{h}.w"])
                    s_src = ad.matmul(hp1, self._params[f"l1.h{h}.a_src"])
                    s_dst = ad.matmul(hp1, self._params[f"l1.h{h}.a_dst"])
                    raw = ad.add(ad.gather_rows(s_src, self.rows),
                                 ad.gather_rows(s_dst, self.cols))
                    phi = ad.leaky_relu(ad.reshape(raw, (self.rows.size,)),
                                        self.cfg.slope)
                    w = attn.softmax_edges(phi, self.rows, self.data.n_nodes)
                    contrib = ad.mul(ad.gather_rows(hp1, self.cols),
                                     ad.reshape(w, (self.rows.size, 1)))
                    outs.append(ad.segment_sum(contrib, self.rows, self.data.n_nodes))
                h1 = ad.elu(ad.concat(outs, axis=1) if len(outs) > 1 else outs[0])
                hp = ad.matmul(h1, self._params[f"l2.h{head}.w"])
            psi = pr.contextual_psi(hp, self._prior_nets[(layer, head)]).data.ravel()
        return {"rows": expected["rows"], "cols": expected["cols"],
                "expected": expected["w"], "sampled": sampled, "psi": psi}


# ----------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SyntheticTaskConfig:
    """Single-query retrieval: each instance holds n_keys keys with balanced
    class markings; exactly one key carries a query marker of the given
    signal strength and the instance label is that key's class. At signal 0
    the marked key is indistinguishable, so chance (1/classes) is optimal.
    """
    n_keys: int = 8
    n_features: int = 16
    classes: int = 4
    signal: float = 3.0
    noise: float = 0.5
    train_count: int = 2000
    val_count: int = 500
    test_count: int = 500

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError("need at least two classes")
        if self.n_keys < 2 or self.n_keys % self.classes != 0:
            raise ConfigError("n_keys must be a positive multiple of classes")
        if self.n_features < self.classes + 1:
            raise ConfigError("n_features must cover class block plus marker")
        if self.signal < 0:
            raise ConfigError("signal must be nonnegative")
        if min(self.train_count, self.val_count, self.test_count) < 1:
            raise ConfigError("split counts must be positive")


@dataclass
class SyntheticSplit:
    keys: np.ndarray      # [count * n_keys, n_features]
    queries: np.ndarray   # [count, n_features]
    labels: np.ndarray    # [count]
    marked: np.ndarray    # [count] position of the marked key in its instance

    @property
    def count(self):
        return self.labels.size


@dataclass
class SyntheticDataset:
    cfg: SyntheticTaskConfig
    train: SyntheticSplit
    val: SyntheticSplit
    test: SyntheticSplit

    def split(self, name):
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def _make_split(cfg, count, rng):
    n, d, c = cfg.n_keys, cfg.n_features, cfg.classes
    classes = np.tile(np.arange(c), (count, n // c))
    classes = rng.permuted(classes, axis=1)
    marked = rng.integers(0, n, size=count)
    labels = classes[np.arange(count), marked]
    keys = np.zeros((count, n, d))
    keys[np.arange(count)[:, None], np.arange(n)[None, :], classes] = 1.0
    keys[np.arange(count), marked, c] = cfg.signal
    if d > c + 1:
        keys[:, :, c + 1:] = rng.normal(size=(count, n, d - c - 1)) * cfg.noise
    queries = np.zeros((count, d))
    queries[:, c] = 1.0
    return SyntheticSplit(keys=keys.reshape(count * n, d), queries=queries,
                          labels=labels, marked=marked)


def generate_synthetic(cfg, seed):
    """Deterministic per seed: identical bytes for identical arguments."""
    rng = np.random.default_rng(seed)
    return SyntheticDataset(
        cfg=cfg,
        train=_make_split(cfg, cfg.train_count, rng),
        val=_make_split(cfg, cfg.val_count, rng),
        test=_make_split(cfg, cfg.test_count, rng),
    )


@dataclass(frozen=True)
class SyntheticModelConfig:
    mode: str = "deterministic"
    k: float = None
    sigma: float = None
    prior: pr.PriorConfig = field(default_factory=lambda: pr.PriorConfig(kind="none"))
    d_k: int = 16
    d_v: int = 16
    dropout: float = 0.0
    l2_lambda: float = 0.0
    batch: int = 64

    def __post_init__(self):
        _check_mode(self.mode, self.k, self.sigma, self.prior)
        if self.d_k < 1 or self.d_v < 1:
            raise ConfigError("projection widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.batch < 1:
            raise ConfigError("batch size must be positive")


class SyntheticModel:
    """One scaled-dot attention layer per instance plus a linear read-out.

    The batch is laid out as edges: instance i attends from its query to its
    own n_keys keys, so rows repeat the instance index. KL terms are scaled
    by 1/batch to match the mean cross-entropy.
    """

    def __init__(self, dataset, config, seed):
        self.data = dataset
        self.cfg = config
        d = dataset.cfg.n_features
        c = dataset.cfg.classes
        rng = np.random.default_rng(seed)
        params = {
            "m_q": ad.Tensor(glorot(rng, d, config.d_k), requires_grad=True),
            "m_k": ad.Tensor(glorot(rng, d, config.d_k), requires_grad=True),
            "m_v": ad.Tensor(glorot(rng, d, config.d_v), requires_grad=True),
            "w_out": ad.Tensor(glorot(rng, config.d_v, c), requires_grad=True),
            "b_out": ad.Tensor(np.zeros((1, c)), requires_grad=True),
        }
        self._prior_net = None
        if config.prior.kind == "contextual":
            self._prior_net = pr.ContextualPriorNet.create(config.d_k,
                                                           config.prior.d_mid, rng)
            for pname in ("w1", "b1", "w2", "b2"):
                params[f"prior.{pname}"] = getattr(self._prior_net, pname)
        self._params = params
        self._attn_cfg = attn.AttentionConfig(
            mode=config.mode, d_k=config.d_k, d_v=config.d_v, heads=1,
            score_fn="scaled-dot-product", k=config.k, sigma=config.sigma)
        self.capture = None

    def parameters(self):
        return dict(self._params)

    def l2_parameters(self):
        return [p for name, p in self._params.items() if not name.startswith("prior.")]

    def parameter_counts(self):
        total = sum(p.size for p in self._params.values())
        in_prior = sum(p.size for name, p in self._params.items()
                       if name.startswith("prior."))
        return total, in_prior

    def load(self, snapshot):
        for name, arr in snapshot.items():
            if name not in self._params:
                raise DimensionError(f"unknown parameter {name!r} in snapshot")
            self._params[name].data[...] = arr

    def _psi_edges(self, k_proj, rows, b):
        """Contextual prior field with the key softmax taken per instance."""
        z = ad.relu(ad.add(ad.matmul(k_proj, self._prior_net.w1), self._prior_net.b1))
        t = ad.add(ad.matmul(z, self._prior_net.w2), self._prior_net.b2)
        return attn.softmax_edges(ad.reshape(t, (k_proj.shape[0],)), rows, b)

    def _forward(self, keys_np, queries_np, rng, training, dropout_active=None,
                 capture=False):
        """Logits for a stacked batch: keys_np is [B * n, d], queries [B, d]."""
        cfg = self.cfg
        if dropout_active is None:
            dropout_active = training
        b = queries_np.shape[0]
        n = keys_np.shape[0] // b
        if keys_np.shape[0] != b * n:
            raise DimensionError("key rows must be a multiple of the batch size")
        x_k = ad.Tensor(keys_np)
        x_q = ad.Tensor(queries_np)
        if dropout_active and cfg.dropout > 0.0:
            x_k = ad.dropout(x_k, cfg.dropout, rng, True)
            x_q = ad.dropout(x_q, cfg.dropout, rng, True)
        p = self._params
        k_proj = ad.matmul(x_k, p["m_k"])
        q_proj = ad.matmul(x_q, p["m_q"])
        v_proj = ad.matmul(x_k, p["m_v"])
        rows = np.repeat(np.arange(b), n)
        # cols would be arange(b * n): gathering by it is the identity
        q_e = ad.gather_rows(q_proj, rows)
        phi = ad.mul(ad.reduce_sum(ad.mul(q_e, k_proj), axis=1),
                     1.0 / np.sqrt(cfg.d_k))
        stochastic = cfg.mode != "deterministic"
        if not stochastic:
            sample = None
            w = attn.softmax_edges(phi, rows, b)
        else:
            eps = attn.draw_noise(self._attn_cfg, b * n, rng) if training else None
            sample = attn.stochastic_weights_edges(phi, rows, b, self._attn_cfg,
                                                   eps, training=training)
            w = sample.w
        if capture:
            self.capture = {"rows": rows.copy(), "cols": np.arange(b * n),
                            "phi": phi.data.copy(), "w": w.data.copy()}
        if dropout_active and cfg.dropout > 0.0:
            w = ad.dropout(w, cfg.dropout, rng, True)
        o = ad.segment_sum(ad.mul(v_proj, ad.reshape(w, (b * n, 1))), rows, b)
        logits = ad.add(ad.matmul(o, p["w_out"]), p["b_out"])

        kl_terms = []
        if stochastic and cfg.prior.kind != "none" and training:
            try:
                if cfg.prior.kind == "contextual":
                    # per-instance softmax over that instance's keys
                    psi_e = self._psi_edges(k_proj, rows, b)
                    if cfg.prior.family == "gamma":
                        prior_p = pr.PriorParams(family="gamma", alpha=psi_e,
                                                 beta=cfg.prior.beta)
                    else:
                        prior_p = pr.PriorParams(family="lognormal", mu=psi_e,
                                                 sigma=cfg.prior.sigma1)
                else:
                    prior_p = pr.prior_params_edges(cfg.prior,
                                                    np.arange(b * n), b * n)
                kl = pr.layer_kl(sample, self._attn_cfg, prior_p)
            except DomainError as err:
                raise DivergenceError(
                    f"prior degenerated in training: {err}") from err
            kl_terms.append(ad.mul(kl, 1.0 / b))
        return logits, kl_terms

    def _batch_arrays(self, split, idx):
        n, d = self.data.cfg.n_keys, self.data.cfg.n_features
        keys = split.keys.reshape(-1, n, d)[idx].reshape(len(idx) * n, d)
        return keys, split.queries[idx], split.labels[idx]

    def loss(self, rng, kl_weight, training=True):
        idx = rng.integers(0, self.data.train.count, size=self.cfg.batch)
        keys, queries, labels = self._batch_arrays(self.data.train, idx)
        logits, kl_terms = self._forward(keys, queries, rng, training)
        return obj.loss(logits, labels, kl_terms, kl_weight,
                        self.cfg.l2_lambda, self.l2_parameters())

    def metrics(self, split):
        part = self.data.split(split)
        logits, _ = self._forward(part.keys, part.queries, rng=None, training=False)
        ce = obj.cross_entropy(ad.Tensor(logits.data), part.labels).item()
        acc = float((logits.data.argmax(axis=1) == part.labels).mean())
        return {"loss": ce, "accuracy": acc}

    def predict_probabilities(self, split="test"):
        part = self.data.split(split)
        logits, _ = self._forward(part.keys, part.queries, rng=None, training=False)
        return _softmax_np(logits.data)

    def sample_probabilities(self, rng, split="test"):
        part = self.data.split(split)
        logits, _ = self._forward(part.keys, part.queries, rng, training=True)
        return _softmax_np(logits.data)

    def attention_maps(self, rng, split="test", count=4):
        """Expected and sampled weights over the first count instances."""
        part = self.data.split(split)
        count = min(count, part.count)
        n = self.data.cfg.n_keys
        keys = part.keys[:count * n]
        queries = part.queries[:count]
        self._forward(keys, queries, rng=None, training=False, capture=True)
        expected = self.capture
        sampled = None
        if self.cfg.mode != "deterministic":
            self._forward(keys, queries, rng, training=True,
                          dropout_active=False, capture=True)
            sampled = self.capture["w"]
        psi = None
        if self._prior_net is not None:
            k_proj = ad.matmul(ad.Tensor(keys), self._params["m_k"])
            rows = np.repeat(np.arange(count), n)
            psi = self._psi_edges(k_proj, rows, count).data.copy()
        return {"rows": expected["rows"], "cols": expected["cols"],
                "expected": expected["w"], "sampled": sampled, "psi": psi}
