"""Soft attention layers: deterministic rows and stochastic simplex rows.

The stochastic path draws positive unnormalized weights S from a Weibull or
Lognormal whose mean is exp(phi), normalizes rows to the simplex, and mixes
values with the sampled weights. At evaluation time S is replaced by its
expectation, which collapses the whole thing to ordinary softmax attention,
reusing the exact same code path bit for bit.

Two layouts share one sampling convention: dense [m x n] score matrices with
an optional boolean mask, and flat edge lists for sparse graphs. Noise is
consumed row-major over unmasked entries in both, so a dense mask and the
equivalent edge list see the same draws.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from . import distributions as dist
from .errors import (ConfigError, DegenerateRowError, DimensionError,
                     DivergenceError)

MODES = ("deterministic", "weibull", "lognormal")
SCORE_FNS = ("scaled-dot-product", "additive-leakyrelu")


@dataclass(frozen=True)
class AttentionConfig:
    mode: str
    d_k: int
    d_v: int
    heads: int = 1
    score_fn: str = "scaled-dot-product"
    k: float = None
    sigma: float = None
    slope: float = 0.2  # leaky slope, additive score only

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown attention mode {self.mode!r}")
        if self.score_fn not in SCORE_FNS:
            raise ConfigError(f"unknown score function {self.score_fn!r}")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")
        if self.d_k < 1 or self.d_v < 1:
            raise ConfigError("d_k and d_v must be >= 1")
        if self.mode == "weibull" and (self.k is None or self.k <= 0):
            raise ConfigError("weibull mode needs a positive shape k")
        if self.mode == "lognormal" and (self.sigma is None or self.sigma <= 0):
            raise ConfigError("lognormal mode needs a positive sigma")


@dataclass
class AttentionSample:
    """One realized attention draw, dense ([m x n] + mask) or edge layout."""
    phi: ad.Tensor
    s: ad.Tensor
    w: ad.Tensor
    eps: np.ndarray
    mask: np.ndarray = None
    rows: np.ndarray = None
    n_rows: int = None


@lru_cache(maxsize=None)
def log_gamma_one_plus_inv(k):
    """log Γ(1 + 1/k), cached per shape value."""
    return float(dist.lgamma(1.0 + 1.0 / float(k)))


def score(q, k, fn="scaled-dot-product", attn_src=None, attn_dst=None, slope=0.2):
    """Alignment scores phi[m x n] from projected queries and keys.

    scaled-dot-product: q kᵀ / sqrt(d_k). additive-leakyrelu: the graph
    attention form, LeakyReLU(a_srcᵀ q_i + a_dstᵀ k_j) with 2-d column
    vectors a_src, a_dst.
    """
    q, k = ad.as_tensor(q), ad.as_tensor(k)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise DimensionError(f"query {q.shape} and key {k.shape} disagree")
    if fn == "scaled-dot-product":
        return ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(q.shape[1]))
    if fn == "additive-leakyrelu":
        attn_src, attn_dst = ad.as_tensor(attn_src), ad.as_tensor(attn_dst)
        if attn_src.shape != (q.shape[1], 1) or attn_dst.shape != (k.shape[1], 1):
            raise DimensionError("attention vectors must be [d_k x 1] columns")
        left = ad.matmul(q, attn_src)
        right = ad.transpose(ad.matmul(k, attn_dst))
        return ad.leaky_relu(ad.add(left, right), slope)
    raise ConfigError(f"unknown score function {fn!r}")


def deterministic_attention(phi, v, mask=None):
    """Softmax attention: returns (weights, weights @ v)."""
    w = ad.softmax_rows(phi, mask=mask)
    return w, ad.matmul(w, ad.as_tensor(v))


def noise_count(mask, shape):
    return int(np.count_nonzero(mask)) if mask is not None else shape[0] * shape[1]


def draw_noise(cfg, count, rng):
    """One flat noise vector in sampling order (row-major over support)."""
    if cfg.mode == "weibull":
        return rng.random(count)
    if cfg.mode == "lognormal":
        return rng.normal(size=count)
    raise ConfigError("deterministic mode draws no noise")


def _scatter(values, mask):
    out = np.zeros(mask.shape)
    out[mask] = values
    return out


def stochastic_weights_dense(phi, cfg, eps, mask=None, training=True):
    """Sample simplex-constrained weights for a dense score matrix."""
    phi = ad.as_tensor(phi)
    if phi.ndim != 2:
        raise DimensionError("scores must be 2-d")
    if cfg.mode == "deterministic":
        raise ConfigError("stochastic weights need a stochastic mode")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != phi.shape:
            raise DimensionError(f"mask shape {mask.shape} != scores shape {phi.shape}")
        if not mask.any(axis=1).all():
            raise DegenerateRowError("attention row with no unmasked keys")
    live = phi.data if mask is None else phi.data[mask]
    if not np.all(np.isfinite(live)):
        raise DivergenceError("attention scores are not finite")

    if not training:
        # posterior expectation E[S] = exp(phi): identical to plain softmax
        w = ad.softmax_rows(phi, mask=mask)
        s_data = np.exp(phi.data) if mask is None else _scatter(np.exp(phi.data[mask]), mask)
        return AttentionSample(phi=phi, s=ad.Tensor(s_data), w=w, eps=None, mask=mask)

    full = np.ones(phi.shape, dtype=bool) if mask is None else mask
    eps = np.asarray(eps, dtype=np.float64).ravel()
    if eps.size != int(full.sum()):
        raise DimensionError(f"need {int(full.sum())} noise values, got {eps.size}")

    # the posterior scale cancels per row, so the draw is a softmax of the
    # noise-offset scores; s (data only, for inspection) carries the usual
    # per-row max shift so large scores cannot overflow it
    visible = np.where(full, phi.data, -np.inf)
    z_data = visible - visible.max(axis=1, keepdims=True)
    if cfg.mode == "weibull":
        u = _scatter(dist.weibull_noise_factor(eps, cfg.k), full)
        s_data = np.exp(z_data - log_gamma_one_plus_inv(cfg.k)) * u
        with np.errstate(divide="ignore"):  # u == 0 is a legal zero weight
            offset = np.where(full, np.log(u), 0.0)
    else:
        offset_e = eps * cfg.sigma - 0.5 * cfg.sigma ** 2
        offset = _scatter(offset_e, full)
        s_data = np.exp(z_data) * _scatter(np.exp(offset_e), full)
    w = ad.softmax_rows(ad.add(phi, offset), mask=mask)
    return AttentionSample(phi=phi, s=ad.Tensor(s_data), w=w, eps=eps, mask=mask)


def softmax_edges(phi_e, rows, n_rows):
    """Per-row softmax in edge layout; rows with no edges are degenerate."""
    phi_e = ad.as_tensor(phi_e)
    if phi_e.ndim != 1:
        raise DimensionError("edge scores must be 1-d")
    rows = np.asarray(rows, dtype=np.intp)
    if rows.shape != phi_e.shape:
        raise DimensionError("rows must match edge scores")
    if np.bincount(rows, minlength=n_rows).min(initial=1) == 0:
        raise DegenerateRowError("attention row with no incident edges")
    if not np.all(np.isfinite(phi_e.data)):
        raise DivergenceError("attention scores are not finite")
    return ad.softmax_segments(phi_e, rows, n_rows)


def stochastic_weights_edges(phi_e, rows, n_rows, cfg, eps, training=True):
    """Edge-layout twin of stochastic_weights_dense.

    phi_e is the flat vector of scores for the E directed edges, rows maps
    each edge to its query row. Edges must be grouped row-major (sorted by
    (row, col)) for the noise stream to line up with the dense layout.
    """
    phi_e = ad.as_tensor(phi_e)
    if phi_e.ndim != 1:
        raise DimensionError("edge scores must be 1-d")
    rows = np.asarray(rows, dtype=np.intp)
    if rows.shape != phi_e.shape:
        raise DimensionError("rows must match edge scores")
    if cfg.mode == "deterministic":
        raise ConfigError("stochastic weights need a stochastic mode")
    counts = np.bincount(rows, minlength=n_rows)
    if counts.min(initial=1) == 0:
        raise DegenerateRowError("attention row with no incident edges")
    if not np.all(np.isfinite(phi_e.data)):
        raise DivergenceError("attention scores are not finite")

    if not training:
        w = softmax_edges(phi_e, rows, n_rows)
        return AttentionSample(phi=phi_e, s=ad.Tensor(np.exp(phi_e.data)), w=w,
                               eps=None, rows=rows, n_rows=n_rows)

    eps = np.asarray(eps, dtype=np.float64).ravel()
    if eps.size != phi_e.size:
        raise DimensionError(f"need {phi_e.size} noise values, got {eps.size}")
    # the posterior scale cancels per row, so the draw is a softmax of the
    # noise-offset scores: exp(phi + log u) / sum = (exp(phi) u) / sum.
    # s (data only, for inspection) carries the usual per-row max shift so
    # large scores cannot overflow it
    z_data = phi_e.data - ad.segment_max_constant(phi_e.data, rows, n_rows)[rows]
    if cfg.mode == "weibull":
        u = dist.weibull_noise_factor(eps, cfg.k)
        with np.errstate(divide="ignore"):  # u == 0 is a legal zero weight
            offset = np.log(u)
        s_data = np.exp(z_data - log_gamma_one_plus_inv(cfg.k)) * u
    else:
        offset = eps * cfg.sigma - 0.5 * cfg.sigma ** 2
        s_data = np.exp(z_data + offset)
    w = ad.softmax_segments(ad.add(phi_e, offset), rows, n_rows)
    return AttentionSample(phi=phi_e, s=ad.Tensor(s_data), w=w, eps=eps,
                           rows=rows, n_rows=n_rows)


def stochastic_attention(phi, v, cfg, eps, mask=None, training=True):
    """Sampled attention read-out: returns (AttentionSample, W @ v)."""
    v = ad.as_tensor(v)
    phi = ad.as_tensor(phi)
    if v.ndim != 2 or phi.ndim != 2 or phi.shape[1] != v.shape[0]:
        raise DimensionError(f"scores {phi.shape} and values {v.shape} disagree")
    sample = stochastic_weights_dense(phi, cfg, eps, mask=mask, training=training)
    return sample, ad.matmul(sample.w, v)


@dataclass
class HeadParams:
    """Per-head projections; attn_src/attn_dst only for the additive score."""
    m_q: ad.Tensor
    m_k: ad.Tensor
    m_v: ad.Tensor
    attn_src: ad.Tensor = None
    attn_dst: ad.Tensor = None


def _head_noise(cfg, count, rng_or_list, h):
    if rng_or_list is None:
        raise ConfigError("stochastic training forward needs noise")
    if isinstance(rng_or_list, np.random.Generator):
        return draw_noise(cfg, count, rng_or_list)
    return np.asarray(rng_or_list[h], dtype=np.float64)


def multi_head_layer(x_q, x_kv, heads, cfg, eps=None, mask=None, training=True,
                     combine="concat"):
    """One attention layer over all heads.

    eps is either a Generator (fresh independent noise per head, drawn in
    head order) or a pre-drawn list with one flat vector per head. Head
    outputs are concatenated on the feature axis, or averaged when
    combine="mean". Returns (output, [AttentionSample per head]).
    """
    x_q, x_kv = ad.as_tensor(x_q), ad.as_tensor(x_kv)
    if len(heads) != cfg.heads:
        raise DimensionError(f"{len(heads)} head params for {cfg.heads} heads")
    if combine not in ("concat", "mean"):
        raise ConfigError(f"unknown combine {combine!r}")
    outputs, samples = [], []
    for h, head in enumerate(heads):
        for m, d_out, name in ((head.m_q, cfg.d_k, "query"),
                               (head.m_k, cfg.d_k, "key"),
                               (head.m_v, cfg.d_v, "value")):
            if m.ndim != 2 or m.shape[1] != d_out:
                raise DimensionError(f"{name} projection shape {m.shape} inconsistent")
        q = ad.matmul(x_q, head.m_q)
        k = ad.matmul(x_kv, head.m_k)
        v = ad.matmul(x_kv, head.m_v)
        phi = score(q, k, cfg.score_fn, attn_src=head.attn_src,
                    attn_dst=head.attn_dst, slope=cfg.slope)
        if cfg.mode == "deterministic":
            w, o = deterministic_attention(phi, v, mask=mask)
            samples.append(AttentionSample(phi=phi, s=None, w=w, eps=None, mask=mask))
        else:
            head_eps = None
            if training:
                head_eps = _head_noise(cfg, noise_count(mask, phi.shape), eps, h)
            sample, o = stochastic_attention(phi, v, cfg, head_eps, mask=mask,
                                             training=training)
            samples.append(sample)
        outputs.append(o)
    if combine == "concat":
        out = outputs[0] if len(outputs) == 1 else ad.concat(outputs, axis=1)
    else:
        acc = outputs[0]
        for o in outputs[1:]:
            acc = ad.add(acc, o)
        out = ad.mul(acc, 1.0 / len(outputs))
    return out, samples


@dataclass
class LayerSpec:
    heads: list
    cfg: AttentionConfig
    mask: np.ndarray = None
    combine: str = "concat"
    activation: object = None  # callable Tensor -> Tensor


def stack_layers(specs, x, eps=None, training=True):
    """Self-attention stack: each layer attends over the previous output.

    Later layers see the realized (sampled) outputs of earlier ones, so the
    per-layer samples returned here carry the conditional structure needed
    by the KL terms. eps: one Generator shared across layers, or a list with
    one entry per layer (each entry as accepted by multi_head_layer).
    """
    out = ad.as_tensor(x)
    all_samples = []
    for i, spec in enumerate(specs):
        layer_eps = eps if isinstance(eps, np.random.Generator) or eps is None else eps[i]
        out, samples = multi_head_layer(out, out, spec.heads, spec.cfg,
                                        eps=layer_eps, mask=spec.mask,
                                        training=training, combine=spec.combine)
        if spec.activation is not None:
            out = spec.activation(out)
        all_samples.append(samples)
    return out, all_samples
