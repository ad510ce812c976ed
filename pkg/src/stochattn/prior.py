"""Priors over unnormalized attention weights and their KL contributions.

A prior is either fixed (one shared parameter value for every attention
entry) or contextual: a tiny two-layer network reads the key features and
emits a weight per key, softmax-normalized so the keys compete. The prior
shape/location for entry (i, j) then depends on key j only, shared across
queries. layer_kl turns one attention sample plus prior parameters into the
scalar analytic KL term that the training objective anneals in.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import distributions as dist
from .errors import ConfigError, DimensionError

PRIOR_KINDS = ("none", "fixed", "contextual")
PRIOR_FAMILIES = ("gamma", "lognormal")


@dataclass(frozen=True)
class PriorConfig:
    kind: str
    family: str = "gamma"
    beta: float = None        # gamma rate
    sigma1: float = None      # lognormal prior scale
    alpha_fixed: float = None
    mu_fixed: float = None
    d_mid: int = 1

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ConfigError(f"unknown prior kind {self.kind!r}")
        if self.kind == "none":
            return
        if self.family not in PRIOR_FAMILIES:
            raise ConfigError(f"unknown prior family {self.family!r}")
        if self.family == "gamma":
            if self.beta is None or self.beta <= 0:
                raise ConfigError("gamma prior needs a positive rate beta")
            if self.kind == "fixed" and (self.alpha_fixed is None or self.alpha_fixed <= 0):
                raise ConfigError("fixed gamma prior needs a positive alpha")
        else:
            if self.sigma1 is None or self.sigma1 <= 0:
                raise ConfigError("lognormal prior needs a positive sigma")
            if self.kind == "fixed" and self.mu_fixed is None:
                raise ConfigError("fixed lognormal prior needs a location mu")
        if self.kind == "contextual" and self.d_mid < 1:
            raise ConfigError("contextual prior needs d_mid >= 1")


@dataclass
class ContextualPriorNet:
    """Key scorer: linear d_k -> d_mid, ReLU, linear d_mid -> 1."""
    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor

    @classmethod
    def create(cls, d_k, d_mid, rng):
        def glorot(fan_in, fan_out):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return ad.Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                             requires_grad=True)

        return cls(w1=glorot(d_k, d_mid),
                   b1=ad.Tensor(np.zeros((1, d_mid)), requires_grad=True),
                   w2=glorot(d_mid, 1),
                   b2=ad.Tensor(np.zeros((1, 1)), requires_grad=True))

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]


def contextual_psi(keys, net):
    """Per-key prior weights psi[n x 1]: positive, summing to one."""
    keys = ad.as_tensor(keys)
    if keys.ndim != 2 or keys.shape[1] != net.w1.shape[0]:
        raise DimensionError(f"key features {keys.shape} do not match the prior net")
    hidden = ad.relu(ad.add(ad.matmul(keys, net.w1), net.b1))
    logits = ad.add(ad.matmul(hidden, net.w2), net.b2)
    return ad.transpose(ad.softmax_rows(ad.transpose(logits)))


@dataclass
class PriorParams:
    """Per-entry prior parameters, dense [m x n] or edge-layout [E]."""
    family: str
    alpha: ad.Tensor = None
    beta: float = None
    mu: ad.Tensor = None
    sigma: float = None


def _broadcast_rows(row, m):
    # [1 x n] -> [m x n] while keeping gradients flowing back to the row
    return ad.add(row, ad.Tensor(np.zeros((m, row.shape[1]))))


def prior_params(cfg, m, n, psi=None):
    """Dense prior parameter tensors for an [m x n] attention matrix."""
    if cfg.kind == "none":
        raise ConfigError("prior kind 'none' has no parameters; skip the KL term")
    if cfg.kind == "fixed":
        value = cfg.alpha_fixed if cfg.family == "gamma" else cfg.mu_fixed
        field = ad.Tensor(np.full((m, n), float(value)))
    else:
        psi = ad.as_tensor(psi)
        if psi.shape != (n, 1):
            raise DimensionError(f"psi shape {psi.shape}, expected ({n}, 1)")
        field = _broadcast_rows(ad.transpose(psi), m)
    if cfg.family == "gamma":
        return PriorParams(family="gamma", alpha=field, beta=cfg.beta)
    return PriorParams(family="lognormal", mu=field, sigma=cfg.sigma1)


def prior_params_edges(cfg, cols, n, psi=None):
    """Edge-layout prior parameters: one value per edge, indexed by key."""
    if cfg.kind == "none":
        raise ConfigError("prior kind 'none' has no parameters; skip the KL term")
    cols = np.asarray(cols, dtype=np.intp)
    if cfg.kind == "fixed":
        value = cfg.alpha_fixed if cfg.family == "gamma" else cfg.mu_fixed
        field = ad.Tensor(np.full(cols.shape, float(value)))
    else:
        psi = ad.as_tensor(psi)
        if psi.shape != (n, 1):
            raise DimensionError(f"psi shape {psi.shape}, expected ({n}, 1)")
        field = ad.gather_rows(ad.reshape(psi, (n,)), cols)
    if cfg.family == "gamma":
        return PriorParams(family="gamma", alpha=field, beta=cfg.beta)
    return PriorParams(family="lognormal", mu=field, sigma=cfg.sigma1)


def _check_pairing(mode, family):
    if (mode, family) not in (("weibull", "gamma"), ("lognormal", "lognormal")):
        raise ConfigError(f"no analytic KL for posterior {mode!r} with prior {family!r}")


def layer_kl(sample, attn_cfg, prior):
    """Analytic KL of one layer's attention posterior from its prior.

    Summed over the unmasked entries (dense layout) or all edges (edge
    layout). Differentiable w.r.t. the scores behind the sample and any
    prior parameters produced by a contextual net.
    """
    _check_pairing(attn_cfg.mode, prior.family)
    phi = sample.phi
    if sample.rows is not None:
        if prior.family == "gamma":
            kl = dist.kl_weibull_gamma_logits(phi, attn_cfg.k, prior.alpha, prior.beta)
        else:
            kl = dist.kl_lognormal_logits(phi, attn_cfg.sigma, prior.mu, prior.sigma)
        return ad.reduce_sum(kl)
    mask = sample.mask
    if mask is None:
        mask_f = None
    else:
        mask_f = np.asarray(mask, dtype=np.float64)
        # zero out masked scores first so no overflow leaks through the mask
        phi = ad.mul(phi, mask_f)
    if prior.family == "gamma":
        kl = dist.kl_weibull_gamma_logits(phi, attn_cfg.k, prior.alpha, prior.beta)
    else:
        kl = dist.kl_lognormal_logits(phi, attn_cfg.sigma, prior.mu, prior.sigma)
    if mask_f is not None:
        kl = ad.mul(kl, mask_f)
    return ad.reduce_sum(kl)
