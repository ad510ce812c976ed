"""Training objective and loop.

The per-step loss is a negated single-sample ELBO: cross-entropy of the
labeled instances plus the annealed, analytically summed KL of every
stochastic attention layer, plus optional L2 weight decay. The KL weight
follows sigmoid((t - t0) * rho), growing toward 1 as training proceeds
(t0 = 0 unless configured, so the schedule starts at 0.5).

Models plug into the loop through three methods: parameters() returning a
name -> Tensor dict, loss(rng, kl_weight, training) returning a
LossBreakdown for one step, and metrics(split) returning deterministic
{"loss", "accuracy"} numbers used for early stopping.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, DivergenceError, ParameterError

_NO_DEFAULT = object()


def anneal(t, rho, offset=0):
    """KL weight sigmoid((t - offset) * rho) in (0, 1]."""
    if rho <= 0:
        raise ParameterError("anneal rate rho must be positive")
    x = (float(t) - float(offset)) * float(rho)
    # stable logistic on both tails
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under row logits."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DimensionError("label outside class range")
    shift = logits.data.max(axis=1, keepdims=True)
    shifted = ad.add(logits, -shift)
    lse = ad.add(ad.log(ad.reduce_sum(ad.exp(shifted), axis=1, keepdims=True)), shift)
    log_p = ad.sub(logits, lse)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    return ad.neg(ad.reduce_mean(ad.reduce_sum(ad.mul(log_p, onehot), axis=1)))


def l2_penalty(params):
    total = ad.Tensor(0.0)
    for p in params:
        total = ad.add(total, ad.reduce_sum(ad.mul(p, p)))
    return total


@dataclass
class LossBreakdown:
    """One step's objective pieces; tensors so callers can backprop total."""
    nll: ad.Tensor
    kl_per_layer: list
    kl_weight: float
    l2: ad.Tensor
    total: ad.Tensor

    def summary(self):
        kl = sum(t.item() for t in self.kl_per_layer)
        return {"nll": self.nll.item(), "kl": kl, "kl_weight": self.kl_weight,
                "l2": self.l2.item() if self.l2 is not None else 0.0,
                "total": self.total.item()}


def loss(logits, labels, kl_terms, kl_weight, l2_lambda=0.0, l2_params=()):
    """Assemble nll + kl_weight * sum(KL) + l2_lambda * sum ||params||^2.

    An empty kl_terms list or a zero kl_weight leaves the KL contribution
    exactly absent (no zero-weighted graph edges), so gradients of prior
    parameters are exactly zero in those cases.
    """
    nll = cross_entropy(logits, labels)
    total = nll
    kl_terms = list(kl_terms)
    if kl_terms and kl_weight != 0.0:
        kl_sum = kl_terms[0]
        for term in kl_terms[1:]:
            kl_sum = ad.add(kl_sum, term)
        total = ad.add(total, ad.mul(kl_sum, float(kl_weight)))
    l2 = None
    if l2_lambda != 0.0 and len(l2_params):
        l2 = l2_penalty(l2_params)
        total = ad.add(total, ad.mul(l2, float(l2_lambda)))
    return LossBreakdown(nll=nll, kl_per_layer=kl_terms, kl_weight=kl_weight,
                         l2=l2, total=total)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class TrainState:
    """Step counter, parameters, Adam moments, and the current KL weight."""

    def __init__(self, params, rho, adam=AdamConfig(), anneal_offset=0):
        self.t = 0
        self.params = dict(params)
        self.adam = adam
        self.rho = rho
        self.anneal_offset = anneal_offset
        self.kl_weight = anneal(0, rho, anneal_offset)
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}


def adam_step(state, grads):
    """Bias-corrected Adam update in place; advances t and the KL weight."""
    if set(grads) != set(state.params):
        raise DimensionError("gradient names do not match parameters")
    for name, g in grads.items():
        if g is None:
            grads[name] = np.zeros_like(state.params[name].data)
        elif not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name!r} at step {state.t}")
        elif g.shape != state.params[name].data.shape:
            raise DimensionError(f"gradient shape mismatch for {name!r}")
    t = state.t + 1
    cfg = state.adam
    corr1 = 1.0 - cfg.beta1 ** t
    corr2 = 1.0 - cfg.beta2 ** t
    for name, p in state.params.items():
        g = grads[name]
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[name] / corr1
        v_hat = state.v[name] / corr2
        p.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    state.t = t
    state.kl_weight = anneal(t, state.rho, state.anneal_offset)


@dataclass(frozen=True)
class TrainSettings:
    max_epochs: int = 1000
    patience: int = 100
    rho: float = 0.1
    anneal_offset: int = 0
    eval_every: int = 1
    adam: AdamConfig = field(default_factory=AdamConfig)


@dataclass
class TrainResult:
    params: dict          # best-validation snapshot, name -> ndarray
    history: list         # one record dict per epoch
    best_epoch: int
    best_val_accuracy: float
    best_val_loss: float
    stopped_early: bool


def _snapshot(params):
    return {name: p.data.copy() for name, p in params.items()}


def train(model, settings, seed, on_record=None):
    """Early-stopped Adam training; returns the best-validation snapshot.

    One epoch is one gradient step (full-batch for graphs, one minibatch
    otherwise). Validation runs every eval_every epochs with expectation
    substitution, so the early-stopping signal is noise-free. The best
    snapshot is the highest validation accuracy, ties broken by lower
    validation loss; patience counts epochs since either metric improved.
    """
    rng = np.random.default_rng(seed)
    params = model.parameters()
    state = TrainState(params, rho=settings.rho, adam=settings.adam,
                       anneal_offset=settings.anneal_offset)
    best_acc, best_loss = -np.inf, np.inf
    best = TrainResult(params=_snapshot(params), history=[], best_epoch=0,
                       best_val_accuracy=-np.inf, best_val_loss=np.inf,
                       stopped_early=False)
    patience_left = settings.patience
    for epoch in range(1, settings.max_epochs + 1):
        step = state.t  # the weight used this step is sigmoid(step * rho)
        kl_weight = state.kl_weight
        ad.zero_grads(params.values())
        with ad.Tape() as tape:
            breakdown = model.loss(rng, kl_weight, training=True)
        if not np.isfinite(breakdown.total.item()):
            raise DivergenceError(f"non-finite loss at step {step}")
        tape.backward(breakdown.total)
        adam_step(state, {name: p.grad for name, p in params.items()})

        record = {"step": step, "kl_weight": kl_weight}
        record.update({f"train_{k}": v for k, v in breakdown.summary().items()
                       if k != "kl_weight"})
        if epoch % settings.eval_every == 0:
            val = model.metrics("val")
            record["val_loss"] = val["loss"]
            record["val_accuracy"] = val["accuracy"]
            improved_acc = val["accuracy"] > best_acc
            improved_loss = val["loss"] < best_loss
            if improved_acc or (val["accuracy"] == best_acc and improved_loss):
                best.params = _snapshot(params)
                best.best_epoch = epoch
                best.best_val_accuracy = val["accuracy"]
                best.best_val_loss = val["loss"]
            if improved_acc or improved_loss:
                patience_left = settings.patience
            else:
                patience_left -= settings.eval_every
            best_acc = max(best_acc, val["accuracy"])
            best_loss = min(best_loss, val["loss"])
        best.history.append(record)
        if on_record is not None:
            on_record(record)
        if patience_left <= 0:
            best.stopped_early = True
            break
    return best
