"""Predictive uncertainty from repeated stochastic forward passes.

posterior_sample collects M class-probability matrices from a sampling
callable. certainty marks an instance certain when a Welch test separates
its top two classes (ranked by posterior mean) at the given significance.
pavpu combines accuracy and certainty flags into the usual ratio of
(accurate-and-certain + inaccurate-and-uncertain) over all instances.
"""

from dataclasses import dataclass

import numpy as np

from .distributions import welch_two_sided_p
from .errors import DimensionError, MetricError, ParameterError


@dataclass
class PosteriorPredictions:
    """Stacked probability samples, shape [M, B, C]."""
    samples: np.ndarray

    @property
    def m_samples(self):
        return self.samples.shape[0]

    @property
    def count(self):
        return self.samples.shape[1]

    def mean(self):
        return self.samples.mean(axis=0)

    def predictions(self):
        return self.mean().argmax(axis=1)


def posterior_sample(sample_fn, m_samples, rng):
    """Draw m_samples probability matrices from sample_fn(rng) and stack them.

    Each draw must be a [B, C] matrix of rows summing to 1 (tolerance 1e-9);
    anything else points at a broken softmax upstream.
    """
    if m_samples < 2:
        raise ParameterError(f"need at least 2 posterior samples, got {m_samples}")
    draws = []
    shape = None
    for _ in range(m_samples):
        probs = np.asarray(sample_fn(rng), dtype=np.float64)
        if probs.ndim != 2:
            raise DimensionError(f"sample must be [instances, classes], got {probs.shape}")
        if shape is None:
            shape = probs.shape
        elif probs.shape != shape:
            raise DimensionError(f"sample shapes differ: {shape} vs {probs.shape}")
        if np.abs(probs.sum(axis=1) - 1.0).max(initial=0.0) > 1e-9:
            raise MetricError("probability rows do not sum to 1")
        draws.append(probs)
    return PosteriorPredictions(samples=np.stack(draws, axis=0))


def certainty(preds, p_threshold=0.05):
    """Boolean certainty flags: top two classes separated by a Welch test.

    Classes are ranked by posterior mean probability; the instance is
    certain when the two-sided p-value of the top pair falls below the
    threshold. Zero-variance pairs follow the degenerate-test convention
    (identical means are never separated, distinct means always are).
    """
    if not 0.0 < p_threshold < 1.0:
        raise ParameterError(f"p threshold must be in (0, 1), got {p_threshold}")
    samples = preds.samples
    m = preds.m_samples
    flags = np.zeros(preds.count, dtype=bool)
    means = preds.mean()
    for i in range(preds.count):
        first, second = np.argsort(means[i])[::-1][:2]
        x = samples[:, i, first]
        y = samples[:, i, second]
        p = welch_two_sided_p(x.mean(), x.var(ddof=1), m,
                              y.mean(), y.var(ddof=1), m)
        flags[i] = p < p_threshold
    return flags


@dataclass(frozen=True)
class PavpuCounts:
    accurate_certain: int
    accurate_uncertain: int
    inaccurate_certain: int
    inaccurate_uncertain: int

    @property
    def total(self):
        return (self.accurate_certain + self.accurate_uncertain
                + self.inaccurate_certain + self.inaccurate_uncertain)


def pavpu(accurate, certain):
    """(accurate & certain + inaccurate & uncertain) / total, with counts."""
    accurate = np.asarray(accurate, dtype=bool)
    certain = np.asarray(certain, dtype=bool)
    if accurate.shape != certain.shape or accurate.ndim != 1:
        raise DimensionError(f"flag shapes differ: {accurate.shape} vs {certain.shape}")
    if accurate.size == 0:
        raise MetricError("PAvPU is undefined on an empty instance set")
    counts = PavpuCounts(
        accurate_certain=int((accurate & certain).sum()),
        accurate_uncertain=int((accurate & ~certain).sum()),
        inaccurate_certain=int((~accurate & certain).sum()),
        inaccurate_uncertain=int((~accurate & ~certain).sum()),
    )
    value = (counts.accurate_certain + counts.inaccurate_uncertain) / counts.total
    return value, counts
