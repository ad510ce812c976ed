"""Weibull / Lognormal / Gamma building blocks.

Reparameterizable samplers, log densities, the two closed-form KL
divergences used for regularization, and the special functions they need
(log-gamma, digamma, regularized incomplete beta). Everything operates on
float64 numpy arrays; the *_logits variants build the same KL expressions
out of autodiff ops so gradients reach the score matrix and the prior
parameters.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import DomainError

# Euler-Mascheroni constant, hard-coded to 20 digits
EULER_GAMMA = 0.57721566490153286061

_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])

_HALF_LOG_TWO_PI = 0.5 * np.log(2.0 * np.pi)


def _positive(x, what):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0):
        raise DomainError(f"{what} must be positive and finite")
    return x


def _lgamma_raw(x):
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    small = x < 0.5
    xs = np.where(small, x + 1.0, x)
    z = xs - 1.0
    a = np.full_like(z, _LANCZOS_COEF[0])
    for i in range(1, len(_LANCZOS_COEF)):
        a += _LANCZOS_COEF[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    out = _HALF_LOG_TWO_PI + (z + 0.5) * np.log(t) - t + np.log(a)
    out = np.where(small, out - np.log(x), out)
    return float(out[0]) if scalar else out


def lgamma(x):
    """log Γ(x) for x > 0 via the Lanczos approximation (g=7, 9 terms).

    Arguments below 0.5 are lifted with log Γ(x) = log Γ(x+1) − log x so the
    rational part always runs in its accurate range.
    """
    return _lgamma_raw(_positive(x, "lgamma argument"))


def _digamma_raw(x):
    scalar = x.ndim == 0
    xs = np.array(np.atleast_1d(x), dtype=np.float64)
    lo = xs.min()
    if lo < 6.0:
        # lift every entry in one shot; extra steps past 6 only help accuracy
        n_lift = int(np.ceil(6.0 - lo))
        steps = np.arange(n_lift).reshape((n_lift,) + (1,) * xs.ndim)
        acc = -(1.0 / (xs + steps)).sum(axis=0)
        xs = xs + n_lift
    else:
        acc = np.zeros_like(xs)
    u = 1.0 / (xs * xs)
    tail = u * (1.0 / 12.0 - u * (1.0 / 120.0 - u * (1.0 / 252.0 - u * (
        1.0 / 240.0 - u * (1.0 / 132.0 - u * (691.0 / 32760.0))))))
    out = acc + np.log(xs) - 0.5 / xs - tail
    return float(out[0]) if scalar else out


def digamma(x):
    """d/dx log Γ(x) for x > 0.

    Small arguments are shifted up with ψ(x) = ψ(x+1) − 1/x until x ≥ 6,
    then the asymptotic series (Bernoulli terms through x^-12) applies.
    """
    return _digamma_raw(_positive(x, "digamma argument"))


def lgamma_op(x):
    """Autodiff wrapper for lgamma; the derivative is digamma."""
    x = ad.as_tensor(x)
    return ad.unary_with_derivative(x, lgamma(x.data), digamma(x.data))


def regularized_incomplete_beta(a, b, x):
    """I_x(a, b) by the continued fraction of the incomplete beta integral."""
    a, b, x = float(a), float(b), float(x)
    if a <= 0.0 or b <= 0.0:
        raise DomainError("incomplete beta needs positive a, b")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"incomplete beta argument {x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    if x > (a + 1.0) / (a + b + 2.0):
        # symmetry keeps the continued fraction in its fast-converging regime
        return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x)
    front = np.exp(a * np.log(x) + b * np.log1p(-x)
                   + lgamma(a + b) - lgamma(a) - lgamma(b)) / a
    tiny = 1e-300
    c = 1.0
    d = 1.0 - (a + b) * x / (a + 1.0)
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < 3e-14:
            break
    return front * h


def welch_two_sided_p(mean1, var1, n1, mean2, var2, n2):
    """Two-sided p-value of Welch's unequal-variance t-test.

    var1/var2 are unbiased sample variances. When both are zero the test is
    degenerate: identical means give p = 1, distinct means give p = 0.
    """
    if n1 < 2 or n2 < 2:
        raise DomainError("Welch test needs at least two samples per group")
    if var1 < 0.0 or var2 < 0.0:
        raise DomainError("negative variance")
    a, b = var1 / n1, var2 / n2
    se2 = a + b
    if se2 == 0.0:
        return 1.0 if mean1 == mean2 else 0.0
    t2 = (mean1 - mean2) ** 2 / se2
    df = se2 ** 2 / (a ** 2 / (n1 - 1) + b ** 2 / (n2 - 1))
    return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t2))


@dataclass(frozen=True)
class WeibullParams:
    """Shape k (scalar hyperparameter) and scale lam (scalar or per-entry)."""
    k: float
    lam: object

    def __post_init__(self):
        _positive(self.k, "Weibull shape k")
        _positive(self.lam, "Weibull scale lambda")


@dataclass(frozen=True)
class LognormalParams:
    mu: object
    sigma: float

    def __post_init__(self):
        np.asarray(self.mu, dtype=np.float64)
        _positive(self.sigma, "Lognormal sigma")


@dataclass(frozen=True)
class GammaParams:
    """Shape alpha (scalar or per-entry) and rate beta."""
    alpha: object
    beta: float

    def __post_init__(self):
        _positive(self.alpha, "Gamma shape alpha")
        _positive(self.beta, "Gamma rate beta")


def clamp_uniform(eps):
    """Validate uniform noise and pull it off the open-interval boundary."""
    eps = np.asarray(eps, dtype=np.float64)
    if not np.all(np.isfinite(eps)) or np.any(eps < 0.0) or np.any(eps > 1.0):
        raise DomainError("uniform noise outside [0, 1]")
    return np.clip(eps, 1e-12, 1.0 - 1e-12)


def weibull_noise_factor(eps, k):
    """(−log(1−ε))^(1/k), the noise-only factor of the Weibull sampler."""
    return (-np.log1p(-clamp_uniform(eps))) ** (1.0 / float(k))


def weibull_sample(params, eps):
    return np.asarray(params.lam, dtype=np.float64) * weibull_noise_factor(eps, params.k)


def lognormal_sample(params, eps):
    eps = np.asarray(eps, dtype=np.float64)
    return np.exp(eps * params.sigma + np.asarray(params.mu, dtype=np.float64))


def weibull_mean(params):
    return np.asarray(params.lam, dtype=np.float64) * np.exp(lgamma(1.0 + 1.0 / params.k))


def lognormal_mean(params):
    return np.exp(np.asarray(params.mu, dtype=np.float64) + 0.5 * params.sigma ** 2)


def weibull_scale_for_mean(log_mean, k):
    """Scale lambda such that the Weibull mean is exp(log_mean)."""
    return np.exp(np.asarray(log_mean, dtype=np.float64) - lgamma(1.0 + 1.0 / float(k)))


def lognormal_mu_for_mean(log_mean, sigma):
    """Location mu such that the Lognormal mean is exp(log_mean)."""
    return np.asarray(log_mean, dtype=np.float64) - 0.5 * float(sigma) ** 2


def kl_weibull_gamma(k, lam, alpha, beta):
    """KL(Weibull(k, lam) || Gamma(alpha, beta)), elementwise; beta is a rate."""
    k = float(_positive(k, "k"))
    lam = _positive(lam, "lambda")
    alpha = _positive(alpha, "alpha")
    beta = float(_positive(beta, "beta"))
    return (EULER_GAMMA * alpha / k
            - alpha * np.log(lam)
            + np.log(k)
            + beta * lam * np.exp(lgamma(1.0 + 1.0 / k))
            - EULER_GAMMA - 1.0
            - alpha * np.log(beta)
            + lgamma(alpha))


def kl_lognormal_lognormal(mu1, sigma1, mu2, sigma2):
    """KL(Lognormal(mu1, sigma1^2) || Lognormal(mu2, sigma2^2)), elementwise."""
    sigma1 = _positive(sigma1, "sigma1")
    sigma2 = _positive(sigma2, "sigma2")
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    return (np.log(sigma2 / sigma1)
            + (sigma1 ** 2 + (mu1 - mu2) ** 2) / (2.0 * sigma2 ** 2)
            - 0.5)


@lru_cache(maxsize=None)
def _lgamma_one_plus_inv(k):
    return float(lgamma(1.0 + 1.0 / k))


def kl_weibull_gamma_logits(phi, k, alpha, beta):
    """KL(Weibull || Gamma) as one autodiff op, parameterized by log-mean phi.

    The posterior scale is tied to phi through lambda = exp(phi)/Γ(1+1/k),
    so log lambda = phi − lgamma(1+1/k) and beta·lambda·Γ(1+1/k) collapses
    to beta·exp(phi). Stays finite for any float phi and keeps gradients
    flowing to both phi and alpha. Fused into a single tape node because
    this runs once per layer per training step.
    """
    k = float(_positive(k, "k"))
    beta = float(_positive(beta, "beta"))
    phi = ad.as_tensor(phi)
    alpha = ad.as_tensor(alpha)
    a = _positive(alpha.data, "alpha")
    log_lam = phi.data - _lgamma_one_plus_inv(k)
    alpha_coef = EULER_GAMMA / k - np.log(beta)
    bexp = beta * np.exp(phi.data)
    value = (a * (alpha_coef - log_lam) + bexp + _lgamma_raw(a)
             + np.log(k) - EULER_GAMMA - 1.0)
    return ad.binary_with_derivatives(
        phi, alpha, value,
        da=bexp - a,
        db=alpha_coef - log_lam + _digamma_raw(a),
    )


def kl_lognormal_logits(phi, sigma_posterior, prior_mu, sigma_prior):
    """KL(Lognormal posterior || Lognormal prior) as one autodiff op.

    The posterior location is tied to phi through mu = phi − sigma^2/2 so
    the posterior mean is exp(phi); the prior location is a free tensor.
    """
    sq = float(_positive(sigma_posterior, "posterior sigma"))
    sp = float(_positive(sigma_prior, "prior sigma"))
    phi = ad.as_tensor(phi)
    prior_mu = ad.as_tensor(prior_mu)
    diff = phi.data - 0.5 * sq * sq - prior_mu.data
    const = np.log(sp / sq) + sq * sq / (2.0 * sp * sp) - 0.5
    grad = diff / (sp * sp)
    return ad.binary_with_derivatives(
        phi, prior_mu, diff * diff / (2.0 * sp * sp) + const,
        da=grad, db=-grad,
    )


def log_pdf(family, params, s):
    """Elementwise log density of s > 0 under one of the three families."""
    s = _positive(s, "support point s")
    if family == "weibull":
        k = float(params.k)
        lam = np.asarray(params.lam, dtype=np.float64)
        z = s / lam
        return np.log(k / lam) + (k - 1.0) * np.log(z) - z ** k
    if family == "gamma":
        alpha = np.asarray(params.alpha, dtype=np.float64)
        beta = float(params.beta)
        return (alpha * np.log(beta) - lgamma(alpha)
                + (alpha - 1.0) * np.log(s) - beta * s)
    if family == "lognormal":
        mu = np.asarray(params.mu, dtype=np.float64)
        sigma = float(params.sigma)
        z = (np.log(s) - mu) / sigma
        return -np.log(s * sigma) - _HALF_LOG_TWO_PI - 0.5 * z * z
    raise DomainError(f"unknown distribution family {family!r}")
