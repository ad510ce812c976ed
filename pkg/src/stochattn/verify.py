"""Semi-analytic verification suites, runnable from the CLI.

Each suite returns CheckResult rows: a named measurement, its tolerance,
and whether measured <= tolerance. The suites check the analytic KL
formulas against numerical quadrature, the reparameterized gradients
against finite differences on a small two-layer model, the vanishing-noise
and expectation-substitution limits, and the variance advantage of the
analytic KL over its Monte Carlo counterpart.
"""

from dataclasses import dataclass

import numpy as np
import scipy.integrate

from . import attention as attn
from . import autodiff as ad
from . import distributions as dist
from . import objective as obj
from . import prior as pr
from .errors import ConfigError

SUITES = ("kl", "grad", "limit", "rao-blackwell", "all")


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float

    @property
    def passed(self):
        return self.measured <= self.tolerance

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{self.name}: measured={self.measured:.3e} tolerance={self.tolerance:.1e} {flag}"


# ------------------------------------------------------------- kl suite

def _kl_weibull_gamma_quad(k, lam, alpha, beta, tail=1e-16):
    # substitute u = (s / lam)^k: the expectation under the Weibull becomes
    # an Exp(1) average, so the k < 1 density singularity never appears
    wp = dist.WeibullParams(k=k, lam=lam)
    gp = dist.GammaParams(alpha=alpha, beta=beta)

    def integrand(u):
        s = lam * u ** (1.0 / k)
        return np.exp(-u) * (dist.log_pdf("weibull", wp, s)
                             - dist.log_pdf("gamma", gp, s))

    # full_output mutes the endpoint log-singularity warning; accuracy is
    # still asserted through the suite tolerance
    return scipy.integrate.quad(integrand, 0.0, -np.log(tail), limit=400,
                                epsabs=1e-13, epsrel=1e-11, full_output=1)[0]


def _kl_lognormal_quad(mu1, sigma1, mu2, sigma2):
    # substitute t = (log s - mu1) / sigma1: expectation under a unit Gaussian
    def integrand(t):
        log_s = mu1 + sigma1 * t
        p = dist.LognormalParams(mu=mu1, sigma=sigma1)
        q = dist.LognormalParams(mu=mu2, sigma=sigma2)
        ratio = dist.log_pdf("lognormal", p, np.exp(log_s)) - dist.log_pdf(
            "lognormal", q, np.exp(log_s))
        return np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi) * ratio

    return scipy.integrate.quad(integrand, -10.0, 10.0, limit=200,
                                epsabs=1e-13, epsrel=1e-11)[0]


def _relative_gap(analytic, numeric):
    # guarded relative error: Weibull(1, 1) IS Gamma(1, 1), so one grid
    # point has true KL 0 and a bare ratio there would divide noise by noise
    return abs(analytic - numeric) / max(abs(numeric), 1e-9)


def suite_kl():
    worst_w = 0.0
    for k in (0.5, 1.0, 2.0, 5.0):
        for lam in (0.1, 1.0, 10.0):
            for alpha in (0.5, 1.0, 2.0):
                for beta in (0.5, 1.0, 2.0):
                    analytic = dist.kl_weibull_gamma(k, lam, alpha, beta)
                    numeric = _kl_weibull_gamma_quad(k, lam, alpha, beta)
                    worst_w = max(worst_w, _relative_gap(analytic, numeric))
    worst_l = 0.0
    rng = np.random.default_rng(90210)
    for _ in range(40):
        mu1, mu2 = rng.uniform(-2.0, 2.0, size=2)
        sigma1, sigma2 = rng.uniform(0.3, 2.5, size=2)
        analytic = dist.kl_lognormal_lognormal(mu1, sigma1, mu2, sigma2)
        numeric = _kl_lognormal_quad(mu1, sigma1, mu2, sigma2)
        worst_l = max(worst_l, _relative_gap(analytic, numeric))
    return [CheckResult("kl.weibull-gamma-quadrature", worst_w, 1e-5),
            CheckResult("kl.lognormal-quadrature", worst_l, 1e-6)]


# ----------------------------------------------------------- grad suite

def _tiny_model(mode):
    """Two self-attention layers, two heads each, contextual prior, L2."""
    rng = np.random.default_rng(0)
    n, d_in, d_head, classes = 5, 6, 4, 3
    x = rng.normal(size=(n, d_in))
    labels = rng.integers(0, classes, size=n)
    if mode == "weibull":
        acfg = attn.AttentionConfig(mode="weibull", d_k=d_head, d_v=d_head, k=1.5)
        pcfg = pr.PriorConfig(kind="contextual", family="gamma", beta=0.8, d_mid=2)
    else:
        acfg = attn.AttentionConfig(mode="lognormal", d_k=d_head, d_v=d_head, sigma=0.4)
        pcfg = pr.PriorConfig(kind="contextual", family="lognormal", sigma1=1.2, d_mid=2)

    params = {}
    nets = {}
    dims = [d_in, 2 * d_head]
    for layer in (1, 2):
        for head in (0, 1):
            tag = f"l{layer}.h{head}"
            for piece in ("q", "k", "v"):
                params[f"{tag}.m_{piece}"] = ad.Tensor(
                    rng.normal(size=(dims[layer - 1], d_head)) * 0.4,
                    requires_grad=True)
            net = pr.ContextualPriorNet.create(d_head, pcfg.d_mid, rng)
            nets[tag] = net
            for pname in ("w1", "b1", "w2", "b2"):
                params[f"{tag}.prior.{pname}"] = getattr(net, pname)
    params["w_out"] = ad.Tensor(rng.normal(size=(2 * d_head, classes)) * 0.4,
                                requires_grad=True)
    eps_bank = {f"l{layer}.h{head}": rng.random(n * n) if mode == "weibull"
                else rng.normal(size=n * n)
                for layer in (1, 2) for head in (0, 1)}

    def forward():
        h = ad.Tensor(x)
        kl_terms = []
        for layer in (1, 2):
            outs = []
            for head in (0, 1):
                tag = f"l{layer}.h{head}"
                q = ad.matmul(h, params[f"{tag}.m_q"])
                k_proj = ad.matmul(h, params[f"{tag}.m_k"])
                v = ad.matmul(h, params[f"{tag}.m_v"])
                phi = ad.mul(ad.matmul(q, ad.transpose(k_proj)),
                             1.0 / np.sqrt(d_head))
                sample = attn.stochastic_weights_dense(phi, acfg, eps_bank[tag])
                outs.append(ad.matmul(sample.w, v))
                psi = pr.contextual_psi(k_proj, nets[tag])
                prior_p = pr.prior_params(pcfg, n, n, psi)
                kl_terms.append(pr.layer_kl(sample, acfg, prior_p))
            h = ad.concat(outs, axis=1)
        logits = ad.matmul(h, params["w_out"])
        l2_params = [p for name, p in params.items() if ".prior." not in name]
        return obj.loss(logits, labels, kl_terms, kl_weight=0.7,
                        l2_lambda=1e-3, l2_params=l2_params).total

    return params, forward


def _fd_gradient(f, tensor, h=1e-5):
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.ravel()
    out = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f().item()
        flat[i] = orig - h
        down = f().item()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return grad


def suite_grad():
    results = []
    for mode in ("weibull", "lognormal"):
        params, forward = _tiny_model(mode)
        ad.zero_grads(params.values())
        with ad.Tape() as tape:
            loss = forward()
        tape.backward(loss)
        worst = 0.0
        for name, p in params.items():
            numeric = _fd_gradient(forward, p)
            analytic = p.grad if p.grad is not None else np.zeros_like(numeric)
            scale = max(np.abs(analytic).max(initial=0.0),
                        np.abs(numeric).max(initial=0.0))
            if scale < 1e-6:
                continue  # both sides call it zero; FD noise would dominate
            worst = max(worst, np.abs(analytic - numeric).max() / scale)
        results.append(CheckResult(f"grad.two-layer-{mode}", worst, 1e-4))
    return results


# ---------------------------------------------------------- limit suite

def suite_limit():
    rng = np.random.default_rng(1)
    phi = ad.Tensor(rng.normal(size=(6, 7)) * 2.0)
    mask = rng.random((6, 7)) < 0.7
    mask[:, 0] = True
    acfg = attn.AttentionConfig(mode="lognormal", d_k=4, d_v=4, sigma=1e-8)
    eps = rng.normal(size=int(mask.sum()))
    sampled = attn.stochastic_weights_dense(phi, acfg, eps, mask=mask).w
    soft = ad.softmax_rows(phi, mask=mask)
    worst_sigma = np.abs(sampled.data - soft.data).max()

    sub = attn.stochastic_weights_dense(phi, acfg, None, mask=mask, training=False).w
    sub_diff = np.abs(sub.data - soft.data).max()  # bitwise identical path

    wcfg = attn.AttentionConfig(mode="weibull", d_k=4, d_v=4, k=2.0)
    sub_w = attn.stochastic_weights_dense(phi, wcfg, None, mask=mask, training=False).w
    sub_w_diff = np.abs(sub_w.data - soft.data).max()

    return [CheckResult("limit.lognormal-sigma-to-zero", worst_sigma, 1e-6),
            CheckResult("limit.substitution-lognormal", sub_diff, 0.0),
            CheckResult("limit.substitution-weibull", sub_w_diff, 0.0)]


# --------------------------------------------------- rao-blackwell suite

def _two_layer_kl_estimates(trials=300, seed=0):
    """Semi-analytic vs full Monte Carlo KL of a two-layer stack.

    Layer 2's scores depend on layer 1's sampled weights, so both
    estimators are random; the analytic one integrates each layer's KL
    exactly given its inputs and must not be more variable.
    """
    rng = np.random.default_rng(seed)
    n = 4
    k = 1.5
    alpha, beta = 1.2, 0.9
    acfg = attn.AttentionConfig(mode="weibull", d_k=3, d_v=3, k=k)
    pcfg = pr.PriorConfig(kind="fixed", family="gamma", beta=beta, alpha_fixed=alpha)
    phi1 = rng.normal(size=(n, n)) * 0.8
    v1 = rng.normal(size=(n, 3))
    w2_proj = rng.normal(size=(3, n)) * 0.5

    semi = np.zeros(trials)
    full = np.zeros(trials)
    gp = dist.GammaParams(alpha=alpha, beta=beta)
    for t in range(trials):
        eps1 = rng.random(n * n)
        s1 = attn.stochastic_weights_dense(ad.Tensor(phi1), acfg, eps1)
        phi2 = ad.matmul(ad.matmul(s1.w, ad.Tensor(v1)), ad.Tensor(w2_proj))
        eps2 = rng.random(n * n)
        s2 = attn.stochastic_weights_dense(phi2, acfg, eps2)

        total_semi = 0.0
        total_full = 0.0
        for sample in (s1, s2):
            prior_p = pr.prior_params(pcfg, n, n)
            total_semi += pr.layer_kl(sample, acfg, prior_p).item()
            lam = dist.weibull_scale_for_mean(sample.phi.data, k)
            s_val = lam * dist.weibull_noise_factor(sample.eps, k).reshape(n, n)
            wp = dist.WeibullParams(k=k, lam=lam)
            total_full += (dist.log_pdf("weibull", wp, s_val)
                           - dist.log_pdf("gamma", gp, s_val)).sum()
        semi[t] = total_semi
        full[t] = total_full
    return semi, full


def _one_layer_mc_gap_se(samples=100_000, seed=2):
    """z-score of analytic layer_kl against the sampled log-ratio mean.

    With one layer the scores are constants, so the analytic KL is exact
    and the Monte Carlo mean must land within sampling error of it.
    """
    rng = np.random.default_rng(seed)
    n, k, alpha, beta = 4, 1.5, 1.2, 0.9
    acfg = attn.AttentionConfig(mode="weibull", d_k=3, d_v=3, k=k)
    pcfg = pr.PriorConfig(kind="fixed", family="gamma", beta=beta, alpha_fixed=alpha)
    phi = rng.normal(size=(n, n)) * 0.8
    sample = attn.stochastic_weights_dense(ad.Tensor(phi), acfg, rng.random(n * n))
    analytic = pr.layer_kl(sample, acfg, pr.prior_params(pcfg, n, n)).item()

    lam = dist.weibull_scale_for_mean(phi, k)
    wp = dist.WeibullParams(k=k, lam=lam)
    gp = dist.GammaParams(alpha=alpha, beta=beta)
    s_val = lam * dist.weibull_noise_factor(rng.random((samples, n, n)), k)
    ratios = (dist.log_pdf("weibull", wp, s_val)
              - dist.log_pdf("gamma", gp, s_val)).sum(axis=(1, 2))
    se = ratios.std(ddof=1) / np.sqrt(samples)
    return abs(analytic - ratios.mean()) / se


def suite_rao_blackwell():
    semi, full = _two_layer_kl_estimates()
    trials = semi.size
    se = np.sqrt(semi.var(ddof=1) / trials + full.var(ddof=1) / trials)
    gap_se = abs(semi.mean() - full.mean()) / se
    var_ratio = semi.var(ddof=1) / full.var(ddof=1)
    return [CheckResult("rao-blackwell.one-layer-mc-gap-se",
                        _one_layer_mc_gap_se(), 3.0),
            CheckResult("rao-blackwell.mean-gap-se", gap_se, 3.0),
            CheckResult("rao-blackwell.variance-ratio", var_ratio, 1.0)]


def run_suite(name):
    if name not in SUITES:
        raise ConfigError(f"unknown verify suite {name!r}; choose from {SUITES}")
    table = {"kl": suite_kl, "grad": suite_grad, "limit": suite_limit,
             "rao-blackwell": suite_rao_blackwell}
    if name == "all":
        results = []
        for key in ("kl", "grad", "limit", "rao-blackwell"):
            results.extend(table[key]())
        return results
    return table[name]()
