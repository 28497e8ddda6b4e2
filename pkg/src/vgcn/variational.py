"""Priors and variational posteriors over the adjacency matrix.

Everything here is defined per unordered node pair (i, j), i < j, in the
canonical upper-triangle ordering from :func:`vgcn.graph.pair_indices`, and
mirrored into symmetric matrices when a sample is materialized.

Two posterior families are supported:

* free: one parameter per pair, stored as log-odds (discrete Bernoulli) or
  log-locations (relaxed binary Concrete); these coincide because the
  zero-temperature limit probability of a Concrete with location lambda is
  lambda / (1 + lambda) = sigmoid(log lambda).
* low-rank: per-node embeddings plus biases and a global shift inducing the
  pair parameter through a dot product.

The objective family covers the discrete ELBO (analytic KL, score-function
gradients for the posterior, pathwise gradients for the network weights), the
relaxed ELBO (fully reparameterized through Logistic noise on the pre-sigmoid
variables) and the importance-weighted bound, plus brute-force enumeration
oracles for small graphs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit
from scipy.special import logsumexp as _logsumexp

from . import autodiff as ad
from . import nn
from .errors import (
    InvalidSmoothingError,
    MismatchedSupportError,
    TooLargeToEnumerateError,
)
from .graph import (
    SymmetricBinaryAdjacency,
    normalize_adjacency,
    n_pairs,
    pair_indices,
)

PROB_EPS = 1e-7          # Bernoulli parameters live in [PROB_EPS, 1 - PROB_EPS]
UNIFORM_EPS = 1e-10      # uniform draws are clamped before the logit transform
ENUMERATION_LIMIT = 20   # hard bound on pair count for exhaustive sums


def clamp_probs(p):
    return np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)


@dataclass(frozen=True)
class BernoulliEdgeDistribution:
    """Independent Bernoulli probabilities over the upper-triangle pairs."""

    n_nodes: int
    probs: np.ndarray

    def __post_init__(self):
        expected = n_pairs(self.n_nodes)
        if self.probs.shape != (expected,):
            raise MismatchedSupportError(
                f"expected {expected} pair probabilities, got shape {self.probs.shape}")
        object.__setattr__(self, "probs", clamp_probs(self.probs))


@dataclass(frozen=True)
class ConcreteEdgeDistribution:
    """Binary Concrete relaxation: per-pair log-locations and one temperature."""

    n_nodes: int
    log_lambda: np.ndarray
    temperature: float

    def __post_init__(self):
        expected = n_pairs(self.n_nodes)
        if self.log_lambda.shape != (expected,):
            raise MismatchedSupportError(
                f"expected {expected} pair locations, got shape {self.log_lambda.shape}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not np.isfinite(self.log_lambda).all():
            raise ValueError("log-locations must be finite")


@dataclass(frozen=True)
class RelaxedSample:
    """One draw of relaxed edge weights: pre-sigmoid values, weights, matrix."""

    n_nodes: int
    b: np.ndarray
    a: np.ndarray
    matrix: np.ndarray


def build_prior(adjacency, rho1_bar, rho0_bar):
    """Smoothed Bernoulli prior: rho1_bar where an observed edge exists, rho0_bar elsewhere."""
    if not (0.0 < rho0_bar < 1.0 and 0.0 < rho1_bar < 1.0):
        raise InvalidSmoothingError(
            f"smoothing values must lie in (0, 1), got rho1={rho1_bar}, rho0={rho0_bar}")
    probs = np.where(adjacency.edge_mask(), rho1_bar, rho0_bar)
    return BernoulliEdgeDistribution(adjacency.n_nodes, probs)


def relax(dist, temperature):
    """Concrete relaxation with locations chosen so the zero-temperature limit
    probability equals the Bernoulli probability exactly."""
    return ConcreteEdgeDistribution(dist.n_nodes, logit(dist.probs), temperature)


def limit_probability(dist):
    """Zero-temperature limit probabilities lambda / (1 + lambda), computed stably."""
    return expit(dist.log_lambda)


def uniform_logits(rng, size):
    """logit(U) for clamped U ~ Uniform(0, 1); the Logistic(0, 1) noise source."""
    u = np.clip(rng.random(size), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    return np.log(u) - np.log1p(-u)


def sample_relaxed(dist, rng):
    """Draw relaxed edge weights A = sigmoid((log lambda + logit U) / tau)."""
    b = (dist.log_lambda + uniform_logits(rng, dist.log_lambda.shape[0])) / dist.temperature
    a = expit(b)
    # Keep weights strictly inside (0, 1) even when tiny temperatures push the
    # sigmoid into the rounding region.
    a = np.clip(a, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0))
    n = dist.n_nodes
    iu, ju = pair_indices(n)
    matrix = np.zeros((n, n))
    matrix[iu, ju] = a
    matrix[ju, iu] = a
    return RelaxedSample(n, b, a, matrix)


def sample_discrete(dist, rng):
    """Draw a binary adjacency with independent pair probabilities."""
    draws = rng.random(dist.probs.shape[0]) < dist.probs
    iu, ju = pair_indices(dist.n_nodes)
    pairs = [(int(iu[k]), int(ju[k])) for k in np.flatnonzero(draws)]
    return SymmetricBinaryAdjacency(dist.n_nodes, frozenset(pairs))


def kl_bernoulli(q, p):
    """Analytic KL divergence between factorized Bernoulli edge distributions."""
    if q.n_nodes != p.n_nodes:
        raise MismatchedSupportError(
            f"distributions over {q.n_nodes} vs {p.n_nodes} nodes")
    rho, rho0 = q.probs, p.probs
    return float(np.sum(rho * (np.log(rho) - np.log(rho0))
                        + (1 - rho) * (np.log1p(-rho) - np.log1p(-rho0))))


def logistic_log_density(b, location, scale):
    """Elementwise log density of Logistic(location, scale) at b."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    z = (np.asarray(b, dtype=np.float64) - location) / scale
    return -z - math.log(scale) - 2.0 * np.logaddexp(0.0, -z)


def _logistic_log_density_diff(b, location, scale):
    # DiffValue version of the same formula; location may carry gradients.
    z = ad.scale(ad.add(b, ad.scale(location, -1.0)), 1.0 / scale)
    return ad.add(
        ad.add(ad.scale(z, -1.0), ad.constant(np.asarray(-math.log(scale)))),
        ad.scale(ad.softplus(ad.scale(z, -1.0)), -2.0),
    )


# --- posterior parameterizations -------------------------------------------------

class FreePosteriorParams:
    """One trainable value per pair.

    The stored values are pair logits: log-odds of the Bernoulli probability in
    discrete mode and log lambda of the Concrete location in relaxed mode.
    """

    kind = "free"

    def __init__(self, n_nodes, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (n_pairs(n_nodes),):
            raise MismatchedSupportError(
                f"expected {n_pairs(n_nodes)} parameters, got {values.shape}")
        self.n_nodes = n_nodes
        self.raw = ad.parameter(values)

    @classmethod
    def from_prior(cls, prior):
        return cls(prior.n_nodes, logit(prior.probs))

    def pair_logits(self, pairs=None):
        return self.raw

    def parameters(self):
        return {"log_odds": self.raw}

    def copy(self):
        return FreePosteriorParams(self.n_nodes, self.raw.value)

    def to_concrete(self, temperature):
        return ConcreteEdgeDistribution(self.n_nodes, self.raw.value.copy(), temperature)

    def to_bernoulli(self):
        return BernoulliEdgeDistribution(self.n_nodes, expit(self.raw.value))


class LowRankPosteriorParams:
    """Pair logits induced by node embeddings: z_i . zt_j + b_i + b_j + s.

    Relaxed mode ties the two embedding matrices (zt is z), which is how the
    Concrete location exp(z_i . z_j + b_i + b_j + s) is parameterized.
    """

    kind = "lowrank"

    def __init__(self, n_nodes, z, zt, b, s):
        self.n_nodes = n_nodes
        self.d_z = z.shape[1]
        self.z = ad.parameter(z)
        self.tied = zt is None
        self.zt = self.z if zt is None else ad.parameter(zt)
        self.b = ad.parameter(b)
        self.s = ad.parameter(np.asarray(s, dtype=np.float64))

    @classmethod
    def init(cls, n_nodes, d_z, rng, shift=0.0, tied=False, init_scale=0.01):
        z = rng.normal(scale=init_scale, size=(n_nodes, d_z))
        zt = None if tied else rng.normal(scale=init_scale, size=(n_nodes, d_z))
        return cls(n_nodes, z, zt, np.zeros(n_nodes), shift)

    def pair_logits(self, pairs=None):
        pairs = pair_indices(self.n_nodes) if pairs is None else pairs
        dot = ad.pair_dot(self.z, self.zt, pairs)
        return ad.add(ad.add(dot, ad.pair_bias(self.b, pairs)), self.s)

    def parameters(self):
        named = {"z": self.z, "b": self.b, "s": self.s}
        if not self.tied:
            named["zt"] = self.zt
        return named

    def copy(self):
        zt = None if self.tied else self.zt.value
        return LowRankPosteriorParams(self.n_nodes, self.z.value, zt,
                                      self.b.value, self.s.value)

    def to_concrete(self, temperature):
        return ConcreteEdgeDistribution(
            self.n_nodes, self.pair_logits().value.copy(), temperature)

    def to_bernoulli(self):
        return BernoulliEdgeDistribution(self.n_nodes, expit(self.pair_logits().value))


def lowrank_to_edge_params(params, mode, temperature=None):
    """Materialize the edge distribution a low-rank parameterization induces."""
    if mode == "discrete":
        return params.to_bernoulli()
    if mode == "relaxed":
        if temperature is None:
            raise ValueError("relaxed mode needs a temperature")
        return params.to_concrete(temperature)
    raise ValueError(f"unknown mode {mode!r}")


# --- objective family --------------------------------------------------------------

@dataclass
class ElboParts:
    """Objective node plus the detached pieces a training loop wants to log."""

    objective: ad.DiffValue
    mean_log_likelihood: float
    mean_kl_term: float

    @property
    def value(self):
        return self.objective.item()


def _symmetrize_diff(a_pairs, n, pairs):
    return ad.sym_from_pairs(a_pairs, n, pairs)


def normalize_adjacency_diff(a_mat):
    """DiffValue twin of graph.normalize_adjacency for relaxed samples."""
    n = a_mat.value.shape[0]
    a_tilde = ad.add(a_mat, ad.constant(np.eye(n)))
    deg = ad.matmul(a_tilde, ad.constant(np.ones((n, 1))))
    inv_sqrt = ad.exp(ad.scale(ad.log(deg), -0.5))
    return ad.mul(a_tilde, ad.matmul(inv_sqrt, ad.transpose(inv_sqrt)))


def relaxed_elbo(theta, phi, data, tau, tau_o, prior, beta, n_samples, rng,
                 dropout_rate=0.0, training=False):
    """Reparameterized relaxed bound, averaged over n_samples draws.

    Each term is log p(Y_obs | X, sigmoid(B)) - beta * (log g(B) - log f(B))
    with g the posterior Logistic density over the pre-sigmoid variables
    (location log lambda / tau, scale 1 / tau) and f the relaxed-prior density
    at temperature tau_o. The returned objective is differentiable in both the
    network weights and the posterior parameters.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    n = data.n_nodes
    pairs = pair_indices(n)
    log_lam = phi.pair_logits(pairs)
    loc_q = ad.scale(log_lam, 1.0 / tau)
    loc_p = ad.constant(logit(prior.probs) / tau_o)
    total = None
    ll_values = []
    ratio_values = []
    for _ in range(n_samples):
        noise = ad.constant(uniform_logits(rng, log_lam.value.shape[0]))
        b = ad.scale(ad.add(log_lam, noise), 1.0 / tau)
        a_mat = _symmetrize_diff(ad.sigmoid(b), n, pairs)
        a_hat = normalize_adjacency_diff(a_mat)
        pi = nn.gcn_forward(data.features, a_hat, theta, dropout_rate, training, rng)
        ll = ad.scale(nn.masked_cross_entropy(pi, data.labels, data.masks.train), -1.0)
        log_g = ad.sum_all(_logistic_log_density_diff(b, loc_q, 1.0 / tau))
        log_f = ad.sum_all(_logistic_log_density_diff(b, loc_p, 1.0 / tau_o))
        ratio = ad.add(log_g, ad.scale(log_f, -1.0))
        term = ad.add(ll, ad.scale(ratio, -beta))
        total = term if total is None else ad.add(total, term)
        ll_values.append(ll.item())
        ratio_values.append(ratio.item())
    objective = ad.scale(total, 1.0 / n_samples)
    return ElboParts(objective, float(np.mean(ll_values)), float(np.mean(ratio_values)))


def iw_elbo(theta, phi, data, tau, tau_o, prior, n_samples, rng,
            dropout_rate=0.0, training=False):
    """Importance-weighted bound: a log-mean-exp over the shared sample set.

    For every observed label the bound takes lme_s[log p(y_n | X, A_s) -
    log(q(A_s)/p(A_s)) / n_obs]; one set of n_samples draws is shared across
    all observed nodes.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    n = data.n_nodes
    pairs = pair_indices(n)
    obs_idx = np.flatnonzero(np.asarray(data.masks.train, dtype=bool))
    n_obs = obs_idx.shape[0]
    ym = nn.masked_label_matrix(data.labels, data.masks.train).astype(np.float64)
    log_lam = phi.pair_logits(pairs)
    loc_q = ad.scale(log_lam, 1.0 / tau)
    loc_p = ad.constant(logit(prior.probs) / tau_o)
    ones_c = ad.constant(np.ones((data.n_classes, 1)))
    columns = []
    ll_values = []
    ratio_values = []
    for _ in range(n_samples):
        noise = ad.constant(uniform_logits(rng, log_lam.value.shape[0]))
        b = ad.scale(ad.add(log_lam, noise), 1.0 / tau)
        a_mat = _symmetrize_diff(ad.sigmoid(b), n, pairs)
        a_hat = normalize_adjacency_diff(a_mat)
        pi = nn.gcn_forward(data.features, a_hat, theta, dropout_rate, training, rng)
        per_node = ad.matmul(ad.mul(ad.log(pi), ad.constant(ym)), ones_c)
        per_obs = ad.gather_rows(per_node, obs_idx)
        log_g = ad.sum_all(_logistic_log_density_diff(b, loc_q, 1.0 / tau))
        log_f = ad.sum_all(_logistic_log_density_diff(b, loc_p, 1.0 / tau_o))
        ratio = ad.add(log_g, ad.scale(log_f, -1.0))
        columns.append(ad.add(per_obs, ad.scale(ratio, -1.0 / n_obs)))
        ll_values.append(float(per_obs.value.sum()))
        ratio_values.append(ratio.item())
    stacked = ad.stack_columns(columns)
    lme = ad.add(ad.sum_all(ad.logsumexp_rows(stacked)),
                 ad.constant(np.asarray(-n_obs * math.log(n_samples))))
    return ElboParts(lme, float(np.mean(ll_values)), float(np.mean(ratio_values)))


@dataclass
class DiscreteElboEstimate:
    """Value plus gradient estimates of the discrete bound.

    theta_grads are pathwise (backprop through each sampled forward pass);
    phi_grads combine the score-function estimator for the likelihood term
    with the analytic KL gradient. Gradients are with respect to the posterior
    object's own parameters and do not touch the leaves' accumulated .grad.
    """

    value: float
    mean_log_likelihood: float
    kl: float
    theta_grads: dict
    phi_grads: dict
    sample_log_likelihoods: np.ndarray


def discrete_elbo(theta, phi, data, prior, beta, n_samples, rng, baseline=0.0,
                  dropout_rate=0.0, training=False, with_theta_grads=True):
    """Monte Carlo discrete bound with analytic KL.

    The score-function coefficient for sample s is (log-likelihood_s -
    baseline); pass the running mean of past log-likelihoods as the baseline
    for variance reduction. With ``with_theta_grads=False`` the forward passes
    skip graph recording (evaluation mode only), which is much faster when
    only the posterior gradient matters.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if not with_theta_grads and training:
        raise ValueError("skipping theta gradients requires evaluation-mode forwards")
    n = data.n_nodes
    pairs = pair_indices(n)
    iu, ju = pairs
    logits = phi.pair_logits(pairs)
    probs = ad.sigmoid(logits)
    one_minus = ad.add(ad.constant(np.ones_like(probs.value)), ad.scale(probs, -1.0))
    kl_vec = ad.add(
        ad.mul(probs, ad.add(ad.log(probs), ad.constant(-np.log(prior.probs)))),
        ad.mul(one_minus, ad.add(ad.log(one_minus), ad.constant(-np.log1p(-prior.probs)))),
    )
    kl = ad.sum_all(kl_vec)

    ll_values = []
    objective_parts = []
    for _ in range(n_samples):
        draw = (rng.random(probs.value.shape[0]) < probs.value).astype(np.float64)
        a_dense = np.zeros((n, n))
        a_dense[iu, ju] = draw
        a_dense[ju, iu] = draw
        a_hat = normalize_adjacency(a_dense)
        if with_theta_grads:
            pi = nn.gcn_forward(data.features, a_hat, theta, dropout_rate, training, rng)
            ll_node = ad.scale(nn.masked_cross_entropy(pi, data.labels, data.masks.train), -1.0)
            ll_value = ll_node.item()
            objective_parts.append(ad.scale(ll_node, 1.0 / n_samples))
        else:
            pi = nn.forward_probs(theta.w0.value, theta.w1.value, data.features, a_hat)
            ym = nn.masked_label_matrix(data.labels, data.masks.train)
            ll_value = float((ym * np.log(pi)).sum())
        ll_values.append(ll_value)
        log_q = ad.sum_all(ad.add(
            ad.mul(ad.constant(draw), ad.log(probs)),
            ad.mul(ad.constant(1.0 - draw), ad.log(one_minus)),
        ))
        objective_parts.append(ad.scale(log_q, (ll_value - baseline) / n_samples))
    objective = ad.scale(kl, -beta)
    for part in objective_parts:
        objective = ad.add(objective, part)

    leaves = {**{f"theta.{k}": v for k, v in theta.parameters().items()},
              **{f"phi.{k}": v for k, v in phi.parameters().items()}}
    stash = {name: leaf.grad for name, leaf in leaves.items()}
    for leaf in leaves.values():
        leaf.grad = None
    ad.backward(objective)
    grads = {name: (leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.value))
             for name, leaf in leaves.items()}
    for name, leaf in leaves.items():
        leaf.grad = stash[name]

    mean_ll = float(np.mean(ll_values))
    return DiscreteElboEstimate(
        value=mean_ll - beta * kl.item(),
        mean_log_likelihood=mean_ll,
        kl=kl.item(),
        theta_grads={k.removeprefix("theta."): v for k, v in grads.items() if k.startswith("theta.")},
        phi_grads={k.removeprefix("phi."): v for k, v in grads.items() if k.startswith("phi.")},
        sample_log_likelihoods=np.asarray(ll_values),
    )


# --- enumeration oracles --------------------------------------------------------------

def _check_enumerable(n_nodes):
    p = n_pairs(n_nodes)
    if p > ENUMERATION_LIMIT:
        raise TooLargeToEnumerateError(
            f"{n_nodes} nodes give {p} pairs; enumeration is capped at {ENUMERATION_LIMIT}")
    return p


def enumerate_log_likelihoods(theta, data):
    """log p(Y_obs | X, A) for every adjacency configuration.

    Configuration ``idx`` sets pair k present iff bit k of ``idx`` is one, in
    the canonical pair ordering. Evaluation-mode forward passes only.
    """
    p = _check_enumerable(data.n_nodes)
    iu, ju = pair_indices(data.n_nodes)
    ym = nn.masked_label_matrix(data.labels, data.masks.train).astype(np.float64)
    lls = np.empty(2 ** p)
    for idx in range(2 ** p):
        bits = (idx >> np.arange(p)) & 1
        a = np.zeros((data.n_nodes, data.n_nodes))
        a[iu, ju] = bits
        a[ju, iu] = bits
        pi = nn.forward_probs(theta.w0.value, theta.w1.value, data.features,
                              normalize_adjacency(a))
        lls[idx] = float((ym * np.log(pi)).sum())
    return lls


def _config_log_probs(dist):
    p = dist.probs.shape[0]
    bits = (np.arange(2 ** p)[:, None] >> np.arange(p)) & 1
    return bits @ np.log(dist.probs) + (1 - bits) @ np.log1p(-dist.probs)


def exact_log_evidence(theta, prior, data):
    """log sum_A p(Y_obs | X, A) p(A) by exhaustive enumeration."""
    _check_enumerable(data.n_nodes)
    lls = enumerate_log_likelihoods(theta, data)
    return float(_logsumexp(lls + _config_log_probs(prior)))


def exact_discrete_elbo(theta, q, prior, data):
    """Exactly enumerated expected log-likelihood minus the analytic KL."""
    _check_enumerable(data.n_nodes)
    if q.n_nodes != data.n_nodes:
        raise MismatchedSupportError("posterior and data node counts differ")
    lls = enumerate_log_likelihoods(theta, data)
    weights = np.exp(_config_log_probs(q))
    return float(weights @ lls) - kl_bernoulli(q, prior)
