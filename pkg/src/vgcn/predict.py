"""Posterior-predictive classification, evaluation metrics and posterior-shift analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import EmptyMaskError, MismatchedSupportError
from .graph import normalize_adjacency
from .variational import (
    BernoulliEdgeDistribution,
    ConcreteEdgeDistribution,
    limit_probability,
    sample_discrete,
    sample_relaxed,
)

MLL_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class PredictiveResult:
    """Averaged class probabilities and the induced hard predictions."""

    probs: np.ndarray
    predicted_class: np.ndarray
    n_samples_used: int


def posterior_predictive(theta, posterior, data, n_samples, rng):
    """Average the class probabilities over n_samples posterior adjacency draws.

    Relaxed posteriors contribute dense weighted adjacencies, discrete ones
    binary samples; forward passes run in evaluation mode. Each draw consumes
    one spawned child of ``rng``, so an S-sample call averages exactly the
    results of S single-sample calls.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    w0, w1 = theta.w0.value, theta.w1.value
    total = np.zeros((data.n_nodes, data.n_classes))
    for child in rng.spawn(n_samples):
        if isinstance(posterior, ConcreteEdgeDistribution):
            a = sample_relaxed(posterior, child).matrix
        elif isinstance(posterior, BernoulliEdgeDistribution):
            a = sample_discrete(posterior, child).to_dense()
        else:
            raise TypeError(f"unsupported posterior type {type(posterior).__name__}")
        total += nn.forward_probs(w0, w1, data.features, normalize_adjacency(a))
    probs = total / n_samples
    return PredictiveResult(probs, probs.argmax(axis=1), n_samples)


def _check_mask(mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.sum() == 0:
        raise EmptyMaskError("mask selects no nodes")
    return mask


def accuracy(result, labels, mask):
    """Fraction of masked nodes whose argmax matches the label.

    Ties in the probability rows resolve to the smallest class index.
    """
    mask = _check_mask(mask)
    true_class = labels[mask].argmax(axis=1)
    return float((result.predicted_class[mask] == true_class).mean())


def mean_log_likelihood(result, labels, mask):
    """Mean log probability of the true class over the masked nodes."""
    mask = _check_mask(mask)
    probs = np.clip(result.probs[mask], MLL_PROB_FLOOR, None)
    true_class = labels[mask].argmax(axis=1)
    return float(np.mean(np.log(probs[np.arange(probs.shape[0]), true_class])))


@dataclass(frozen=True)
class PosteriorShiftReport:
    """How far the zero-temperature posterior moved from the prior, per pair."""

    prior_probs: np.ndarray
    limit_probs: np.ndarray
    delta: np.ndarray
    threshold: float
    n_significant: int
    histogram_counts: np.ndarray
    histogram_edges: np.ndarray

    @property
    def significant(self):
        return np.abs(self.delta) > self.threshold

    def to_json_dict(self):
        return {
            "threshold": self.threshold,
            "n_pairs": int(self.delta.shape[0]),
            "n_significant": self.n_significant,
            "histogram_counts": self.histogram_counts.tolist(),
            "histogram_edges": self.histogram_edges.tolist(),
            "mean_abs_delta": float(np.abs(self.delta).mean()),
            "max_abs_delta": float(np.abs(self.delta).max()),
        }


def posterior_shift(prior, posterior, threshold=0.02):
    """Compare limit posterior probabilities against the prior.

    The histogram collects the limit probabilities of the significantly moved
    pairs (absolute shift above the threshold) in 50 uniform bins on [0, 1].
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if prior.n_nodes != posterior.n_nodes:
        raise MismatchedSupportError(
            f"prior over {prior.n_nodes} nodes, posterior over {posterior.n_nodes}")
    limit = limit_probability(posterior)
    delta = limit - prior.probs
    significant = np.abs(delta) > threshold
    counts, edges = np.histogram(limit[significant], bins=50, range=(0.0, 1.0))
    return PosteriorShiftReport(
        prior_probs=prior.probs.copy(),
        limit_probs=limit,
        delta=delta,
        threshold=float(threshold),
        n_significant=int(significant.sum()),
        histogram_counts=counts,
        histogram_edges=edges,
    )
