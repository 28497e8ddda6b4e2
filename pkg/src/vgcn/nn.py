"""Two-layer GCN likelihood network, its objective pieces and the Adam optimizer.

The class-probability matrix is softmax(A_hat . relu(A_hat . X . W0) . W1).
All pieces are built from the autodiff primitives so that gradients flow both
into the weights and, when the normalized adjacency is itself a DiffValue,
into the graph posterior parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import softmax as _softmax

from . import autodiff as ad
from .errors import EmptyMaskError, ShapeMismatchError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def glorot_init(rows, cols, rng):
    """Uniform Glorot initialization on [-a, a] with a = sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValueError("glorot_init needs positive dimensions")
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


@dataclass
class GcnParams:
    """First- and second-layer weight matrices as trainable leaves."""

    w0: ad.DiffValue
    w1: ad.DiffValue

    @classmethod
    def init(cls, n_features, n_hidden, n_classes, rng):
        return cls(
            w0=ad.parameter(glorot_init(n_features, n_hidden, rng)),
            w1=ad.parameter(glorot_init(n_hidden, n_classes, rng)),
        )

    @classmethod
    def from_values(cls, w0, w1):
        return cls(w0=ad.parameter(w0), w1=ad.parameter(w1))

    def parameters(self):
        return {"w0": self.w0, "w1": self.w1}

    def values(self):
        return {"w0": self.w0.value.copy(), "w1": self.w1.value.copy()}

    def copy(self):
        return GcnParams.from_values(self.w0.value, self.w1.value)


def gcn_forward(x, a_hat, params, dropout_rate=0.0, training=False, rng=None):
    """Class probabilities for every node; returns an (N, C) DiffValue.

    In training mode inverted dropout is applied to the input features and to
    the hidden activations; evaluation mode is deterministic.
    """
    x = ad.constant(x)
    a_hat = ad.constant(a_hat)
    w0, w1 = params.w0, params.w1
    n = a_hat.value.shape[0]
    if x.value.shape[0] != n or x.value.shape[1] != w0.value.shape[0]:
        raise ShapeMismatchError(
            f"features {x.value.shape} incompatible with adjacency {a_hat.value.shape} "
            f"and W0 {w0.value.shape}")
    if training and dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        x = ad.dropout(x, dropout_rate, rng)
    hidden = ad.relu(ad.matmul(a_hat, ad.matmul(x, w0)))
    if training and dropout_rate > 0.0:
        hidden = ad.dropout(hidden, dropout_rate, rng)
    logits = ad.matmul(a_hat, ad.matmul(hidden, w1))
    return ad.softmax_rows(logits)


def forward_probs(w0, w1, x, a_hat):
    """Evaluation-mode forward pass on plain arrays (no graph recording)."""
    hidden = np.maximum(a_hat @ (x @ w0), 0.0)
    logits = a_hat @ (hidden @ w1)
    if sp.issparse(logits):
        logits = np.asarray(logits.todense())
    return _softmax(logits, axis=1)


def masked_label_matrix(labels, mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.sum() == 0:
        raise EmptyMaskError("mask selects no nodes")
    return labels * mask[:, None]


def masked_cross_entropy(pi, labels, mask, average=False):
    """Cross-entropy of the masked nodes, summed by default.

    The summed form is the negative log-likelihood term the variational
    objectives need; ``average=True`` divides by the mask size for parity with
    standard GCN training.
    """
    pi = ad.constant(pi)
    ym = masked_label_matrix(labels, mask)
    ll = ad.sum_all(ad.mul(ad.log(pi), ad.constant(ym.astype(np.float64))))
    factor = -1.0 / int(np.asarray(mask, dtype=bool).sum()) if average else -1.0
    return ad.scale(ll, factor)


def l2_penalty(params, weight, include_output_layer=False):
    """weight * ||W0||_F^2, optionally extended to the output layer."""
    if weight < 0:
        raise ValueError("l2 weight must be non-negative")
    pen = ad.sum_all(ad.mul(params.w0, params.w0))
    if include_output_layer:
        pen = ad.add(pen, ad.sum_all(ad.mul(params.w1, params.w1)))
    return ad.scale(pen, weight)


class Adam:
    """Adam with bias correction over a list of DiffValue leaves."""

    def __init__(self, params, lr=0.001, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        """One update from the gradients currently held by the parameters."""
        self.t += 1
        for i, p in enumerate(self.params):
            grad = p.grad if p.grad is not None else np.zeros_like(p.value)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * grad ** 2
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
