"""Training loops: joint network/posterior optimization, the plain-GCN baseline
and grid search with validation-accuracy model selection.

Runs are transductive and full-batch. Model selection works by checkpointing:
every epoch records the validation accuracy of the current parameters and the
best-scoring epoch's parameters are returned at the end. All randomness flows
from the config seed through named SeedSequence children, so a rerun with the
same config and data reproduces the history bit for bit.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import nn
from . import variational as vr
from .errors import AllCellsFailedError, ConfigError, NonFiniteObjectiveError, VgcnError
from .graph import row_normalize_features
from .predict import accuracy, mean_log_likelihood, posterior_predictive

PARAMETERIZATIONS = ("free", "lowrank")
MODES = ("relaxed", "discrete")
OBJECTIVES = ("elbo", "iw-elbo")


@dataclass(frozen=True)
class TrainConfig:
    """All optimizer, relaxation and regularization hyperparameters plus the seed."""

    lr: float = 0.001
    max_epochs: int = 5000
    dropout: float = 0.5
    l2_weight: float = 5e-4
    l2_all_layers: bool = False
    hidden_units: int = 16
    rho1_bar: float = 0.75
    rho0_bar: float = 1e-5
    tau: float = 0.5
    tau_o: float = 0.1
    beta: float = 1e-2
    s_train: int = 3
    s_pred: int = 16
    parameterization: str = "free"
    d_z: int = 16
    mode: str = "relaxed"
    objective: str = "elbo"
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.l2_weight < 0:
            raise ConfigError("l2_weight must be non-negative")
        if self.hidden_units < 1:
            raise ConfigError("hidden_units must be positive")
        for name in ("rho1_bar", "rho0_bar"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.tau <= 0 or self.tau_o <= 0:
            raise ConfigError("temperatures must be positive")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.s_train < 1 or self.s_pred < 1:
            raise ConfigError("sample counts must be at least 1")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ConfigError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if self.d_z < 1:
            raise ConfigError("d_z must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.objective == "iw-elbo" and self.mode != "relaxed":
            raise ConfigError("the importance-weighted objective requires relaxed mode")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    elbo: float
    train_ll: float
    kl: float
    val_acc: float
    seconds: float


CSV_COLUMNS = ("epoch", "elbo", "train_ll", "kl", "val_acc", "seconds")


class TrainHistory:
    """Per-epoch training records with CSV export.

    ``include_seconds=False`` drops the wall-time column so the export is
    byte-identical across reruns with the same seed.
    """

    def __init__(self, records=None):
        self.records = list(records or [])

    def append(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def best_epoch(self):
        if not self.records:
            return None
        return max(self.records, key=lambda r: (r.val_acc, r.epoch)).epoch

    def to_csv(self, include_seconds=True):
        columns = CSV_COLUMNS if include_seconds else CSV_COLUMNS[:-1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in self.records:
            row = [r.epoch] + [repr(getattr(r, c)) for c in columns[1:]]
            writer.writerow(row)
        return buf.getvalue()


def make_posterior(config, prior, rng):
    """Posterior parameters initialized at (or as close as possible to) the prior."""
    if config.parameterization == "free":
        return vr.FreePosteriorParams.from_prior(prior)
    # A low-rank posterior cannot represent an arbitrary prior exactly; start
    # at small embeddings with the shift matching the prior's mean log-odds.
    from scipy.special import logit

    shift = float(logit(prior.probs).mean())
    return vr.LowRankPosteriorParams.init(
        prior.n_nodes, config.d_z, rng, shift=shift, tied=config.mode == "relaxed")


def _posterior_distribution(phi, config):
    if config.mode == "relaxed":
        return phi.to_concrete(config.tau)
    return phi.to_bernoulli()


def _preprocess(data):
    return replace(data, features=row_normalize_features(data.features))


def _check_finite(value, epoch):
    if not np.isfinite(value):
        raise NonFiniteObjectiveError(epoch, value)


def train_vgcn(config, data):
    """Jointly fit the network weights (MAP) and the edge posterior.

    Returns the best-validation-accuracy checkpoint of (weights, posterior
    parameters) together with the full history.
    """
    work = _preprocess(data)
    prior = vr.build_prior(work.adjacency, config.rho1_bar, config.rho0_bar)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng_init = np.random.default_rng(seeds[0])
    rng_train = np.random.default_rng(seeds[1])
    rng_eval = np.random.default_rng(seeds[2])

    theta = nn.GcnParams.init(work.n_features, config.hidden_units, work.n_classes, rng_init)
    phi = make_posterior(config, prior, rng_init)
    leaves = list(theta.parameters().values()) + list(phi.parameters().values())
    optimizer = nn.Adam(leaves, lr=config.lr)

    history = TrainHistory()
    best_acc = -np.inf
    best_theta = theta.copy()
    best_phi = phi.copy()
    baseline_sum, baseline_count = 0.0, 0

    for epoch in range(config.max_epochs):
        tic = time.perf_counter()
        optimizer.zero_grad()
        if config.mode == "relaxed":
            if config.objective == "elbo":
                parts = vr.relaxed_elbo(
                    theta, phi, work, config.tau, config.tau_o, prior, config.beta,
                    config.s_train, rng_train, config.dropout, training=True)
            else:
                parts = vr.iw_elbo(
                    theta, phi, work, config.tau, config.tau_o, prior,
                    config.s_train, rng_train, config.dropout, training=True)
            _check_finite(parts.value, epoch)
            loss = ad.add(ad.scale(parts.objective, -1.0),
                          nn.l2_penalty(theta, config.l2_weight, config.l2_all_layers))
            ad.backward(loss)
            elbo_val, ll_val, kl_val = parts.value, parts.mean_log_likelihood, parts.mean_kl_term
        else:
            baseline = baseline_sum / baseline_count if baseline_count else 0.0
            est = vr.discrete_elbo(
                theta, phi, work, prior, config.beta, config.s_train, rng_train,
                baseline=baseline, dropout_rate=config.dropout, training=True)
            _check_finite(est.value, epoch)
            ad.backward(nn.l2_penalty(theta, config.l2_weight, config.l2_all_layers))
            for name, leaf in theta.parameters().items():
                base = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
                leaf.grad = base - est.theta_grads[name]
            for name, leaf in phi.parameters().items():
                leaf.grad = -est.phi_grads[name]
            baseline_sum += float(est.sample_log_likelihoods.sum())
            baseline_count += est.sample_log_likelihoods.size
            elbo_val, ll_val, kl_val = est.value, est.mean_log_likelihood, est.kl
        optimizer.step()

        result = posterior_predictive(
            theta, _posterior_distribution(phi, config), work,
            config.s_pred, rng_eval.spawn(1)[0])
        val_acc = accuracy(result, work.labels, work.masks.val)
        history.append(EpochRecord(epoch, float(elbo_val), float(ll_val),
                                   float(kl_val), val_acc,
                                   time.perf_counter() - tic))
        # Ties go to the later epoch: with small validation sets the accuracy
        # saturates early and the more-optimized checkpoint is the better pick.
        if val_acc >= best_acc:
            best_acc = val_acc
            best_theta = theta.copy()
            best_phi = phi.copy()

    return best_theta, best_phi, history


def train_gcn_baseline(config, data, a_fixed):
    """Standard GCN training on a fixed binary adjacency.

    Averaged masked cross-entropy plus the L2 penalty, optimized with Adam
    under dropout; returns the best-validation-accuracy checkpoint.
    """
    from .graph import SymmetricBinaryAdjacency, normalize_adjacency, normalize_adjacency_csr

    work = _preprocess(data)
    if isinstance(a_fixed, SymmetricBinaryAdjacency):
        a_hat = normalize_adjacency_csr(a_fixed)
    else:
        a_hat = normalize_adjacency(np.asarray(a_fixed))
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng_init = np.random.default_rng(seeds[0])
    rng_train = np.random.default_rng(seeds[1])

    theta = nn.GcnParams.init(work.n_features, config.hidden_units, work.n_classes, rng_init)
    optimizer = nn.Adam(list(theta.parameters().values()), lr=config.lr)
    n_train = int(work.masks.train.sum())

    history = TrainHistory()
    best_acc = -np.inf
    best_theta = theta.copy()
    for epoch in range(config.max_epochs):
        tic = time.perf_counter()
        optimizer.zero_grad()
        pi = nn.gcn_forward(work.features, a_hat, theta, config.dropout, True, rng_train)
        ce = nn.masked_cross_entropy(pi, work.labels, work.masks.train, average=True)
        _check_finite(ce.item(), epoch)
        loss = ad.add(ce, nn.l2_penalty(theta, config.l2_weight, config.l2_all_layers))
        ad.backward(loss)
        optimizer.step()

        probs = nn.forward_probs(theta.w0.value, theta.w1.value, work.features, a_hat)
        predicted = probs.argmax(axis=1)
        val_mask = work.masks.val
        val_acc = float((predicted[val_mask] == work.labels[val_mask].argmax(axis=1)).mean())
        history.append(EpochRecord(epoch, float("nan"), -ce.item() * n_train,
                                   float("nan"), val_acc,
                                   time.perf_counter() - tic))
        if val_acc >= best_acc:
            best_acc = val_acc
            best_theta = theta.copy()
    return best_theta, history


def final_metrics(theta, phi, config, data):
    """Deterministic validation/test metrics for a trained joint model."""
    work = _preprocess(data)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xE7A1)))
    result = posterior_predictive(
        theta, _posterior_distribution(phi, config), work, config.s_pred, rng)
    return {
        "val_accuracy": accuracy(result, work.labels, work.masks.val),
        "test_accuracy": accuracy(result, work.labels, work.masks.test),
        "test_mll": mean_log_likelihood(result, work.labels, work.masks.test),
        "n_samples_used": result.n_samples_used,
    }


@dataclass(frozen=True)
class GridCellResult:
    config_index: int
    replication: int
    seed: int
    val_accuracy: float
    test_accuracy: float
    error: str = ""


def _run_grid_cell(args):
    config, data, config_index, replication = args
    cell_config = replace(config, seed=config.seed + replication)
    try:
        theta, phi, _ = train_vgcn(cell_config, data)
        metrics = final_metrics(theta, phi, cell_config, data)
        return GridCellResult(config_index, replication, cell_config.seed,
                              metrics["val_accuracy"], metrics["test_accuracy"])
    except VgcnError as err:
        return GridCellResult(config_index, replication, cell_config.seed,
                              float("nan"), float("nan"), error=str(err))


def grid_search(grid, data, replications, jobs=1):
    """Train every config x replication and pick the best mean validation accuracy.

    Replication r of config i runs with seed ``grid[i].seed + r``. Failed cells
    record NaN and drop out of the mean; ties break toward the lower config
    index. Cells are independent, so ``jobs > 1`` fans them out over processes.
    """
    if not grid:
        raise ConfigError("grid must contain at least one config")
    if replications < 1:
        raise ConfigError("replications must be at least 1")
    tasks = [(cfg, data, ci, rep)
             for ci, cfg in enumerate(grid) for rep in range(replications)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_grid_cell, tasks))
    else:
        results = [_run_grid_cell(t) for t in tasks]
    results.sort(key=lambda r: (r.config_index, r.replication))

    means = np.full(len(grid), -np.inf)
    for ci in range(len(grid)):
        vals = [r.val_accuracy for r in results
                if r.config_index == ci and np.isfinite(r.val_accuracy)]
        if vals:
            means[ci] = float(np.mean(vals))
    if not np.isfinite(means).any():
        raise AllCellsFailedError("every grid cell failed to train")
    best_index = int(np.argmax(means))
    return grid[best_index], results
