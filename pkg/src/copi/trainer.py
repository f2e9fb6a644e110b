"""Minibatch training loop with a decorrelation-only warm-up and per-epoch metrics."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from copi.data import BatchPlan, Dataset, batches
from copi.errors import ConfigError, DivergenceError
from copi.network import Network, forward, predict
from copi.rules import (BACKPROP, FEEDBACK_ALIGNMENT, LOSSES, AdamState, adam_step, batch_loss,
                        bio_copi_decorr_update, bp_update, error_signals, loss_and_output_delta)
from copi.tensor import add_outer_, offdiag_norm, sq_mean

log = logging.getLogger(__name__)

RULES = ("copi", "bio-copi", "bp-decorr", "bp-adam")
DECORR_RULES = ("copi", "bio-copi")


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``alpha`` defaults to 1000 for the decorrelating rules and 1 for
    ``bp-adam``; ``warmup_epochs`` defaults to 1, or 0 for ``bp-adam``
    which has no lateral weights to train.  ``decorr`` picks the lateral
    rule (``"copi"`` or ``"bio"``) and defaults to ``"bio"`` only for
    ``bio-copi``.
    """

    eta_w: float = 1e-4
    eta_r: float = 1e-4
    alpha: float | None = None
    batch_size: int = 50
    epochs: int = 20
    warmup_epochs: int | None = None
    rule: str = "copi"
    signal: str = BACKPROP
    loss: str = "quadratic"
    decorr: str | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    probe_samples: int = 1000

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigError(f"unknown rule {self.rule!r}; choose from {RULES}")
        if self.signal not in (BACKPROP, FEEDBACK_ALIGNMENT):
            raise ConfigError(f"unknown signal {self.signal!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.alpha is None:
            self.alpha = 1.0 if self.rule == "bp-adam" else 1000.0
        if self.warmup_epochs is None:
            self.warmup_epochs = 0 if self.rule == "bp-adam" else 1
        if self.decorr is None:
            self.decorr = "bio" if self.rule == "bio-copi" else "copi"
        if self.decorr not in ("copi", "bio"):
            raise ConfigError(f"unknown decorrelation rule {self.decorr!r}")
        if self.eta_w < 0 or self.eta_r < 0 or self.alpha <= 0:
            raise ConfigError("learning rates must be >= 0 and alpha > 0")
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("batch_size must be positive and epoch counts non-negative")

    @property
    def decorrelates(self) -> bool:
        return self.rule != "bp-adam"


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    train_loss: float
    test_acc: float
    test_loss: float
    offdiag: list[float]
    seconds: float


@dataclass
class TrainMetrics:
    """One row per training epoch (warm-up epochs are not recorded as rows)."""

    rows: list[EpochRecord] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def peak(self, name: str = "test_acc") -> float:
        return float(self.column(name).max()) if self.rows else float("nan")

    def epochs_to_fraction_of_peak(self, fraction: float = 0.99, name: str = "test_acc") -> int | None:
        if not self.rows:
            return None
        values = self.column(name)
        hit = np.nonzero(values >= fraction * values.max())[0]
        return int(self.rows[hit[0]].epoch)

    def write_csv(self, path, header_comment: str | None = None) -> None:
        n_layers = len(self.rows[0].offdiag) if self.rows else 0
        with open(path, "w", newline="") as fh:
            if header_comment:
                for line in header_comment.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["epoch", "train_acc", "train_loss", "test_acc", "test_loss"]
                       + [f"offdiag_norm_{i + 1}" for i in range(n_layers)] + ["seconds_elapsed"])
            for r in self.rows:
                w.writerow([r.epoch, r.train_acc, r.train_loss, r.test_acc, r.test_loss, *r.offdiag, r.seconds])

    @classmethod
    def read_csv(cls, path) -> "TrainMetrics":
        with open(path) as fh:
            lines = [line for line in fh if not line.startswith("#")]
        reader = csv.DictReader(lines)
        rows = []
        for rec in reader:
            off = [float(v) for k, v in rec.items() if k.startswith("offdiag_norm_")]
            rows.append(EpochRecord(int(rec["epoch"]), float(rec["train_acc"]), float(rec["train_loss"]),
                                    float(rec["test_acc"]), float(rec["test_loss"]), off,
                                    float(rec["seconds_elapsed"])))
        return cls(rows)


def evaluate(network: Network, dataset: Dataset, loss_kind: str = "quadratic",
             block: int = 1000) -> tuple[float, float]:
    """Accuracy (argmax of ``y_L`` vs argmax of label) and mean loss."""
    if dataset.n == 0:
        return float("nan"), float("nan")
    y = predict(network, dataset.features, block)
    acc = float(np.mean(np.argmax(y, axis=0) == dataset.class_labels()))
    return acc, batch_loss(y, dataset.labels, loss_kind)


def layer_offdiag(network: Network, probe: np.ndarray) -> list[float]:
    return [offdiag_norm(s.x) for s in forward(network, probe)]


def _check_finite(network: Network, epoch: int) -> None:
    for i, layer in enumerate(network.layers, start=1):
        for name in ("W", "R"):
            if not np.all(np.isfinite(getattr(layer, name))):
                raise DivergenceError(i, epoch, name)


class Trainer:
    """Owns a network for the duration of training; one instance per run."""

    def __init__(self, network: Network, config: TrainConfig):
        if config.signal == FEEDBACK_ALIGNMENT and network.feedback is None:
            raise ConfigError("feedback alignment needs a network built with feedback weights")
        self.network = network
        self.config = config
        self.adam = [AdamState.zeros_like(layer.W) for layer in network.layers]

    def step(self, xb: np.ndarray, tb: np.ndarray, warmup: bool = False) -> tuple[float, np.ndarray]:
        """One minibatch update; returns the pre-update loss and output ``y_L``.

        Every update is computed from the same forward pass (error signals
        first), so writing each layer in place afterwards is the same as
        applying all updates together.
        """
        cfg, net = self.config, self.network
        states = forward(net, xb)
        out = net.layers[-1]
        loss, delta_out = loss_and_output_delta(states[-1].y, states[-1].a, tb, cfg.loss, out.f_deriv)
        deltas = None if warmup else error_signals(net, states, delta_out, cfg.signal)
        for i, (layer, s) in enumerate(zip(net.layers, states)):
            if deltas is not None:
                if cfg.rule in DECORR_RULES:
                    apply_copi_forward_(layer.W, s.x, s.a, deltas[i], cfg.alpha, cfg.eta_w)
                elif cfg.rule == "bp-decorr":
                    add_outer_(layer.W, cfg.eta_w * cfg.alpha / s.x.shape[1], deltas[i], s.x)
                else:
                    grad = -bp_update(layer.W, s.x, cfg.alpha * deltas[i])
                    layer.W, self.adam[i] = adam_step(layer.W, grad, self.adam[i], cfg.eta_w,
                                                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            if cfg.decorrelates:
                if cfg.decorr == "bio":
                    layer.R += cfg.eta_r * bio_copi_decorr_update(layer.R, s.x)
                else:
                    apply_copi_decorr_(layer.R, s.x, cfg.eta_r)
        return loss, states[-1].y


def apply_copi_forward_(W: np.ndarray, x: np.ndarray, a: np.ndarray, delta: np.ndarray,
                        alpha: float, eta: float) -> None:
    """In place ``W += eta * copi_forward_update(W, x, a, delta, alpha)``."""
    z = a + alpha * delta
    W *= 1.0 - eta * sq_mean(x)[np.newaxis, :]
    add_outer_(W, eta / x.shape[1], z, x)


def apply_copi_decorr_(R: np.ndarray, x: np.ndarray, eta: float) -> None:
    """In place ``R += eta * copi_decorr_update(R, x)``."""
    p = R.T @ x
    R *= 1.0 + eta * sq_mean(x)[:, np.newaxis]
    add_outer_(R, -eta / x.shape[1], x, p)


def train(network: Network, train_set: Dataset, test_set: Dataset | None, config: TrainConfig,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[Network, TrainMetrics]:
    """Train ``network`` in place and return it with per-epoch metrics.

    Runs ``warmup_epochs`` of lateral-only updates, then ``epochs`` of joint
    updates.  Train accuracy/loss are running averages over each epoch's
    minibatches (pre-update outputs); test metrics come from a full pass
    after the epoch.  ``epochs == 0`` returns the network untouched.
    """
    metrics = TrainMetrics()
    if config.epochs == 0:
        return network, metrics
    trainer = Trainer(network, config)
    probe = train_set.features[:, :min(config.probe_samples, train_set.n)]
    t0 = time.perf_counter()
    epoch_index = 0
    for w in range(config.warmup_epochs if config.decorrelates else 0):
        plan = BatchPlan.for_epoch(train_set.n, config.batch_size, config.seed, epoch_index)
        for xb, tb in batches(train_set, plan):
            loss, _ = trainer.step(xb, tb, warmup=True)
            if not np.isfinite(loss):
                _check_finite(network, 0)
        _check_finite(network, 0)
        epoch_index += 1
        log.info("warm-up epoch %d done, offdiag %s", w + 1, layer_offdiag(network, probe))
    for epoch in range(1, config.epochs + 1):
        plan = BatchPlan.for_epoch(train_set.n, config.batch_size, config.seed, epoch_index)
        epoch_index += 1
        total_loss = 0.0
        correct = 0
        for xb, tb in batches(train_set, plan):
            loss, y = trainer.step(xb, tb)
            if not np.isfinite(loss):
                _check_finite(network, epoch)
                raise DivergenceError(network.depth, epoch, "output")
            total_loss += loss * xb.shape[1]
            correct += int(np.sum(np.argmax(y, axis=0) == np.argmax(tb, axis=0)))
        _check_finite(network, epoch)
        test_acc, test_loss = evaluate(network, test_set, config.loss) if test_set is not None else (np.nan, np.nan)
        rec = EpochRecord(epoch, correct / train_set.n, total_loss / train_set.n, test_acc, test_loss,
                          layer_offdiag(network, probe), time.perf_counter() - t0)
        metrics.rows.append(rec)
        log.info("epoch %d: train_acc %.4f test_acc %.4f (%.0fs)", epoch, rec.train_acc, rec.test_acc, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
    return network, metrics


def config_summary(config: TrainConfig) -> str:
    return " ".join(f"{k}={v}" for k, v in asdict(config).items())
