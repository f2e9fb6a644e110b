"""Single-step comparison of decorrelation rules under ``x = (cR)(y/c)`` rescalings."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from copi.data import random_covariance, synth_gaussian
from copi.errors import ConfigError, ContractError
from copi.rules import copi_decorr_update
from copi.tensor import make_rng, outer_mean


def lab_loss(x: np.ndarray) -> float:
    """Mean over samples of ``||x x^T - diag(x^2)||_F^2``."""
    s = np.einsum("in,in->n", x, x)
    return float(np.mean(s * s - np.einsum("in->n", x ** 4)))


def rule_copi(R: np.ndarray, x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    return copi_decorr_update(R, x)


def rule_anti_hebbian(R: np.ndarray, x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """``-(mean[x x^T] - diag(mean[x^2]))``; ignores ``R``."""
    if x.shape[0] != R.shape[0]:
        raise ContractError(f"x has {x.shape[0]} rows, R is {R.shape}")
    c = outer_mean(x, x)
    np.fill_diagonal(c, 0.0)
    return -c


def rule_grad_on_R(R: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Negative gradient of ``lab_loss(R y) / 4`` with respect to ``R``.

    Per sample the gradient is ``(x x^T - diag(x^2)) x y^T``.
    """
    if x.shape[0] != R.shape[0] or y.shape[0] != R.shape[1] or x.shape[1] != y.shape[1]:
        raise ContractError(f"shapes R {R.shape}, x {x.shape}, y {y.shape} do not conform")
    s = np.einsum("in,in->n", x, x)
    g = x * s[np.newaxis, :] - x ** 3
    return -(g @ y.T) / x.shape[1]


RULES = {"copi": rule_copi, "anti-hebbian": rule_anti_hebbian, "grad-on-R": rule_grad_on_R}


@dataclass
class LabConfig:
    dim: int = 100
    n_samples: int = 1000
    r_init_noise: float = 0.1
    scales: list[float] = field(default_factory=lambda: [0.1, 1.0, 10.0])
    eta: float = 1e-3
    cov_eps: float = 0.1
    cov_scale: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.scales or any(c <= 0 for c in self.scales):
            raise ConfigError("scales must be a non-empty list of positive numbers")
        if self.dim < 2 or self.n_samples < 1:
            raise ConfigError("dim must be >= 2 and n_samples >= 1")
        if self.cov_scale is None:
            # keeps covariance entries O(1) so every rule takes a moderate first step
            self.cov_scale = 1.0 / np.sqrt(self.dim)
        if self.eta < 0:
            raise ConfigError("eta must be non-negative")


@dataclass
class LabCell:
    rule: str
    c: float
    loss_before: float
    loss_after: float
    reduction: float
    diverged: bool


@dataclass
class LabResult:
    cells: list[LabCell]

    def reductions(self, rule: str) -> np.ndarray:
        return np.array([cell.reduction for cell in self.cells if cell.rule == rule])

    def write_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                for line in header_comment.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["rule", "c", "loss_before", "loss_after", "reduction"])
            for cell in self.cells:
                w.writerow([cell.rule, cell.c, cell.loss_before, cell.loss_after, cell.reduction])


def lab_data(config: LabConfig) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian samples ``y`` (dim x n) and the initial ``R = I + U(-noise, noise)``."""
    rng = make_rng(config.seed)
    cov = random_covariance(rng, config.dim, config.cov_eps, config.cov_scale)
    y = synth_gaussian(rng, config.dim, config.n_samples, cov).features
    R = np.eye(config.dim) + rng.uniform(-config.r_init_noise, config.r_init_noise, (config.dim, config.dim))
    return y, R


def run_lab(config: LabConfig) -> LabResult:
    y, R = lab_data(config)
    before = lab_loss(R @ y)
    cells = []
    for name, rule in RULES.items():
        for c in config.scales:
            Rc, yc = c * R, y / c
            xc = Rc @ yc
            R_new = Rc + config.eta * rule(Rc, xc, yc)
            after = lab_loss(R_new @ yc)
            diverged = not np.isfinite(after) or after > 10.0 * before
            cells.append(LabCell(name, c, before, after, before - after, diverged))
    return LabResult(cells)


def scale_ratio(reductions: np.ndarray) -> float:
    """``max/min`` of the reductions; infinite if any cell failed to reduce the loss."""
    lo = float(np.min(reductions))
    if lo <= 0:
        return float("inf")
    return float(np.max(reductions)) / lo


