"""Parameter-update rules, error signals, losses and the Adam baseline.

All batch quantities have one sample per column.  Every update returned
here is a *direction*: callers apply ``P <- P + eta * dP`` (Adam aside).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from copi.errors import ConfigError, ContractError
from copi.network import LayerState, Network
from copi.tensor import outer_mean, sq_mean

BACKPROP = "backprop"
FEEDBACK_ALIGNMENT = "feedback-alignment"
SIGNALS = (BACKPROP, FEEDBACK_ALIGNMENT)

QUADRATIC = "quadratic"
CROSS_ENTROPY = "cross-entropy"
LOSSES = (QUADRATIC, CROSS_ENTROPY)


def _check_batch(name: str, m: np.ndarray, rows: int | None = None, cols: int | None = None):
    if m.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ContractError(f"{name} has {m.shape[0]} rows, expected {rows}")
    if cols is not None and m.shape[1] != cols:
        raise ContractError(f"{name} has {m.shape[1]} columns, expected {cols}")


def error_signals(network: Network, states: list[LayerState], delta_out: np.ndarray,
                  mode: str = BACKPROP) -> list[np.ndarray]:
    """Per-layer perturbation directions, propagated down from ``delta_out``.

    ``delta_out`` is the output-layer signal ``-dl/da_L``.  Backprop carries
    it through ``R_{l+1}^T W_{l+1}^T``; feedback alignment through the fixed
    ``network.feedback`` matrices instead.
    """
    if mode not in SIGNALS:
        raise ConfigError(f"unknown error signal {mode!r}")
    if mode == FEEDBACK_ALIGNMENT and network.feedback is None:
        raise ConfigError("feedback alignment needs a network built with feedback weights")
    if len(states) != network.depth:
        raise ContractError("states do not match the network depth")
    _check_batch("delta_out", delta_out, rows=network.layers[-1].n_out, cols=states[-1].a.shape[1])
    deltas = [None] * network.depth
    deltas[-1] = delta_out
    for i in range(network.depth - 2, -1, -1):
        upper = network.layers[i + 1]
        if mode == BACKPROP:
            back = upper.R.T @ (upper.W.T @ deltas[i + 1])
        else:
            back = network.feedback[i] @ deltas[i + 1]
        deltas[i] = network.layers[i].f_deriv(states[i].a) * back
    return deltas


def copi_forward_update(W: np.ndarray, x: np.ndarray, a: np.ndarray, delta: np.ndarray,
                        alpha: float) -> np.ndarray:
    """``mean[z x^T] - W diag(mean[x^2])`` with target ``z = a + alpha * delta``."""
    _check_batch("x", x, rows=W.shape[1])
    _check_batch("a", a, rows=W.shape[0], cols=x.shape[1])
    _check_batch("delta", delta, rows=W.shape[0], cols=x.shape[1])
    z = a + alpha * delta
    return outer_mean(z, x) - W * sq_mean(x)[np.newaxis, :]


def copi_decorr_update(R: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``-(mean[x x^T] - diag(mean[x^2])) R`` for post-decorrelation activity ``x``.

    Evaluated as ``x (R^T x)^T / N`` so the cost is ``O(K^2 N)`` rather than ``O(K^3)``.
    """
    _check_batch("x", x, rows=R.shape[0])
    if R.shape[0] != R.shape[1]:
        raise ContractError(f"R must be square, got {R.shape}")
    n = x.shape[1]
    corr_r = x @ (x.T @ R) / n
    return -(corr_r - sq_mean(x)[:, np.newaxis] * R)


def bio_copi_decorr_update(R: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``-(mean[q x^T] - R diag(mean[x^2]))`` with ``q = R x``.

    The decay term scales columns (presynaptic activity) rather than rows.
    """
    _check_batch("x", x, rows=R.shape[0])
    if R.shape[0] != R.shape[1]:
        raise ContractError(f"R must be square, got {R.shape}")
    q = R @ x
    return -(outer_mean(q, x) - R * sq_mean(x)[np.newaxis, :])


def bp_update(W: np.ndarray, x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Plain gradient step direction ``mean[delta x^T]``."""
    _check_batch("x", x, rows=W.shape[1])
    _check_batch("delta", delta, rows=W.shape[0], cols=x.shape[1])
    return outer_mean(delta, x)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, eta: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step on a loss gradient; returns new param and state."""
    if grad.shape != param.shape or state.m.shape != param.shape or state.v.shape != param.shape:
        raise ContractError("Adam state, gradient and parameter shapes differ")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return param - eta * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


def softmax(y: np.ndarray) -> np.ndarray:
    e = np.exp(y - y.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def loss_and_output_delta(y: np.ndarray, a: np.ndarray, target: np.ndarray, loss_kind: str,
                          f_deriv) -> tuple[float, np.ndarray]:
    """Batch-mean loss and the per-sample output signal ``-dl_n/da_L``.

    Quadratic: ``l_n = ||y_n - y*_n||^2``.  Cross-entropy: softmax over
    ``y`` and ``l_n = -log p_n[label]``; the signal is built from the
    equivalent output target ``t* = y - dl/dy``.
    """
    if y.shape != target.shape or a.shape != y.shape:
        raise ContractError(f"output {y.shape}, activation {a.shape} and target {target.shape} differ")
    n = y.shape[1]
    if loss_kind == QUADRATIC:
        err = y - target
        loss = float(np.sum(err * err)) / n
        return loss, -f_deriv(a) * (2.0 * err)
    if loss_kind == CROSS_ENTROPY:
        if not (np.all((target == 0) | (target == 1)) and np.all(target.sum(axis=0) == 1)):
            raise ConfigError("cross-entropy needs one-hot target columns")
        p = softmax(y)
        picked = np.sum(p * target, axis=0)
        loss = float(-np.sum(np.log(np.maximum(picked, 1e-300)))) / n
        t_star = y - (p - target)
        return loss, -f_deriv(a) * (y - t_star)
    raise ConfigError(f"unknown loss {loss_kind!r}")


def batch_loss(y: np.ndarray, target: np.ndarray, loss_kind: str) -> float:
    """Loss only (no signal), for evaluation."""
    n = y.shape[1]
    if loss_kind == QUADRATIC:
        err = y - target
        return float(np.sum(err * err)) / n
    p = softmax(y)
    return float(-np.sum(np.log(np.maximum(np.sum(p * target, axis=0), 1e-300)))) / n
