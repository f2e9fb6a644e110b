"""Inverse-free linear readouts on decorrelated activity: feature maps and compression.

With decorrelated inputs ``X`` (rows mutually orthogonal over the samples)
the least-squares map ``Y ~ B X`` is ``B = Y X^T diag(1 / sum_n x_m^2)``,
so no matrix inverse is needed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from copi.data import Dataset
from copi.errors import ContractError
from copi.network import IDENTITY, Layer, Network, forward, leaky_relu
from copi.tensor import as_matrix, offdiag_norm  # noqa: F401  (re-exported)

EPS_ACT = 1e-12
DECORR_WARN_RATIO = 0.1


@dataclass
class LinearReadout:
    B: np.ndarray
    source_layer: int = 0
    target_layer: int = 0
    fit_diag: np.ndarray = field(default=None, repr=False)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.B @ x


class ReadoutAccumulator:
    """Streams ``(X, Y)`` column blocks and solves for ``B`` at the end."""

    def __init__(self, n_in: int, n_out: int):
        self.yx = np.zeros((n_out, n_in))
        self.xx = np.zeros((n_in, n_in))
        self.n = 0

    def add(self, x: np.ndarray, y: np.ndarray) -> None:
        if x.shape[1] != y.shape[1]:
            raise ContractError("X and Y sample counts differ")
        self.yx += y @ x.T
        self.xx += x @ x.T
        self.n += x.shape[1]

    def decorrelation_ratio(self) -> float:
        """Off-diagonal norm of ``X X^T`` relative to its diagonal norm."""
        diag = np.diag(self.xx).copy()
        off = self.xx - np.diag(diag)
        dn = np.linalg.norm(diag)
        return float(np.linalg.norm(off) / dn) if dn > 0 else 0.0

    def finish(self, source_layer: int = 0, target_layer: int = 0, eps_act: float = EPS_ACT,
               warn: bool = True) -> LinearReadout:
        if self.n == 0:
            raise ContractError("no samples accumulated")
        power = np.diag(self.xx).copy()
        dead = power / self.n < eps_act
        if warn and dead.any():
            warnings.warn(f"{int(dead.sum())} input rows have no activity; their readout columns are zero")
        ratio = self.decorrelation_ratio()
        if warn and ratio > DECORR_WARN_RATIO:
            warnings.warn(f"readout inputs are not well decorrelated (off/diag ratio {ratio:.3g})")
        inv = np.where(dead, 0.0, 1.0 / np.where(dead, 1.0, power))
        return LinearReadout(self.yx * inv[np.newaxis, :], source_layer, target_layer, power / self.n)


def fit_readout(X: np.ndarray, Y: np.ndarray, eps_act: float = EPS_ACT, warn: bool = True) -> LinearReadout:
    """``B = Y X^T C`` with ``C = diag(1 / x_m x_m^T)``; dead rows of ``X`` get zero columns."""
    X, Y = as_matrix(X), as_matrix(Y)
    acc = ReadoutAccumulator(X.shape[0], Y.shape[0])
    acc.add(X, Y)
    return acc.finish(eps_act=eps_act, warn=warn)


def _blocks(dataset: Dataset, block: int) -> Iterable[np.ndarray]:
    for s in range(0, dataset.n, block):
        yield dataset.features[:, s:s + block]


def feature_maps(network: Network, dataset: Dataset, layers: Sequence[int],
                 block: int = 1000) -> dict[int, np.ndarray]:
    """Linear receptive field of each unit in the requested (1-based) layers.

    Fits ``a_l ~ B_l x_1`` over ``dataset``, with ``x_1`` the decorrelated
    network input; row ``i`` of ``B_l`` is unit ``i``'s feature over inputs.
    """
    for l in layers:
        if not 1 <= l <= network.depth:
            raise ContractError(f"layer {l} out of range 1..{network.depth}")
    accs = {l: ReadoutAccumulator(network.layers[0].n_in, network.layers[l - 1].n_out) for l in layers}
    for xb in _blocks(dataset, block):
        states = forward(network, xb)
        for l, acc in accs.items():
            acc.add(states[0].x, states[l - 1].a)
    return {l: acc.finish(0, l, warn=False).B for l, acc in accs.items()}


@dataclass
class CompressedNetwork:
    """``prefix`` layers kept as-is, then ``x = R y_k`` and ``a_L = B x`` replace the rest.

    ``readout`` is ``None`` when nothing was removed.
    """

    prefix: list[Layer]
    R: np.ndarray | None = None
    readout: LinearReadout | None = None
    output_activation: str = IDENTITY
    slope: float = 0.1
    original_depth: int = 0

    @property
    def keep_layers(self) -> int:
        return len(self.prefix)

    def predict(self, y0: np.ndarray, block: int = 1000) -> np.ndarray:
        outs = []
        for s in range(0, y0.shape[1], block):
            y = y0[:, s:s + block]
            for layer in self.prefix:
                y = layer.f(layer.W @ (layer.R @ y))
            if self.readout is not None:
                a = self.readout.B @ (self.R @ y)
                y = a.copy() if self.output_activation == IDENTITY else leaky_relu(a, self.slope)
            outs.append(y)
        return np.concatenate(outs, axis=1)

    def accuracy(self, dataset: Dataset) -> float:
        y = self.predict(dataset.features)
        return float(np.mean(np.argmax(y, axis=0) == dataset.class_labels()))


def compress(network: Network, dataset: Dataset, keep_layers: int, block: int = 1000) -> CompressedNetwork:
    """Replace layers ``keep_layers+1 .. L`` by one readout fitted on ``dataset``.

    The readout maps the decorrelated input of the first removed layer to
    the output pre-activation ``a_L``.  No retraining is done.
    """
    L = network.depth
    if not 0 <= keep_layers <= L:
        raise ContractError(f"keep_layers must lie in 0..{L}, got {keep_layers}")
    last = network.layers[-1]
    prefix = [Layer(l.W.copy(), l.R.copy(), l.activation, l.slope) for l in network.layers[:keep_layers]]
    if keep_layers == L:
        return CompressedNetwork(prefix, None, None, last.activation, last.slope, L)
    acc = ReadoutAccumulator(network.layers[keep_layers].n_in, last.n_out)
    for xb in _blocks(dataset, block):
        states = forward(network, xb)
        acc.add(states[keep_layers].x, states[-1].a)
    readout = acc.finish(keep_layers, L, warn=False)
    return CompressedNetwork(prefix, network.layers[keep_layers].R.copy(), readout, last.activation, last.slope, L)


def decorrelated_inputs(network: Network, features: np.ndarray) -> np.ndarray:
    """First-layer decorrelated input ``x_1 = R_1 y_0`` for the given columns."""
    return network.layers[0].R @ features


# ---- PGM output -------------------------------------------------------------

def _image_shape(dim: int) -> tuple[int, int, int]:
    side = int(round(np.sqrt(dim)))
    if side * side == dim:
        return 1, side, side
    if dim % 3 == 0:
        side = int(round(np.sqrt(dim // 3)))
        if side * side * 3 == dim:
            return 3, side, side
    raise ContractError(f"cannot lay out a {dim}-dimensional vector as an image")


def to_signed_gray(v: np.ndarray) -> np.ndarray:
    """Map values to uint8 with 0 at 128 and the largest magnitude at 0 or 255."""
    m = float(np.max(np.abs(v))) if v.size else 0.0
    if m == 0.0:
        return np.full(v.shape, 128, dtype=np.uint8)
    return np.clip(np.rint(128.0 + 127.0 * v / m), 0, 255).astype(np.uint8)


def tile_grid(vectors: np.ndarray, n_cols: int | None = None) -> np.ndarray:
    """Tile the rows of ``vectors`` as images, 1-pixel separators, row-major order.

    Each tile is scaled independently with :func:`to_signed_gray`.
    Colour inputs are shown as their channel planes side by side.
    """
    vectors = as_matrix(vectors)
    if vectors.shape[0] == 0:
        raise ContractError("nothing to tile")
    ch, h, w = _image_shape(vectors.shape[1])
    tw = w * ch
    n = vectors.shape[0]
    n_cols = n_cols or int(np.ceil(np.sqrt(n)))
    n_rows = int(np.ceil(n / n_cols))
    grid = np.full((n_rows * (h + 1) + 1, n_cols * (tw + 1) + 1), 128, dtype=np.uint8)
    for k in range(n):
        img = vectors[k].reshape(ch, h, w)
        img = np.concatenate(list(img), axis=1)
        r, c = divmod(k, n_cols)
        grid[1 + r * (h + 1):1 + r * (h + 1) + h, 1 + c * (tw + 1):1 + c * (tw + 1) + tw] = to_signed_gray(img)
    return grid


def write_pgm(path, image: np.ndarray) -> None:
    """Binary (P5) greyscale PGM."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ContractError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ContractError(f"{path}: unsupported maxval {maxval}")
    data = raw[len(raw) - w * h:]
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)
