"""Binary checkpoint format for networks and compressed networks.

Layout (integers little-endian u32, floats little-endian f64)::

    b"COPI"  version  kind(0=network, 1=compressed)  n_layers  has_feedback
    per layer:  n_in  n_out  activation(u8: 0 identity, 1 leaky-relu)  slope(f64)
    per layer:  W (n_out*n_in, row-major)  R (n_in*n_in)
    if has_feedback:  B_1 .. B_{L-1}
    if compressed:  b"RDOT" original_depth  rows  cols  activation(u8)  slope(f64)  R (cols*cols)  B (rows*cols)
    CRC32 of every preceding byte (u32)
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from copi.analysis import CompressedNetwork, LinearReadout
from copi.errors import FormatError
from copi.network import IDENTITY, LEAKY_RELU, Layer, Network

MAGIC = b"COPI"
READOUT_MAGIC = b"RDOT"
VERSION = 1
_ACT_TAGS = {IDENTITY: 0, LEAKY_RELU: 1}
_TAG_ACTS = {v: k for k, v in _ACT_TAGS.items()}


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _encode(layers: list[Layer], feedback, kind: int, tail: bytes = b"") -> bytes:
    out = [MAGIC, struct.pack("<IIII", VERSION, kind, len(layers), int(feedback is not None))]
    for layer in layers:
        out.append(struct.pack("<IIBd", layer.n_in, layer.n_out, _ACT_TAGS[layer.activation], layer.slope))
    for layer in layers:
        out += [_f64(layer.W), _f64(layer.R)]
    for b in feedback or []:
        out.append(_f64(b))
    out.append(tail)
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated while reading {what}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def matrix(self, rows: int, cols: int, what: str) -> np.ndarray:
        raw = self.take(8 * rows * cols, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, cols)


def _decode(buf: bytes, path):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a COPI checkpoint")
    body, crc = buf[:-4], struct.unpack("<I", buf[-4:])[0]
    if zlib.crc32(body) != crc:
        raise FormatError(f"{path}: CRC32 mismatch, checkpoint is corrupted")
    r = _Reader(body, path)
    r.take(4, "magic")
    version, kind, n_layers, has_fb = r.unpack("<IIII", "header")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    specs = [r.unpack("<IIBd", f"layer {i + 1} header") for i in range(n_layers)]
    layers = []
    for i, (n_in, n_out, tag, slope) in enumerate(specs):
        if tag not in _TAG_ACTS:
            raise FormatError(f"{path}: layer {i + 1} has unknown activation tag {tag}")
        W = r.matrix(n_out, n_in, f"W of layer {i + 1}")
        R = r.matrix(n_in, n_in, f"R of layer {i + 1}")
        layers.append(Layer(W, R, _TAG_ACTS[tag], slope))
    feedback = None
    if has_fb:
        feedback = [r.matrix(layers[i].n_out, layers[i + 1].n_out, f"feedback {i + 1}") for i in range(n_layers - 1)]
    return kind, layers, feedback, r


def save_network(network: Network, path) -> None:
    Path(path).write_bytes(_encode(network.layers, network.feedback, 0))


def save_compressed(cn: CompressedNetwork, path) -> None:
    tail = b""
    if cn.readout is not None:
        rows, cols = cn.readout.B.shape
        tail = (READOUT_MAGIC + struct.pack("<IIIBd", cn.original_depth, rows, cols,
                                            _ACT_TAGS[cn.output_activation], cn.slope)
                + _f64(cn.R) + _f64(cn.readout.B))
    Path(path).write_bytes(_encode(cn.prefix, None, 1, tail))


def load_checkpoint(path):
    """Return a :class:`Network` or a :class:`CompressedNetwork`, whichever is stored."""
    buf = Path(path).read_bytes()
    kind, layers, feedback, r = _decode(buf, path)
    if kind == 0:
        if r.pos != len(r.buf):
            raise FormatError(f"{path}: trailing bytes after network data")
        return Network(layers, feedback)
    if kind != 1:
        raise FormatError(f"{path}: unknown checkpoint kind {kind}")
    if r.pos == len(r.buf):
        act = layers[-1].activation if layers else IDENTITY
        return CompressedNetwork(layers, None, None, act, layers[-1].slope if layers else 0.1, len(layers))
    if r.take(4, "readout magic") != READOUT_MAGIC:
        raise FormatError(f"{path}: bad readout section magic")
    depth, rows, cols, tag, slope = r.unpack("<IIIBd", "readout header")
    if tag not in _TAG_ACTS:
        raise FormatError(f"{path}: readout has unknown activation tag {tag}")
    R = r.matrix(cols, cols, "readout R")
    B = r.matrix(rows, cols, "readout B")
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: trailing bytes after readout")
    readout = LinearReadout(B, len(layers), depth)
    return CompressedNetwork(layers, R, readout, _TAG_ACTS[tag], slope, depth)


def load_network(path) -> Network:
    obj = load_checkpoint(path)
    if not isinstance(obj, Network):
        raise FormatError(f"{path}: holds a compressed network, not a full one")
    return obj
