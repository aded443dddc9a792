"""Gradient-norm-preserving network layers and margin certification.

Layers act on a single example: spatial layers take ``(C, H, W)`` arrays,
dense layers flatten whatever they receive. Networks are built once and
never mutated, so ``forward`` and ``certify`` are safe to call from many
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .blockconv import apply_conv_cyclic
from .errors import NonDifferentiableError, PreconditionError, ShapeError
from .formats import params_from_dict, params_to_dict, load_params, read_json
from .param import BcopParams, bcop

NET_FORMAT = "orthoconv-net-v1"


def group_sort(x, group_size: int = 2) -> np.ndarray:
    """Sort each contiguous group of a vector in descending order (MaxMin for size 2)."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError("group_sort expects a vector; use GroupSort for tensors")
    if group_size < 1 or v.size % group_size:
        raise ShapeError(f"group size {group_size} does not divide length {v.size}")
    return -np.sort(-v.reshape(-1, group_size), axis=1).ravel()


def _group_sort_channels(x, g):
    C = x.shape[0]
    if g < 1 or C % g:
        raise ShapeError(f"group size {g} does not divide {C} channels")
    grouped = x.reshape((C // g, g) + x.shape[1:])
    return -np.sort(-grouped, axis=1).reshape(x.shape)


def invertible_downsample(x, stride: int) -> np.ndarray:
    """Move each ``stride x stride`` pixel block into channels.

    Output channel ``c * stride**2 + di * stride + dj`` at pixel ``(i, j)``
    holds ``x[c, i * stride + di, j * stride + dj]``.
    """
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 3:
        raise ShapeError("invertible_downsample expects a (C, H, W) tensor")
    C, H, W = v.shape
    s = int(stride)
    if s < 1 or H % s or W % s:
        raise ShapeError(f"spatial size {(H, W)} is not divisible by stride {s}")
    out = v.reshape(C, H // s, s, W // s, s).transpose(0, 2, 4, 1, 3)
    return out.reshape(C * s * s, H // s, W // s)


def invertible_upsample(x, stride: int) -> np.ndarray:
    """Inverse of :func:`invertible_downsample`."""
    v = np.asarray(x, dtype=np.float64)
    s = int(stride)
    C2, h, w = v.shape
    if C2 % (s * s):
        raise ShapeError(f"{C2} channels are not divisible by stride^2 = {s * s}")
    C = C2 // (s * s)
    return v.reshape(C, s, s, h, w).transpose(0, 3, 1, 4, 2).reshape(C, h * s, w * s)


class Layer:
    """Base class; subclasses define ``__call__``, ``output_shape`` and ``to_dict``."""

    lipschitz = 1.0

    def output_shape(self, shape):
        return tuple(shape)


@dataclass(eq=False)
class BcopConv(Layer):
    params: BcopParams
    padding: str = "cyclic"
    bjorck_iters: int = linalg.BJORCK_ITERS
    power_iters: int = linalg.POWER_ITERS
    kernel: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.padding != "cyclic":
            # zero-padded orthogonal convolutions only exist for 1 x 1 kernels
            raise PreconditionError("BcopConv supports cyclic padding only")
        self.kernel = bcop(self.params, self.bjorck_iters, self.power_iters)

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.params.c_in:
            raise ShapeError(f"BcopConv expects ({self.params.c_in}, H, W), got {tuple(shape)}")
        K = self.params.kernel_size
        if shape[1] < K or shape[2] < K:
            raise ShapeError(f"spatial size {tuple(shape[1:])} smaller than kernel size {K}")
        return (self.params.c_out,) + tuple(shape[1:])

    def __call__(self, x):
        return apply_conv_cyclic(self.kernel, x)

    def to_dict(self):
        return {"type": "bcop_conv", "params": params_to_dict(self.params)}


@dataclass(eq=False)
class OrthoDense(Layer):
    """Dense layer whose weight is the Björck orthogonalization of `raw`."""

    raw: np.ndarray
    bjorck_iters: int = linalg.BJORCK_ITERS
    power_iters: int = linalg.POWER_ITERS
    weight: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.raw = linalg.as_matrix(self.raw, "raw")
        self.weight = linalg.orthogonalize(self.raw, self.bjorck_iters, self.power_iters)

    def output_shape(self, shape):
        if int(np.prod(shape)) != self.weight.shape[1]:
            raise ShapeError(f"OrthoDense expects {self.weight.shape[1]} inputs, got shape {tuple(shape)}")
        return (self.weight.shape[0],)

    def __call__(self, x):
        return self.weight @ np.ravel(x)

    def to_dict(self):
        r, c = self.raw.shape
        return {"type": "ortho_dense", "rows": r, "cols": c, "data": self.raw.ravel().tolist()}


@dataclass(eq=False)
class Dense(Layer):
    """Unconstrained affine layer; its Lipschitz constant is the spectral norm."""

    weight: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weight = linalg.as_matrix(self.weight, "weight")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64).reshape(self.weight.shape[0])

    @property
    def lipschitz(self):
        return linalg.spectral_norm(self.weight)

    def output_shape(self, shape):
        if int(np.prod(shape)) != self.weight.shape[1]:
            raise ShapeError(f"Dense expects {self.weight.shape[1]} inputs, got shape {tuple(shape)}")
        return (self.weight.shape[0],)

    def __call__(self, x):
        y = self.weight @ np.ravel(x)
        return y if self.bias is None else y + self.bias

    def to_dict(self):
        r, c = self.weight.shape
        d = {"type": "dense", "rows": r, "cols": c, "data": self.weight.ravel().tolist()}
        if self.bias is not None:
            d["bias"] = self.bias.tolist()
        return d


@dataclass(eq=False)
class GroupSort(Layer):
    """Sorts groups along the channel axis of tensors, or contiguous groups of vectors."""

    group_size: int = 2

    def output_shape(self, shape):
        if shape[0] % self.group_size:
            raise ShapeError(f"group size {self.group_size} does not divide {shape[0]}")
        return tuple(shape)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return group_sort(x, self.group_size)
        return _group_sort_channels(x, self.group_size)

    def min_gap(self, x) -> float:
        """Smallest distance between two entries of the same group."""
        x = np.asarray(x, dtype=np.float64)
        g = self.group_size
        if g == 1:
            return math.inf
        grouped = np.moveaxis(x.reshape((x.shape[0] // g, g) + x.shape[1:]), 1, -1)
        s = np.sort(grouped, axis=-1)
        return float(np.min(np.diff(s, axis=-1)))

    def to_dict(self):
        return {"type": "group_sort", "group_size": self.group_size}


@dataclass(eq=False)
class InvertibleDownsample(Layer):
    stride: int = 2

    def output_shape(self, shape):
        if len(shape) != 3 or shape[1] % self.stride or shape[2] % self.stride:
            raise ShapeError(f"shape {tuple(shape)} not divisible by stride {self.stride}")
        s = self.stride
        return (shape[0] * s * s, shape[1] // s, shape[2] // s)

    def __call__(self, x):
        return invertible_downsample(x, self.stride)

    def to_dict(self):
        return {"type": "invertible_downsample", "stride": self.stride}


@dataclass(eq=False)
class LipNetwork:
    layers: list
    input_shape: tuple

    def __post_init__(self):
        self.layers = list(self.layers)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        self.output_shape = (int(np.prod(shape)),)

    def __call__(self, x):
        return forward(self, x)

    def to_dict(self):
        return {
            "format": NET_FORMAT,
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d, base_dir=None):
        if d.get("format") != NET_FORMAT:
            from .errors import FormatError

            raise FormatError(f"expected format {NET_FORMAT!r}, got {d.get('format')!r}")
        return cls([_layer_from_dict(ld, base_dir) for ld in d["layers"]], d["input_shape"])


def _layer_from_dict(d, base_dir):
    from pathlib import Path

    from .errors import FormatError

    kind = d.get("type")
    try:
        if kind == "bcop_conv":
            if "params_file" in d:
                path = Path(d["params_file"])
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                return BcopConv(load_params(path))
            return BcopConv(params_from_dict(d["params"]))
        if kind in ("ortho_dense", "dense"):
            W = np.asarray(d["data"], dtype=np.float64).reshape(int(d["rows"]), int(d["cols"]))
            if kind == "ortho_dense":
                return OrthoDense(W)
            return Dense(W, d.get("bias"))
        if kind == "group_sort":
            return GroupSort(int(d["group_size"]))
        if kind == "invertible_downsample":
            return InvertibleDownsample(int(d["stride"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed {kind} layer: {exc}") from exc
    raise FormatError(f"unknown layer type {kind!r}")


def load_network(path) -> LipNetwork:
    from pathlib import Path

    return LipNetwork.from_dict(read_json(path), base_dir=Path(path).parent)


def _run(net, x, trace=None):
    v = np.asarray(x, dtype=np.float64)
    if tuple(v.shape) != net.input_shape:
        raise ShapeError(f"network expects input shape {net.input_shape}, got {v.shape}")
    for layer in net.layers:
        if trace is not None:
            trace.append((layer, v))
        v = layer(v)
    return np.ravel(v)


def forward(net: LipNetwork, x) -> np.ndarray:
    """Logits of `net` at `x` (a flat vector)."""
    return _run(net, x)


def lipschitz_bound(net: LipNetwork) -> float:
    """Product of per-layer Lipschitz constants (1 for an empty network)."""
    bound = 1.0
    for layer in net.layers:
        bound *= float(layer.lipschitz)
    return bound


def margin(logits, t: int) -> float:
    """``max(0, y_t - max_{i != t} y_i)``."""
    y = np.asarray(logits, dtype=np.float64).ravel()
    if y.size < 2:
        raise ShapeError("margin needs at least two classes")
    if not 0 <= t < y.size:
        raise PreconditionError(f"label {t} out of range for {y.size} classes")
    others = np.delete(y, t)
    return float(max(0.0, y[t] - others.max()))


@dataclass
class CertificationQuery:
    x: np.ndarray
    label: int
    epsilon: float
    p: float = 2.0
    lipschitz: float = 1.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if not self.epsilon >= 0:
            raise PreconditionError("epsilon must be >= 0")
        if not self.p >= 1:
            raise PreconditionError("norm order p must be >= 1")
        if not self.lipschitz > 0:
            raise PreconditionError("Lipschitz constant must be > 0")


def certification_threshold(epsilon: float, p: float = 2.0, lipschitz: float = 1.0) -> float:
    """Margin needed to certify radius `epsilon`: ``2^((p-1)/p) * l * epsilon``."""
    exponent = 1.0 if math.isinf(p) else (p - 1.0) / p
    return 2.0 ** exponent * lipschitz * epsilon


def certify(net: LipNetwork, q: CertificationQuery) -> bool:
    """True iff the margin at ``q.x`` strictly exceeds the certification threshold."""
    bound = lipschitz_bound(net)
    if q.lipschitz < bound * (1.0 - 1e-12):
        raise PreconditionError(
            f"declared Lipschitz constant {q.lipschitz} is below the network bound {bound}"
        )
    m = margin(forward(net, q.x), q.label)
    return certification_threshold(q.epsilon, q.p, q.lipschitz) < m


def jacobian_fd(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a layer, network or callable at `x`.

    Rows index flattened outputs and columns flattened inputs. For layers
    and networks containing GroupSort, raises
    :class:`NonDifferentiableError` when two entries of a group are within
    ``10 h`` of each other, since the step could cross a sorting boundary.
    """
    if h <= 0:
        raise PreconditionError("step h must be > 0")
    x = np.asarray(x, dtype=np.float64)
    _check_ties(f, x, 10.0 * h)
    if isinstance(f, LipNetwork):
        fn = lambda v: forward(f, v)  # noqa: E731
    else:
        fn = lambda v: np.ravel(f(v))  # noqa: E731
    flat = x.ravel()
    cols = []
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = h
        cols.append((fn((flat + e).reshape(x.shape)) - fn((flat - e).reshape(x.shape))) / (2 * h))
    return np.stack(cols, axis=1)


def _check_ties(f, x, window):
    if isinstance(f, GroupSort):
        pairs = [(f, x)]
    elif isinstance(f, LipNetwork):
        pairs = []
        _run(f, x, pairs)
    else:
        return
    for layer, v in pairs:
        if isinstance(layer, GroupSort) and layer.min_gap(v) < window:
            raise NonDifferentiableError(
                "GroupSort inputs tie within the finite-difference window"
            )


def example_network(channels=4, size=4, classes=10, kernel_size=3, seed=0) -> LipNetwork:
    """Seeded BcopConv -> GroupSort -> OrthoDense classifier."""
    rng = np.random.default_rng(seed)
    conv = BcopConv(BcopParams.random(channels, kernel_size, seed=int(rng.integers(2**31))))
    dense = OrthoDense(rng.standard_normal((classes, channels * size * size)))
    return LipNetwork([conv, GroupSort(2), dense], (channels, size, size))
