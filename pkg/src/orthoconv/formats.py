"""JSON file formats for kernels, BCOP parameters and input tensors.

``orthoconv-kernel-v1``::

    {"format": "orthoconv-kernel-v1", "c_out": .., "c_in": .., "k_h": .., "k_w": ..,
     "data": [...]}   # order: tap-row, tap-col, out-channel, in-channel

A 1-D kernel is stored with ``k_h = 1`` and an extra ``"ndim": 1`` field.

``orthoconv-params-v1``::

    {"format": "orthoconv-params-v1", "n": c_in, "c_out": .., "K": ..,
     "raw_h": [...], "raw_m": [[...], ...], "raw_n": [[...], ...]}

Python's float repr round-trips doubles, so writing then reading a file is
bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .blockconv import as_kernel
from .errors import FormatError
from .param import BcopParams

KERNEL_FORMAT = "orthoconv-kernel-v1"
PARAMS_FORMAT = "orthoconv-params-v1"
TENSOR_FORMAT = "orthoconv-tensor-v1"


def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def kernel_to_dict(kernel) -> dict:
    A = as_kernel(kernel)
    d = {"format": KERNEL_FORMAT}
    if A.ndim == 3:
        A4, d["ndim"] = A[None], 1
    else:
        A4 = A
    kh, kw, co, ci = A4.shape
    d.update(c_out=co, c_in=ci, k_h=kh, k_w=kw, data=_floats(A4))
    return d


def kernel_from_dict(d) -> np.ndarray:
    try:
        if d.get("format") != KERNEL_FORMAT:
            raise FormatError(f"expected format {KERNEL_FORMAT!r}, got {d.get('format')!r}")
        shape = (int(d["k_h"]), int(d["k_w"]), int(d["c_out"]), int(d["c_in"]))
        data = np.asarray(d["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed kernel file: {exc}") from exc
    if data.size != int(np.prod(shape)):
        raise FormatError(f"kernel data has {data.size} values, shape {shape} needs {np.prod(shape)}")
    A = data.reshape(shape)
    if d.get("ndim") == 1:
        if shape[0] != 1:
            raise FormatError("1-D kernel must have k_h = 1")
        A = A[0]
    return as_kernel(A)


def params_to_dict(params: BcopParams) -> dict:
    return {
        "format": PARAMS_FORMAT,
        "n": params.c_in,
        "c_out": params.c_out,
        "K": params.kernel_size,
        "raw_h": _floats(params.raw_h),
        "raw_m": [_floats(m) for m in params.raw_m],
        "raw_n": [_floats(m) for m in params.raw_n],
    }


def params_from_dict(d) -> BcopParams:
    try:
        if d.get("format") != PARAMS_FORMAT:
            raise FormatError(f"expected format {PARAMS_FORMAT!r}, got {d.get('format')!r}")
        n, co, K = int(d["n"]), int(d["c_out"]), int(d["K"])
        raw_h = np.asarray(d["raw_h"], dtype=np.float64).reshape(co, n)
        fac = (n, n // 2)
        raw_m = [np.asarray(m, dtype=np.float64).reshape(fac) for m in d["raw_m"]]
        raw_n = [np.asarray(m, dtype=np.float64).reshape(fac) for m in d["raw_n"]]
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"malformed params file: {exc}") from exc
    if len(raw_m) != K - 1 or len(raw_n) != K - 1:
        raise FormatError(f"params declare K={K} but carry {len(raw_m)} rounds")
    return BcopParams(raw_h, raw_m, raw_n)


def tensor_to_dict(x) -> dict:
    x = np.asarray(x, dtype=np.float64)
    return {"format": TENSOR_FORMAT, "shape": list(x.shape), "data": _floats(x)}


def tensor_from_dict(d) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in d["shape"])
        return np.asarray(d["data"], dtype=np.float64).reshape(shape)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"malformed tensor file: {exc}") from exc


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj) + "\n")


def save_kernel(path, kernel):
    write_json(path, kernel_to_dict(kernel))


def load_kernel(path) -> np.ndarray:
    return kernel_from_dict(read_json(path))


def save_params(path, params):
    write_json(path, params_to_dict(params))


def load_params(path) -> BcopParams:
    return params_from_dict(read_json(path))


def load_tensor(path) -> np.ndarray:
    if str(path).endswith(".npy"):
        return np.load(path)
    return tensor_from_dict(read_json(path))


def save_tensor(path, x):
    write_json(path, tensor_to_dict(x))
