"""``orthoconv`` command line.

Exit codes: 0 success or pass, 1 semantic failure (verdict fail, not
certified, counterexample not reproduced, fit diverged), 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from importlib import resources

import numpy as np

from . import formats
from .blockconv import (
    conv_singular_values_dft,
    is_zero_pad_orthogonal,
    off_center_norms,
    operator_matrix_zero_pad,
)
from .errors import DivergenceError, InvalidKernelError, OrthoconvError
from .lipnet import CertificationQuery, certification_threshold, certify, forward, lipschitz_bound, load_network, margin
from .optim import fit_bcop_to_target, sn_projected_ascent
from .param import BcopParams, bcop, ossn_normalize, rko, sock_with_ranks, svcm_clip
from .topology import component_signature_2x2, sock_invariant

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
HIST_BINS, HIST_RANGE = 60, (0.0, 1.5)
FIXTURE = "counterexample_2x2.json"


class UsageError(Exception):
    pass


def thread_count() -> int:
    raw = os.environ.get("ORTHOCONV_THREADS")
    if raw is None:
        return min(8, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"ORTHOCONV_THREADS must be a positive integer, got {raw!r}")
    if n < 1:
        raise UsageError(f"ORTHOCONV_THREADS must be a positive integer, got {raw!r}")
    return n


def parallel_map(fn, items):
    """``list(map(fn, items))`` on up to ``ORTHOCONV_THREADS`` threads, order preserved."""
    items = list(items)
    workers = thread_count()
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _emit(obj):
    print(json.dumps(obj, indent=2))


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _norm_order(text):
    if text.lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid norm order {text!r}")


def fixture_path():
    return resources.files("orthoconv").joinpath("fixtures", FIXTURE)


def load_fixture_kernel():
    with resources.as_file(fixture_path()) as path:
        return formats.load_kernel(path)


# gen ----------------------------------------------------------------------

def gen_kernel(method, channels, kernel_size, seed=0, c_out=None, spatial=None, ranks=None):
    """Kernel produced by `method`; shared by ``gen`` and ``bench``."""
    c_out = channels if c_out is None else c_out
    if method == "bcop":
        return bcop(BcopParams.random(channels, kernel_size, c_out=c_out, seed=seed))
    if method == "sock":
        if ranks is None:
            raise UsageError("--method sock needs --ranks")
        return sock_with_ranks(channels, ranks, seed)[0]
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((kernel_size, kernel_size, c_out, channels))
    if method == "rko":
        return rko(raw)
    if spatial is None:
        raise UsageError(f"--method {method} needs --spatial")
    if method == "ossn":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return ossn_normalize(raw, spatial, seed=seed)[0]
    if method == "svcm":
        return svcm_clip(raw, spatial)
    raise UsageError(f"unknown method {method!r}")


def cmd_gen(args):
    if args.method == "sock" and args.kernel_size is not None and args.ranks is not None:
        if args.kernel_size != len(args.ranks) + 1:
            raise UsageError("--kernel-size must equal len(--ranks) + 1 for sock")
    k = 3 if args.kernel_size is None else args.kernel_size
    if args.channels < 1 or k < 1:
        raise UsageError("--channels and --kernel-size must be positive")
    if args.params_out and args.method != "bcop":
        raise UsageError("--params-out is only meaningful for bcop")
    kernel = gen_kernel(args.method, args.channels, k, args.seed, args.c_out, args.spatial, args.ranks)
    formats.save_kernel(args.out, kernel)
    if args.params_out:
        formats.save_params(args.params_out,
                            BcopParams.random(args.channels, k, c_out=args.c_out, seed=args.seed))
    _emit({"method": args.method, "out": args.out, "shape": list(kernel.shape)})
    return EXIT_OK


# verify / spectrum -----------------------------------------------------------

def _load_checked(path, spatial):
    kernel = formats.load_kernel(path)
    K = max(kernel.shape[: kernel.ndim - 2])
    if spatial < K:
        raise UsageError(f"--spatial {spatial} is smaller than kernel size {K}")
    return kernel


def operator_spectrum(kernel, spatial, padding):
    if padding == "cyclic":
        return conv_singular_values_dft(kernel, spatial)
    return np.linalg.svd(operator_matrix_zero_pad(kernel, spatial), compute_uv=False)


def verify_report(path, spatial, padding, tol):
    kernel = _load_checked(path, spatial)
    s = operator_spectrum(kernel, spatial, padding)
    dev = float(np.max(np.abs(s - 1.0)))
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    return {
        "file": str(path),
        "sha256": digest,
        "spatial": spatial,
        "padding": padding,
        "min_sigma": float(s.min()),
        "max_sigma": float(s.max()),
        "mean_sigma": float(s.mean()),
        "max_deviation": dev,
        "verdict": "pass" if dev <= tol else "fail",
        "tol": tol,
    }


def cmd_verify(args):
    report = verify_report(args.kernel, args.spatial, args.padding, args.tol)
    _emit(report)
    return EXIT_OK if report["verdict"] == "pass" else EXIT_FAIL


def histogram(values):
    """Counts over 60 equal bins on [0, 1.5] and the number of values outside."""
    # rounding keeps values a few ulps below 1.0 in the bin that holds 1.0
    v = np.round(np.asarray(values, dtype=np.float64), 6)
    counts, edges = np.histogram(v, bins=HIST_BINS, range=HIST_RANGE)
    outside = int(np.count_nonzero((v < HIST_RANGE[0]) | (v > HIST_RANGE[1])))
    return counts, edges, outside


def cmd_spectrum(args):
    kernel = _load_checked(args.kernel, args.spatial)
    counts, edges, outside = histogram(operator_spectrum(kernel, args.spatial, args.padding))
    if outside:
        print(f"warning: {outside} singular values fall outside [0, 1.5]", file=sys.stderr)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([f"{(lo + hi) / 2:.6f}", int(c)])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


# topology ---------------------------------------------------------------------

def cmd_topology(args):
    kernel = formats.load_kernel(args.kernel)
    spatial_dims = kernel.shape[: kernel.ndim - 2]
    try:
        if kernel.ndim == 3 or 1 in spatial_dims:
            g = sock_invariant(kernel, args.tol)
            _emit({"kind": "1d", "g": g, "g_nearest": int(round(g)),
                   "kernel_size": int(max(spatial_dims))})
        elif spatial_dims == (2, 2):
            det_sign, p, q = component_signature_2x2(kernel, args.tol)
            _emit({"kind": "2x2", "det_sign": det_sign, "rank_p": p, "rank_q": q})
        else:
            raise UsageError(f"topology supports 1-D and 2 x 2 kernels, got taps {spatial_dims}")
    except InvalidKernelError as exc:
        print(f"invalid kernel: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# certify ------------------------------------------------------------------------

def cmd_certify(args):
    net = load_network(args.net)
    x = formats.load_tensor(args.input)
    lip = lipschitz_bound(net) if args.lipschitz is None else args.lipschitz
    q = CertificationQuery(x, args.label, args.eps, args.p, lip)
    ok = certify(net, q)
    m = margin(forward(net, x), args.label)
    _emit({
        "margin": m,
        "threshold": certification_threshold(args.eps, args.p, lip),
        "lipschitz": lip,
        "eps": args.eps,
        "p": "inf" if math.isinf(args.p) else args.p,
        "certified": ok,
    })
    return EXIT_OK if ok else EXIT_FAIL


# counterexample ---------------------------------------------------------------

def counterexample_sn_projection(steps=10000, lr=0.01):
    D = np.diag([2.0, 1.0])
    A_e, _ = sn_projected_ascent(D, steps, lr, "euclidean")
    A_t, _ = sn_projected_ascent(D, steps, lr, "two_norm")
    ok = (np.max(np.abs(A_e - np.diag([1.0, 0.5]))) < 1e-3
          and np.max(np.abs(A_t - np.eye(2))) < 1e-3)
    return ok, {
        "case": "sn-projection",
        "euclidean_limit": A_e.tolist(),
        "two_norm_limit": A_t.tolist(),
        "expected_euclidean": [[1.0, 0.0], [0.0, 0.5]],
        "expected_two_norm": [[1.0, 0.0], [0.0, 1.0]],
        "reproduced": bool(ok),
    }


def counterexample_2d_incomplete():
    A = load_fixture_kernel()
    dev = max(float(np.max(np.abs(conv_singular_values_dft(A, s) - 1.0))) for s in (3, 4, 5))
    cross = float(np.linalg.norm(A[0, 0] @ A[0, 1].T))
    sig = component_signature_2x2(A)
    # any BCOP 2 x 2 kernel has A1 A2^T = 0
    B = bcop(BcopParams.random(2, 2, seed=0))
    bcop_cross = float(np.linalg.norm(B[0, 0] @ B[0, 1].T))
    ok = dev < 1e-9 and abs(cross - 0.5) <= 1e-12 and tuple(sig) == (1, 1, 1)
    return ok, {
        "case": "2d-incomplete",
        "max_sigma_deviation": dev,
        "a1_a2t_frobenius": cross,
        "signature": list(sig),
        "bcop_a1_a2t_frobenius": bcop_cross,
        "reproduced": bool(ok),
    }


def counterexample_zero_pad(samples=100, seed=0, channels=4, spatial=6):
    def one(i):
        A = bcop(BcopParams.random(channels, 3, seed=seed + i))
        big = float(off_center_norms(A).max()) > 1e-3
        return big, is_zero_pad_orthogonal(A, spatial)

    results = parallel_map(one, range(samples))
    eligible = [zp for big, zp in results if big]
    failures = sum(1 for zp in eligible if not zp)
    ok = len(eligible) > 0 and failures == len(eligible)
    return ok, {
        "case": "zero-pad",
        "samples": samples,
        "eligible": len(eligible),
        "failed_zero_pad_orthogonality": failures,
        "reproduced": bool(ok),
    }


def cmd_counterexample(args):
    if args.case == "sn-projection":
        ok, report = counterexample_sn_projection()
    elif args.case == "2d-incomplete":
        ok, report = counterexample_2d_incomplete()
    else:
        ok, report = counterexample_zero_pad(args.samples, args.seed)
    _emit(report)
    return EXIT_OK if ok else EXIT_FAIL


# fit ----------------------------------------------------------------------------

def _load_target(path):
    d = formats.read_json(path)
    if isinstance(d, dict) and d.get("format") == formats.PARAMS_FORMAT:
        params = formats.params_from_dict(d)
        return bcop(params), params
    return formats.kernel_from_dict(d), None


def cmd_fit(args):
    target, target_params = _load_target(args.target)
    if target.ndim != 4:
        raise UsageError("fit needs a 2-D target kernel")
    if args.init:
        init = formats.load_params(args.init)
    elif target_params is not None:
        rng = np.random.default_rng(args.seed)
        theta = target_params.to_vector()
        init = target_params.with_vector(theta + args.perturb * rng.standard_normal(theta.size))
    else:
        K, _, c_out, c_in = target.shape
        init = BcopParams.random(c_in, K, c_out=c_out, seed=args.seed)
    status = EXIT_OK
    try:
        params, traj = fit_bcop_to_target(target, init, args.steps, args.lr)
    except DivergenceError as exc:
        print(f"fit diverged: {exc}", file=sys.stderr)
        params, traj, status = None, exc.trajectory, EXIT_FAIL
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            traj.to_csv(fh)
    if args.out and params is not None:
        formats.save_params(args.out, params)
    first, last = traj.losses[0], traj.losses[-1]
    _emit({
        "steps": traj.steps[-1],
        "initial_loss": first,
        "final_loss": last,
        "loss_ratio": last / first if first > 0 else 0.0,
        "invariant_drift": traj.invariant_drift(),
        "diverged": status != EXIT_OK,
    })
    return status


# bench ------------------------------------------------------------------------

def _time_once(fn):
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start


def bench_table(methods, channels, spatial, repeats, kernel_size=3, seed=0):
    """Rows ``(method, channels, spatial, repeat, seconds)``.

    Cells run one after another so timings are not skewed by thread contention.
    """
    rows = []
    for method in methods:
        for c in channels:
            for s in spatial:
                for r in range(repeats):
                    t = _time_once(lambda: gen_kernel(method, c, kernel_size, seed, spatial=s))
                    rows.append((method, c, s, r, t))
    return rows


def bench_ratios(rows):
    """Per (method, channels): best time at the largest spatial size over best at the smallest."""
    best = {}
    for method, c, s, _, t in rows:
        key = (method, c, s)
        best[key] = min(t, best.get(key, math.inf))
    out = {}
    for method, c in sorted({(m, c) for m, c, _ in best}):
        sizes = sorted(s for m, cc, s in best if (m, cc) == (method, c))
        if len(sizes) < 2:
            continue
        lo, hi = sizes[0], sizes[-1]
        out[f"{method}/c={c}"] = {
            "spatial_small": lo,
            "spatial_large": hi,
            "ratio": best[(method, c, hi)] / best[(method, c, lo)],
        }
    return out


def cmd_bench(args):
    for m in args.methods:
        if m not in ("bcop", "rko", "ossn", "svcm"):
            raise UsageError(f"unknown bench method {m!r}")
    rows = bench_table(args.methods, args.channels, args.spatial, args.repeats)
    fh = open(args.out, "w", newline="") if args.out else None
    try:
        w = csv.writer(fh or sys.stderr, lineterminator="\n")
        w.writerow(["method", "channels", "spatial", "repeat", "seconds"])
        for row in rows:
            w.writerow(list(row[:4]) + [repr(row[4])])
    finally:
        if fh:
            fh.close()
    _emit({"ratios": bench_ratios(rows), "cells": len(rows)})
    return EXIT_OK


# parser -----------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="orthoconv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a kernel file")
    g.add_argument("--method", required=True, choices=["bcop", "rko", "ossn", "svcm", "sock"])
    g.add_argument("--channels", type=int, required=True, help="input channels n")
    g.add_argument("--c-out", type=int, default=None)
    g.add_argument("--kernel-size", type=int, default=None, help="K (default 3)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--spatial", type=int, default=None, help="needed by ossn and svcm")
    g.add_argument("--ranks", type=_int_list, default=None, help="projector ranks for sock")
    g.add_argument("--out", required=True)
    g.add_argument("--params-out", default=None, help="also write the bcop parameters")
    g.set_defaults(func=cmd_gen)

    for name, fn, hlp in (("verify", cmd_verify, "check operator orthogonality"),
                          ("spectrum", cmd_spectrum, "singular value histogram CSV")):
        v = sub.add_parser(name, help=hlp)
        v.add_argument("--kernel", required=True)
        v.add_argument("--spatial", type=int, required=True)
        v.add_argument("--padding", choices=["cyclic", "zero"], default="cyclic")
        if name == "verify":
            v.add_argument("--tol", type=float, default=1e-6)
        else:
            v.add_argument("--out", default=None, help="CSV path (default stdout)")
        v.set_defaults(func=fn)

    t = sub.add_parser("topology", help="connected-component invariant of a kernel")
    t.add_argument("--kernel", required=True)
    t.add_argument("--tol", type=float, default=1e-6)
    t.set_defaults(func=cmd_topology)

    c = sub.add_parser("certify", help="margin certificate for one input")
    c.add_argument("--net", required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--label", type=int, required=True)
    c.add_argument("--eps", type=float, required=True)
    c.add_argument("--p", type=_norm_order, default=2.0)
    c.add_argument("--lipschitz", type=float, default=None, help="default: network bound")
    c.set_defaults(func=cmd_certify)

    x = sub.add_parser("counterexample", help="reproduce a known counterexample")
    x.add_argument("case", choices=["sn-projection", "2d-incomplete", "zero-pad"])
    x.add_argument("--samples", type=int, default=100)
    x.add_argument("--seed", type=int, default=0)
    x.set_defaults(func=cmd_counterexample)

    f = sub.add_parser("fit", help="fit BCOP parameters to a target kernel")
    f.add_argument("--target", required=True, help="kernel file or bcop params file")
    f.add_argument("--init", default=None, help="initial params file")
    f.add_argument("--perturb", type=float, default=0.01)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--steps", type=int, default=200)
    f.add_argument("--lr", type=float, default=0.1)
    f.add_argument("--trace", default=None, help="trajectory CSV path")
    f.add_argument("--out", default=None, help="final params path")
    f.set_defaults(func=cmd_fit)

    b = sub.add_parser("bench", help="construction time versus spatial size")
    b.add_argument("--methods", type=lambda s: [m for m in s.split(",") if m], default=["bcop", "rko", "ossn"])
    b.add_argument("--channels", type=_int_list, default=[16])
    b.add_argument("--spatial", type=_int_list, default=[16, 64])
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--out", default=None, help="CSV path (default stderr)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, OrthoconvError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
