import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from orthoconv import cli, formats, linalg
from orthoconv.lipnet import LipNetwork
from orthoconv.param import BcopParams


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    return code, json.loads(out)


@pytest.fixture
def bcop_file(tmp_path, capsys):
    path = tmp_path / "bcop.json"
    assert run(capsys, "gen", "--method", "bcop", "--channels", 4, "--kernel-size", 3,
               "--seed", 1, "--out", path)[0] == 0
    return path


def read_hist(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [(float(r["value"]), int(r["count"])) for r in rows]


def test_gen_then_verify_passes(capsys, bcop_file):
    code, report = run_json(capsys, "verify", "--kernel", bcop_file, "--spatial", 8)
    assert code == 0 and report["verdict"] == "pass"
    assert report["max_deviation"] <= 1e-6 and report["tol"] == 1e-6
    assert len(report["sha256"]) == 64


def test_gen_deterministic(tmp_path, capsys, bcop_file):
    again = tmp_path / "again.json"
    run(capsys, "gen", "--method", "bcop", "--channels", 4, "--kernel-size", 3, "--seed", 1, "--out", again)
    assert again.read_bytes() == bcop_file.read_bytes()


def test_gen_k1_is_orthogonalized_h(tmp_path, capsys):
    path = tmp_path / "k1.json"
    run(capsys, "gen", "--method", "bcop", "--channels", 3, "--kernel-size", 1, "--seed", 4, "--out", path)
    expected = linalg.orthogonalize(BcopParams.random(3, 1, seed=4).raw_h)
    np.testing.assert_array_equal(formats.load_kernel(path)[0, 0], expected)


@pytest.mark.parametrize("method", ["rko", "ossn", "svcm", "sock"])
def test_gen_other_methods(tmp_path, capsys, method):
    path = tmp_path / f"{method}.json"
    extra = ["--spatial", 6] if method in ("ossn", "svcm") else []
    extra += ["--ranks", "1,1"] if method == "sock" else []
    code = run(capsys, "gen", "--method", method, "--channels", 2, "--kernel-size", 3, "--out", path, *extra)[0]
    assert code == 0
    code, report = run_json(capsys, "verify", "--kernel", path, "--spatial", 6, "--tol", 1e-4)
    # ten power iterations can undershoot, so OSSN only lands near the bound
    assert report["max_sigma"] <= (1.01 if method == "ossn" else 1 + 1e-4)


def test_gen_input_errors(tmp_path, capsys):
    out = tmp_path / "x.json"
    assert run(capsys, "gen", "--method", "ossn", "--channels", 2, "--out", out)[0] == 2
    assert run(capsys, "gen", "--method", "sock", "--channels", 2, "--out", out)[0] == 2
    assert run(capsys, "gen", "--method", "bcop", "--channels", 2, "--c-out", 3, "--out", out)[0] == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["gen", "--method", "fft", "--channels", "2", "--out", str(out)])
    assert info.value.code == 2


def test_verify_zero_padding_fails(capsys, bcop_file):
    code, report = run_json(capsys, "verify", "--kernel", bcop_file, "--spatial", 6, "--padding", "zero")
    assert code == 1 and report["verdict"] == "fail"


def test_verify_identity_exact(tmp_path, capsys):
    path = tmp_path / "eye.json"
    formats.save_kernel(path, np.eye(3)[None, None])
    for padding in ("cyclic", "zero"):
        code, report = run_json(capsys, "verify", "--kernel", path, "--spatial", 5, "--padding", padding)
        assert code == 0
        assert report["min_sigma"] == 1.0 and report["max_sigma"] == 1.0


def test_verify_input_errors(tmp_path, capsys, bcop_file):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    assert run(capsys, "verify", "--kernel", bad, "--spatial", 4)[0] == 2
    assert run(capsys, "verify", "--kernel", tmp_path / "missing.json", "--spatial", 4)[0] == 2
    assert run(capsys, "verify", "--kernel", bcop_file, "--spatial", 2)[0] == 2


def test_spectrum_bcop_single_spike(tmp_path, capsys, bcop_file):
    out = tmp_path / "h.csv"
    assert run(capsys, "spectrum", "--kernel", bcop_file, "--spatial", 8, "--out", out)[0] == 0
    hist = read_hist(out)
    assert len(hist) == 60
    nonzero = [(v, c) for v, c in hist if c]
    assert len(nonzero) == 1
    v, c = nonzero[0]
    assert v - 0.0125 <= 1.0 < v + 0.0125 and c == 4 * 64


def test_spectrum_scaled_spike(tmp_path, capsys, bcop_file):
    half = tmp_path / "half.json"
    formats.save_kernel(half, 0.5 * formats.load_kernel(bcop_file))
    run(capsys, "spectrum", "--kernel", half, "--spatial", 8, "--out", tmp_path / "h.csv")
    nonzero = [v for v, c in read_hist(tmp_path / "h.csv") if c]
    assert len(nonzero) == 1 and abs(nonzero[0] - 0.5) <= 0.0125


def test_spectrum_rko_below_one(tmp_path, capsys):
    path = tmp_path / "rko.json"
    run(capsys, "gen", "--method", "rko", "--channels", 2, "--kernel-size", 3, "--out", path)
    run(capsys, "spectrum", "--kernel", path, "--spatial", 8, "--out", tmp_path / "h.csv")
    hist = read_hist(tmp_path / "h.csv")
    assert all(v < 1.0 + 0.0125 for v, c in hist if c)
    assert sum(1 for _, c in hist if c) > 3


def test_spectrum_to_stdout_warns_outside(tmp_path, capsys):
    path = tmp_path / "big.json"
    formats.save_kernel(path, 2 * np.eye(2)[None, None])
    code, out, err = run(capsys, "spectrum", "--kernel", path, "--spatial", 2)
    assert code == 0 and "outside" in err
    assert out.splitlines()[0] == "value,count"


def test_topology_reports(tmp_path, capsys):
    sock = tmp_path / "sock.json"
    run(capsys, "gen", "--method", "sock", "--channels", 4, "--ranks", "1,2", "--out", sock)
    code, rep = run_json(capsys, "topology", "--kernel", sock)
    assert code == 0 and rep["g_nearest"] == 3 and abs(rep["g"] - 3) < 1e-6
    code, rep = run_json(capsys, "topology", "--kernel", cli.fixture_path())
    assert code == 0 and (rep["det_sign"], rep["rank_p"], rep["rank_q"]) == (1, 1, 1)


def test_topology_failures(tmp_path, capsys, bcop_file):
    noise = tmp_path / "noise.json"
    formats.save_kernel(noise, np.random.default_rng(0).standard_normal((2, 2, 2, 2)))
    assert run(capsys, "topology", "--kernel", noise)[0] == 1
    assert run(capsys, "topology", "--kernel", bcop_file)[0] == 2


@pytest.fixture
def vector_net(tmp_path):
    path = tmp_path / "net.json"
    path.write_text(json.dumps(LipNetwork([], (2,)).to_dict()))
    return path


@pytest.mark.parametrize("m,eps,code", [(0.8, 0.5, 0), (0.7, 0.5, 1), (0.1, 0.0, 0), (0.0, 0.0, 1)])
def test_certify_exit_codes(tmp_path, capsys, vector_net, m, eps, code):
    x = tmp_path / "x.json"
    formats.save_tensor(x, np.array([m, 0.0]))
    got, rep = run_json(capsys, "certify", "--net", vector_net, "--input", x, "--label", 0, "--eps", eps)
    assert got == code and rep["certified"] is (code == 0)
    assert abs(rep["margin"] - m) < 1e-15


def test_certify_input_errors(tmp_path, capsys, vector_net):
    x = tmp_path / "x.json"
    formats.save_tensor(x, np.zeros(3))
    assert run(capsys, "certify", "--net", vector_net, "--input", x, "--label", 0, "--eps", 0.1)[0] == 2
    formats.save_tensor(x, np.zeros(2))
    assert run(capsys, "certify", "--net", vector_net, "--input", x, "--label", 0, "--eps", 0.1,
               "--lipschitz", 0.5)[0] == 2


@pytest.mark.parametrize("case", ["sn-projection", "2d-incomplete", "zero-pad"])
def test_counterexamples_reproduce(capsys, case):
    code, rep = run_json(capsys, "counterexample", case, "--samples", 20)
    assert code == 0 and rep["reproduced"] is True


def test_fit_perturbed(tmp_path, capsys):
    target = tmp_path / "target.json"
    formats.save_params(target, BcopParams.random(2, 2, seed=0))
    trace = tmp_path / "trace.csv"
    code, rep = run_json(capsys, "fit", "--target", target, "--steps", 60, "--trace", trace,
                         "--out", tmp_path / "fit.json")
    assert code == 0 and rep["loss_ratio"] < 1e-2
    with open(trace) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 61
    inv = [float(r["invariant"]) for r in rows]
    assert max(inv) - min(inv) < 1e-6
    formats.load_params(tmp_path / "fit.json")


def test_fit_at_target(tmp_path, capsys):
    target = tmp_path / "target.json"
    formats.save_params(target, BcopParams.random(2, 2, seed=0))
    code, rep = run_json(capsys, "fit", "--target", target, "--init", target, "--steps", 3)
    assert code == 0 and rep["final_loss"] < 1e-20


def test_bench_empty_and_errors(tmp_path, capsys, monkeypatch):
    code, rep = run_json(capsys, "bench", "--repeats", 0, "--out", tmp_path / "b.csv")
    assert code == 0 and rep == {"ratios": {}, "cells": 0}
    assert (tmp_path / "b.csv").read_text().strip() == "method,channels,spatial,repeat,seconds"
    assert run(capsys, "bench", "--methods", "bogus", "--repeats", 1)[0] == 2


def test_bench_table_shape(capsys, tmp_path):
    code, rep = run_json(capsys, "bench", "--methods", "bcop,ossn", "--channels", 2, "--spatial", "4,8",
                         "--repeats", 2, "--out", tmp_path / "b.csv")
    assert code == 0 and rep["cells"] == 8
    assert set(rep["ratios"]) == {"bcop/c=2", "ossn/c=2"}


def test_thread_env(monkeypatch, capsys):
    monkeypatch.setenv("ORTHOCONV_THREADS", "3")
    assert cli.parallel_map(lambda i: i * i, range(20)) == [i * i for i in range(20)]
    monkeypatch.setenv("ORTHOCONV_THREADS", "0")
    assert run(capsys, "counterexample", "zero-pad", "--samples", 2)[0] == 2


def test_thread_count_does_not_change_reports(monkeypatch, capsys):
    reports = []
    for threads in ("1", "4"):
        monkeypatch.setenv("ORTHOCONV_THREADS", threads)
        reports.append(run_json(capsys, "counterexample", "zero-pad", "--samples", 12)[1])
    assert reports[0] == reports[1]


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "orthoconv.cli", "counterexample", "2d-incomplete"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout)["a1_a2t_frobenius"] == 0.5
