import subprocess
import sys

import numpy as np
import pytest

from binattn.cli import pgm_bytes, run
from binattn.tensor_io import DenseMatrix, read_tensor, write_tensor


def pgm_pixels(data: bytes) -> np.ndarray:
    magic, dims, maxval, rest = data.split(b"\n", 3)
    assert magic == b"P5" and maxval == b"255"
    w, h = map(int, dims.split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)


def test_exit_codes(capsys):
    assert run([]) == 2
    assert run(["selftest", "--bogus"]) == 2
    assert run(["nonsense"]) == 2
    assert run(["selftest", "--force-fail"]) == 1
    assert run(["fidelity", "--n", "8", "--d", "4", "--force-fail"]) == 1
    assert run(["fidelity", "--n", "8", "--d", "4", "--bias", "rel2d"]) == 1
    assert run(["fidelity", "--q", "missing.batf"]) == 1


def test_selftest_passes(capsys):
    assert run(["selftest", "--seed", "7"]) == 0
    out = capsys.readouterr().out
    assert "15/15 checks passed" in out and "FAIL" not in out


def test_verify_theorem(capsys, tmp_path):
    out_csv = tmp_path / "t.csv"
    assert run(["verify-theorem1", "--dim", "2", "--rho", "0.5", "--samples", "100000", "--output", str(out_csv)]) == 0
    assert capsys.readouterr().out.rstrip().endswith("PASS")
    assert out_csv.read_text().splitlines()[0] == "i,j,empirical,analytic"
    assert run(["verify-theorem1", "--rho", "1.5"]) == 1


def test_fidelity_report(capsys, tmp_path):
    path = tmp_path / "f.csv"
    assert run(["fidelity", "--n", "49", "--d", "16", "--bias", "rel2d", "--topk", "5", "--output", str(path)]) == 0
    metrics = dict(line.split(",") for line in path.read_text().splitlines()[1:])
    assert set(metrics) >= {"cos_sim", "relative_l1", "rmse", "precision@5", "bops", "total_ops"}
    assert int(metrics["bops"]) == 2 * 49 * 49 * 16
    assert float(metrics["cos_sim"]) > 0


def test_demo_single_token(tmp_path, capsys):
    assert run(["demo", "--n", "1", "--d", "4", "--output", str(tmp_path)]) == 0
    for name in ("p_ref", "p_bin"):
        assert pgm_pixels((tmp_path / f"{name}.pgm").read_bytes()).tolist() == [[255]]
        assert read_tensor(tmp_path / f"{name}.batf").data.tolist() == [[1.0]]
    assert (tmp_path / "report.csv").exists()


def test_demo_from_files(tmp_path, capsys):
    rng = np.random.default_rng(0)
    q = rng.standard_normal((6, 5))
    q[3] = q[1]
    k = np.tile(rng.standard_normal(5), (6, 1))
    k[0] = -k[0]
    v = rng.standard_normal((6, 5))
    paths = []
    for name, m in (("q", q), ("k", k), ("v", v)):
        paths += [f"--{name}", str(tmp_path / f"{name}.batf")]
        write_tensor(tmp_path / f"{name}.batf", DenseMatrix(m))
    out = tmp_path / "out"
    assert run(["demo", *paths, "--output", str(out)]) == 0
    pix = pgm_pixels((out / "p_bin.pgm").read_bytes())
    assert pix.shape == (6, 6)
    assert np.array_equal(pix[1], pix[3])
    # keys 1..5 are identical, so their columns tie within every row
    assert np.all(pix[:, 1:] == pix[:, [1]])


def test_pgm_identical_keys_white():
    assert np.all(pgm_pixels(pgm_bytes(np.full((3, 3), 1 / 3))) == 255)


def test_gaussian_demo_correlated(tmp_path, capsys):
    assert run(["demo", "--n", "64", "--d", "32", "--output", str(tmp_path)]) == 0
    rows = dict(line.split(",") for line in (tmp_path / "report.csv").read_text().splitlines()[1:])
    assert float(rows["cos_sim"]) > 0


def _outputs(tmp_path, tag, extra):
    d = tmp_path / tag
    d.mkdir()
    run(["demo", "--n", "20", "--d", "8", "--bias", "dense", "--output", str(d / "demo"), *extra])
    run(["fidelity", "--n", "20", "--d", "8", "--bias", "rel1d", "--output", str(d / "fid.csv"), *extra])
    run(["selftest", "--output", str(d / "self.csv"), *extra])
    run(["verify-theorem1", "--samples", "200000", "--output", str(d / "thm.csv"), *extra])
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_outputs_byte_identical(tmp_path, capsys):
    a = _outputs(tmp_path, "a", ["--seed", "3"])
    b = _outputs(tmp_path, "b", ["--seed", "3", "--threads", "0"])
    c = _outputs(tmp_path, "c", ["--seed", "3", "--threads", "1"])
    assert len(a) == 10
    assert a == b == c


def test_seed_env_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("BINATTN_SEED", "11")
    run(["fidelity", "--n", "9", "--d", "4", "--output", str(tmp_path / "env.csv")])
    run(["fidelity", "--n", "9", "--d", "4", "--seed", "11", "--output", str(tmp_path / "flag.csv")])
    run(["fidelity", "--n", "9", "--d", "4", "--seed", "12", "--output", str(tmp_path / "other.csv")])
    env = (tmp_path / "env.csv").read_bytes()
    assert env == (tmp_path / "flag.csv").read_bytes()
    assert env != (tmp_path / "other.csv").read_bytes()


def test_bench_small(tmp_path, capsys):
    path = tmp_path / "b.csv"
    assert run(["bench", "--sizes", "32", "--d", "64", "--reps", "5", "--backend", "both", "--csv", str(path)]) == 0
    lines = path.read_text().splitlines()
    assert lines[0] == "kernel,N,M,d,median_ns,ops,ops_per_sec,backend"
    assert "speedup" in capsys.readouterr().out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "binattn"], capture_output=True, text=True)
    assert r.returncode == 2 and "usage" in r.stderr
    r = subprocess.run([sys.executable, "-m", "binattn", "selftest"], capture_output=True, text=True)
    assert r.returncode == 0
