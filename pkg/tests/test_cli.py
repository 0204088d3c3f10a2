"""Command line verbs, exit codes and reproducible output."""
import json
import subprocess
import sys

import numpy as np
import pytest

from mmspace.cli import dumps, main
from mmspace.core import space_to_dict
from mmspace.holder import plane_fixture


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def line_files(tmp_path):
    s = {"points": [[0.0], [1.0], [2.0], [3.0]], "weights": [0.25] * 4, "base": 0}
    host = write(tmp_path / "host.json", s)
    mu = write(tmp_path / "mu.json", [0.25] * 4)
    nu = write(tmp_path / "nu.json", {"weights": [0.25, 0.25, 0.25, 0.0]})
    return host, mu, nu


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_flat_identical(line_files, capsys):
    host, mu, _ = line_files
    code, out, _ = run(["flat", "--host", host, "--mu", mu, "--nu", mu], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["verb"] == "flat" and rep["result"]["value"] == 0.0


def test_flat_with_L_r(line_files, capsys):
    host, mu, nu = line_files
    code, out, _ = run(["flat", "--host", host, "--mu", mu, "--nu", nu, "--L", "1", "--r", "5"], capsys)
    res = json.loads(out)["result"]
    assert code == 0 and res["value"] == pytest.approx(0.25, abs=1e-9)
    assert all(a["holds"] for a in res["assertions"])


def test_malformed_json(tmp_path, line_files, capsys):
    _, mu, _ = line_files
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    code, _, err = run(["flat", "--host", str(bad), "--mu", mu, "--nu", mu], capsys)
    assert code == 2 and "bad.json" in err


def test_missing_file_and_wrong_length(tmp_path, line_files, capsys):
    host, _, _ = line_files
    short = write(tmp_path / "short.json", [1.0, 0.0])
    assert run(["flat", "--host", host, "--mu", short, "--nu", short], capsys)[0] == 2
    assert run(["flat", "--host", str(tmp_path / "nope.json"), "--mu", short, "--nu", short], capsys)[0] == 2


def test_invalid_metric(tmp_path, capsys):
    host = write(tmp_path / "h.json", {"dist": [[0, 1, 5], [1, 0, 1], [5, 1, 0]]})
    w = write(tmp_path / "w.json", [1, 1, 1])
    assert run(["flat", "--host", host, "--mu", w, "--nu", w], capsys)[0] == 2


def test_hz(tmp_path, capsys):
    host = write(tmp_path / "h.json", {"points": [[0.0], [3.0]]})
    A = write(tmp_path / "a.json", [0])
    B = write(tmp_path / "b.json", [0, 1])
    code, out, _ = run(["hz", "--host", host, "--left", A, "--right", B], capsys)
    assert code == 0 and json.loads(out)["result"]["value"] == pytest.approx(1 / 3)


def test_generate_reproducible(tmp_path, capsys):
    args = ["generate", "scattered_dust_curve", "--seed", "5", "--param", "atoms=101"]
    a = run(args, capsys)[1]
    b = run(args, capsys)[1]
    assert a == b
    assert run(["generate", "scattered_dust_curve", "--seed", "6", "--param", "atoms=101"], capsys)[1] != a
    assert run(["generate", "segment", "--param", "atoms"], capsys)[0] == 2


def test_report_and_figure(tmp_path, capsys):
    out = tmp_path / "gen.json"
    assert run(["generate", "four_corner_cantor", "--out", str(out)], capsys)[0] == 0
    rep = json.loads(out.read_text())
    assert len(rep["result"]["points"]) == 256
    assert out.with_suffix(".png").stat().st_size > 0


@pytest.fixture(scope="module")
def plane_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("plane")
    X, C, G = plane_fixture(spacing=1 / 32)
    sp = write(d / "plane.json", space_to_dict(X))
    c = write(d / "C.json", C.tolist())
    return sp, c


def test_holder_build(plane_files, capsys, tmp_path):
    sp, c = plane_files
    out = tmp_path / "holder.json"
    code, _, _ = run(["holder-build", "--space", sp, "--C", c, "--G", c, "--depth", "2", "--out", str(out)], capsys)
    res = json.loads(out.read_text())["result"]
    assert code == 0 and res["passed"] and res["n_bad_cubes"] == 0
    assert out.with_suffix(".png").exists()


def test_holder_certificate_failure(plane_files, capsys, monkeypatch):
    import mmspace.holder as H
    sp, c = plane_files
    real = H.build
    monkeypatch.setattr(H, "build", lambda *a, **k: (_ for _ in ()).throw(
        H.ConstructionInvalid("forced", real(*a, **k))))
    code, out, err = run(["holder-build", "--space", sp, "--C", c, "--G", c, "--depth", "1"], capsys)
    assert code == 3 and "forced" in err
    assert json.loads(out)["result"]["error"] == "forced"


def test_doubling_and_density(tmp_path, capsys):
    x = np.linspace(0, 1, 101)
    sp = write(tmp_path / "seg.json", {"points": x[:, None].tolist(), "weights": [0.01] * 101, "base": 50})
    code, out, _ = run(["doubling", "--space", sp, "--scales", "0.1,0.2"], capsys)
    assert code == 0 and json.loads(out)["result"]["M"] <= 2
    code, out, _ = run(["density", "--space", sp, "--scales", "0.1,0.2", "--dim", "1", "--points", "50"], capsys)
    assert code == 0
    assert run(["density", "--space", sp, "--scales", "a,b", "--dim", "1"], capsys)[0] == 2


def test_strict_json():
    text = dumps({"a": float("inf"), "b": np.float64(1.5), "c": np.arange(2)})
    assert json.loads(text) == {"a": "inf", "b": 1.5, "c": [0, 1]}


def test_console_script_version():
    r = subprocess.run([sys.executable, "-m", "mmspace.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()


def test_generated_report_feeds_scan(tmp_path, capsys):
    gen = tmp_path / "cantor.json"
    assert run(["generate", "four_corner_cantor", "--out", str(gen), "--no-figures"], capsys)[0] == 0
    code, out, _ = run(["scan", "--space", str(gen), "--n", "1", "--n-points", "2"], capsys)
    summary = json.loads(out)["result"]["summary"]
    assert code == 0 and len(summary) == 2
