import hashlib
import json
import os

import numpy as np
import pytest

from filterstab.cli import main

MU = "[0.25, 0.40, 0.30, 0.05]"
NU = "[0.1, 0.2, 0.3, 0.4]"


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    return str(path)


def test_analyze_benchmark_model(tmp_path, capsys):
    cfg = _write(tmp_path / "m.toml",
                 '[model]\nbenchmark_epsilon = 0.0\nbenchmark_h = "h1"\n')
    assert main(["analyze", cfg, "--out", str(tmp_path)]) == 0
    assert "detectable: false" in capsys.readouterr().out
    doc = json.loads((tmp_path / "structure.json").read_text())
    assert doc["observable_dim"] == 2
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    names = {o["path"] for o in manifest["outputs"]}
    assert "structure.json" in names


def test_analyze_detectable_non_observable(tmp_path, capsys):
    cfg = _write(tmp_path / "m.toml",
                 '[model]\nbenchmark_epsilon = 0.0\nbenchmark_h = "h2"\n')
    assert main(["analyze", cfg, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "observable: false" in out and "detectable: true" in out


def test_analyze_rejects_bad_generator(tmp_path, capsys):
    cfg = _write(tmp_path / "m.toml",
                 "[model]\nA = [[-1.0, 0.5], [2.0, -2.0]]\nH = [1.0, -1.0]\n")
    assert main(["analyze", cfg, "--out", str(tmp_path)]) == 2
    assert "sums to" in capsys.readouterr().err


def test_analyze_missing_file(tmp_path):
    assert main(["analyze", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2


def test_divergence_equal_priors_flat_zero(tmp_path):
    cfg = _write(tmp_path / "d.toml", f"""
T = 0.5
dt = 0.05
n_paths = 8
seed = 1
mu = {NU}
nu = {NU}
[model]
benchmark_epsilon = 0.1
benchmark_h = "h3"
""")
    assert main(["divergence", cfg, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "divergence_case0.csv").read_text().strip().split("\n")
    vals = [float(r.split(",")[1]) for r in lines[1:]]
    assert max(vals) <= 1e-12
    svg = (tmp_path / "divergence.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg
    assert "http" not in svg.replace("http://www.w3.org/2000/svg", "")


def test_divergence_multi_case(tmp_path):
    cfg = _write(tmp_path / "d.toml", f"""
T = 1.0
dt = 0.02
n_paths = 20
seed = 2
mu = {MU}
nu = {NU}

[[case]]
label = "a"
[case.model]
benchmark_epsilon = 0.0
benchmark_h = "h3"

[[case]]
label = "b"
[case.model]
benchmark_epsilon = 0.1
benchmark_h = "h3"
""")
    assert main(["divergence", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "divergence_a.csv").exists()
    assert (tmp_path / "divergence_b.csv").exists()


def test_divergence_invalid_paths(tmp_path, capsys):
    cfg = _write(tmp_path / "d.toml", f"""
T = 1.0
dt = 0.02
n_paths = 0
mu = {MU}
nu = {NU}
[model]
benchmark_epsilon = 0.1
benchmark_h = "h3"
""")
    assert main(["divergence", cfg, "--out", str(tmp_path)]) == 2


def test_backward_command(tmp_path, capsys):
    cfg = _write(tmp_path / "b.toml", f"""
T = 1.0
dt = 0.02
n_paths = 80
seed = 4
mu = {MU}
nu = {NU}
outer_paths = 25
inner_paths = 25
[model]
benchmark_epsilon = 0.1
benchmark_h = "h3"
""")
    assert main(["backward", cfg, "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "backward.json").read_text())
    assert rep["jensen_pass"] is True
    assert len(rep["checkpoints"]) >= 3


def test_reproduce_table1_quick_outputs(tmp_path, capsys):
    code = main(["reproduce-table1", "--quick", "--seed", "7",
                 "--out", str(tmp_path)])
    assert code in (0, 4)
    rows = json.loads((tmp_path / "table1.json").read_text())
    assert [r["h_name"] for r in rows] == ["h1", "h2", "h3", "h1", "h3"]
    assert rows[0]["verdict"] == "Not detectable"
    assert (tmp_path / "figure1.svg").exists()
    out = capsys.readouterr().out
    assert "model property" in out
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    for entry in manifest["outputs"]:
        digest = hashlib.sha256((tmp_path / entry["path"]).read_bytes()).hexdigest()
        assert digest == entry["sha256"]
