import json
from pathlib import Path

import pytest

from evosys.cli import ManifestError, bundled_manifest, load_manifest, main

SINGLETON = bundled_manifest("singleton-attractor")


def tree_bytes(root: Path) -> dict:
    # summary.json is written by the report command, not by run
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "summary.json"}


@pytest.fixture(scope="module")
def singleton_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("single") / "out"
    assert main(["run", str(SINGLETON), "--out", str(out)]) == 0
    return out


def test_singleton_golden_pass(singleton_out, capsys):
    rep = json.loads((singleton_out / "verify" / "tracking_report.json").read_text())
    assert rep["pass"] and rep["n_pass"] == rep["n_tests"] == 4
    net = json.loads((singleton_out / "net" / "net.json").read_text())
    assert len(net["members"]) == 1
    sec = json.loads((singleton_out / "section" / "section.json").read_text())
    assert sec["passed"]
    assert main(["report", str(singleton_out)]) == 0
    assert "[verify] tracking: PASS" in capsys.readouterr().out


def test_rerun_skips_and_is_byte_identical(singleton_out, tmp_path, capsys):
    before = tree_bytes(singleton_out)
    assert main(["run", str(SINGLETON), "--out", str(singleton_out)]) == 0
    assert "up to date" in capsys.readouterr().out
    assert tree_bytes(singleton_out) == before
    fresh = tmp_path / "again"
    assert main(["run", str(SINGLETON), "--out", str(fresh)]) == 0
    assert tree_bytes(fresh) == before


def test_empty_pipeline_is_ok(tmp_path):
    m = tmp_path / "m.toml"
    m.write_text('seed = 1\n[system]\nsolver = "rds"\nM = 8\ndt = 0.01\n[symbol]\nnonlinearity = "linear"\n')
    assert main(["run", str(m), "--out", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize("text", [
    "seed = 1\n[system\nsolver = 'rds'\n",
    "seed = 1\n[system]\nsolver = 'heat'\n",
    "seed = 1\n[system]\nsolver = 'rds'\nbogus = 3\n",
    "seed = 1\n[system]\nsolver = 'rds'\n[pipeline.net]\nepsilon = 0.1\n",
    "seed = 1\n[system]\nsolver = 'rds'\nnu = 1.0\n",
])
def test_corrupted_manifest_fails_without_artifacts(tmp_path, text, capsys):
    m = tmp_path / "bad.toml"
    m.write_text(text)
    out = tmp_path / "o"
    assert main(["run", str(m), "--out", str(out)]) == 1
    assert "error" in capsys.readouterr().err
    assert not out.exists() or not any(out.iterdir())


def test_validation_points_at_the_line(tmp_path):
    m = tmp_path / "bad.toml"
    m.write_text("seed = 1\n[system]\nsolver = 'rds'\nbogus = 1.0\n")
    with pytest.raises(ManifestError, match="line 4"):
        load_manifest(m)
    m.write_text("seed = 1\n[system]\nsolver = 'rds'\ndt = -1.0\n")
    with pytest.raises(ManifestError, match="dt must be positive"):
        load_manifest(m)


def test_classifier_outputs(tmp_path, capsys):
    out = tmp_path / "cf"
    assert main(["run", "constant-force", "--out", str(out)]) == 0
    assert "translation bounded: yes; normal: yes" in capsys.readouterr().out
    c = json.loads((out / "classify_force" / "classification.json").read_text())
    assert c["translation_bounded"] and c["normal"]
    assert (out / "classify_force" / "defect.csv").exists()


def test_subcommand_flags_mirror_manifest(tmp_path, capsys):
    out = tmp_path / "sub"
    rc = main(["classify-force", "--solver", "rds", "--M", "8", "--dt", "0.01", "--force", "spike_train",
               "--amplitude", "1.0", "--out", str(out)])
    assert rc == 0
    assert "normal: no" in capsys.readouterr().out


def test_basis_mismatch_is_a_validation_error(singleton_out, tmp_path):
    rc = main(["verify-tracking", "--manifest", str(SINGLETON), "--M", "8", "--net", str(singleton_out / "net" / "net"),
               "--out", str(tmp_path / "v")])
    assert rc == 1


def test_unknown_flag_and_missing_solver(tmp_path):
    assert main(["run", "--frobnicate"]) == 1
    assert main(["classify-force", "--out", str(tmp_path / "x")]) == 1
