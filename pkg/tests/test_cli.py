import json
import subprocess
import sys
import time

import numpy as np
import pytest

from gwdesign import cli
from gwdesign.config import ExperimentConfig
from gwdesign.io import read_nodal_csv, read_wells_csv

TINY_YAML = """\
mesh: {fine: [24, 12], coarse: [12, 6]}
prior: {truth_n_kl: 32, n_kl: 16}
chain: {n_fine_samples: 500, burn_in: 100}
replicates: 3
seed: 11
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.yaml").write_text(TINY_YAML)
    return d


@pytest.fixture(scope="module")
def truth_dir(workdir):
    out = workdir / "truth"
    assert cli.main(["truth", "--config", str(workdir / "tiny.yaml"), "--output-dir", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def round_dir(workdir, truth_dir):
    out = workdir / "round"
    code = cli.main(["round", "--config", str(workdir / "tiny.yaml"), "--truth-dir", str(truth_dir),
                     "--output-dir", str(out), "--strategy", "both"])
    assert code == 0
    return out


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


class TestTruth:
    def test_bundle(self, truth_dir):
        man = manifest(truth_dir)
        names = [a["path"] for a in man["artifacts"]]
        assert len(names) == 6
        assert set(names) == {"kl_basis.npz", "truth.json", "conductivity.csv", "head.csv",
                              "flux_norm.csv", "influence.csv"}
        assert all((truth_dir / n).exists() for n in names)
        assert man["seed"] == 11 and man["version"] and "basis" in man["timings"]
        truth = json.loads((truth_dir / "truth.json").read_text())
        assert len(truth["theta"]) == 32 and truth["q_true"] > 0
        nodes, omega = read_nodal_csv(truth_dir / "influence.csv")
        assert nodes.shape == (325, 2) and omega.min() >= -1e-9 and omega.max() <= 1 + 1e-9

    def test_deterministic(self, workdir, truth_dir):
        again = workdir / "truth_again"
        assert cli.main(["truth", "--config", str(workdir / "tiny.yaml"), "--output-dir", str(again)]) == 0
        for name in ("conductivity.csv", "head.csv", "flux_norm.csv", "influence.csv", "truth.json"):
            assert (again / name).read_bytes() == (truth_dir / name).read_bytes()

    def test_seed_flag_changes_truth(self, workdir, truth_dir):
        other = workdir / "truth_seed"
        assert cli.main(["truth", "--config", str(workdir / "tiny.yaml"), "--seed", "12",
                         "--output-dir", str(other)]) == 0
        assert (other / "conductivity.csv").read_bytes() != (truth_dir / "conductivity.csv").read_bytes()

    def test_missing_config(self, tmp_path, capsys):
        code = cli.main(["truth", "--config", str(tmp_path / "nope.yaml"), "--output-dir", str(tmp_path / "o")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_malformed_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("mesh: {fine: [24, 12]\n  oops")
        assert cli.main(["truth", "--config", str(bad), "--output-dir", str(tmp_path / "o")]) == 2
        typo = tmp_path / "typo.yaml"
        typo.write_text("priors: {n_kl: 3}\n")
        assert cli.main(["truth", "--config", str(typo), "--output-dir", str(tmp_path / "o")]) == 2
        assert "unknown" in capsys.readouterr().err

    def test_unwritable_output(self, workdir, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code = cli.main(["truth", "--config", str(workdir / "tiny.yaml"), "--output-dir", str(blocker / "sub")])
        assert code == 2


class TestRound:
    def test_artifacts(self, round_dir):
        man = manifest(round_dir)
        paths = {a["path"] for a in man["artifacts"]}
        for c in (0, 1):
            assert f"chain_{c}.jsonl" in paths
            lines = (round_dir / f"chain_{c}.jsonl").read_text().splitlines()
            assert len(lines) == 400
            assert {"theta", "loglik_fine", "loglik_coarse", "qoi", "accepted"} <= set(json.loads(lines[0]))
        for f in ("head", "flux_norm", "influence", "conductivity"):
            assert {f"{f}_mean.csv", f"{f}_std.csv"} <= paths
        assert all((round_dir / p).exists() for p in paths)
        assert man["qoi"]["n_samples"] == 800

    def test_modes_tagged_and_different(self, round_dir):
        modes = {a["mode"]: a["path"] for a in manifest(round_dir)["artifacts"] if a.get("kind") == "acquisition"}
        assert modes == {"vanilla": "acquisition_vanilla.csv", "dual_weighted": "acquisition_dual_weighted.csv"}
        v = read_wells_csv(round_dir / "selected_wells_vanilla.csv")
        d = read_wells_csv(round_dir / "selected_wells_dual_weighted.csv")
        assert v.shape == d.shape == (8, 2)
        assert not np.array_equal(v, d)

    def test_single_strategy(self, workdir, truth_dir):
        out = workdir / "round_vanilla"
        assert cli.main(["round", "--config", str(workdir / "tiny.yaml"), "--truth-dir", str(truth_dir),
                         "--output-dir", str(out), "--strategy", "vanilla"]) == 0
        acq = [a for a in manifest(out)["artifacts"] if a.get("kind") == "acquisition"]
        assert [a["mode"] for a in acq] == ["vanilla"]
        assert not (out / "acquisition_dual_weighted.csv").exists()

    def test_wells_file(self, workdir, truth_dir):
        wells = workdir / "wells.csv"
        wells.write_text("x,y\n0.5,0.5\n1.5,0.5\n1.0,0.25\n")
        out = workdir / "round_wells"
        assert cli.main(["round", "--config", str(workdir / "tiny.yaml"), "--truth-dir", str(truth_dir),
                         "--output-dir", str(out), "--wells", str(wells), "--strategy", "dual"]) == 0
        obs = json.loads((out / "observations.json").read_text())
        assert obs["wells"] == [[0.5, 0.5], [1.5, 0.5], [1.0, 0.25]]

    def test_truncated_chain_file(self, workdir, truth_dir, round_dir, tmp_path, capsys):
        out = tmp_path / "crashed"
        out.mkdir()
        lines = (round_dir / "chain_0.jsonl").read_text().splitlines(keepends=True)
        (out / "chain_0.jsonl").write_text("".join(lines[:57]) + lines[57][:20])
        code = cli.main(["round", "--config", str(workdir / "tiny.yaml"), "--truth-dir", str(truth_dir),
                         "--output-dir", str(out)])
        assert code == 4
        assert "chain_0.jsonl" in capsys.readouterr().err
        (out / "chain_0.jsonl").write_text("".join(lines[:57]))
        assert cli.main(["round", "--config", str(workdir / "tiny.yaml"), "--truth-dir", str(truth_dir),
                         "--output-dir", str(out)]) == 4

    def test_incompatible_truth(self, workdir, truth_dir, tmp_path):
        other = tmp_path / "other.yaml"
        other.write_text(TINY_YAML.replace("fine: [24, 12]", "fine: [20, 10]"))
        code = cli.main(["round", "--config", str(other), "--truth-dir", str(truth_dir),
                         "--output-dir", str(tmp_path / "o")])
        assert code == 3


class TestReplicate:
    def test_reproducible_aggregate(self, workdir):
        outs = []
        for name, parallel in (("rep_a", "1"), ("rep_b", "2")):
            out = workdir / name
            assert cli.main(["replicate", "--config", str(workdir / "tiny.yaml"), "--output-dir", str(out),
                             "--parallel", parallel]) == 0
            outs.append(out)
        ref = (outs[0] / "aggregate.json").read_bytes()
        assert all((o / "aggregate.json").read_bytes() == ref for o in outs[1:])
        summary = json.loads(ref)
        assert summary["n_replicates"] == 3
        for key in ("median_mse_reduction_pct", "median_variance_reduction_pct", "median_density_improvement_pct",
                    "mse_worsened_count"):
            assert set(summary[key]) == {"vanilla", "dual_weighted"}
        for r in range(3):
            assert (outs[0] / f"rep_{r:03d}" / "result.json").exists()
            rows = (outs[0] / f"rep_{r:03d}" / "qoi.csv").read_text().splitlines()
            assert rows[0] == "sample,initial,vanilla,dual_weighted" and len(rows) == 801

    def test_single_desk_replicate_is_quick(self, workdir, tmp_path):
        t0 = time.perf_counter()
        assert cli.main(["replicate", "--config", str(workdir / "tiny.yaml"), "--replicates", "1",
                         "--output-dir", str(tmp_path / "one")]) == 0
        assert time.perf_counter() - t0 < 60

    def test_zero_replicates(self, workdir, tmp_path):
        assert cli.main(["replicate", "--config", str(workdir / "tiny.yaml"), "--replicates", "0",
                         "--output-dir", str(tmp_path / "z")]) == 2

    def test_all_failed(self, workdir, tmp_path, monkeypatch):
        def always_fail(config, n, seed, parallel=1):
            return [{"replicate": r, "master_seed": seed, "failed": True, "stage": "truth", "error": "x"}
                    for r in range(n)]

        monkeypatch.setattr(cli, "run_replicates", always_fail)
        out = tmp_path / "failed"
        assert cli.main(["replicate", "--config", str(workdir / "tiny.yaml"), "--output-dir", str(out)]) == 5
        assert not (out / "aggregate.json").exists()
        assert (out / "rep_000" / "result.json").exists()


def test_init_config_roundtrip(tmp_path):
    path = tmp_path / "desk.yaml"
    assert cli.main(["init-config", "--desk", "--output", str(path)]) == 0
    assert ExperimentConfig.load(path) == ExperimentConfig.desk()


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "gwdesign", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
