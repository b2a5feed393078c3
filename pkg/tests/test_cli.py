import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

from featcl.cli import main

FAST_FLAGS = [
    "--epochs", "3", "--hidden-width", "8", "--lr", "1e-3", "--batch-size", "32",
]


def checksum_tree(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    code = main([
        "gen", "--categories", "6", "--dim", "8", "--instances", "4", "--samples", "5",
        "--seed", "42", "--layout", "equal:2", "--out", str(out),
    ])
    assert code == 0
    return out


class TestGen:
    def test_writes_manifest_and_files(self, bench):
        manifest = json.loads((bench / "manifest.json").read_text())
        assert len(manifest["sequences"]) == 3
        assert all(len(c) == 2 for c in manifest["sequences"])
        assert (bench / "train.fcl").exists() and (bench / "val.fcl").exists()

    def test_rerun_is_byte_identical(self, bench, tmp_path):
        again = tmp_path / "again"
        main([
            "gen", "--categories", "6", "--dim", "8", "--instances", "4", "--samples", "5",
            "--seed", "42", "--layout", "equal:2", "--out", str(again),
        ])
        assert checksum_tree(again) == checksum_tree(bench)

    def test_hows_long_layout(self, tmp_path):
        out = tmp_path / "hows"
        code = main([
            "gen", "--categories", "25", "--dim", "4", "--instances", "2", "--samples", "2",
            "--seed", "1", "--layout", "hows-long", "--out", str(out),
        ])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert [len(c) for c in manifest["sequences"]] == [3] + [2] * 11

    def test_invalid_spec_exits_3(self, tmp_path, capsys):
        code = main([
            "gen", "--categories", "6", "--dim", "8", "--instances", "4", "--samples", "5",
            "--layout", "equal:5", "--out", str(tmp_path / "x"),
        ])
        assert code == 3
        assert "featcl:" in capsys.readouterr().err


class TestTrain:
    def test_train_and_rerun_identical_csvs(self, bench, tmp_path):
        runs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            code = main([
                "train", "--manifest", str(bench / "manifest.json"), "--mode", "recall",
                "--seed", "1", "--out", str(out), *FAST_FLAGS,
            ])
            assert code == 0
            runs.append(out)
        for csv_name in ("accuracy_matrix.csv", "variance_trace.csv"):
            assert (runs[0] / csv_name).read_bytes() == (runs[1] / csv_name).read_bytes()
        assert (runs[0] / "report.json").read_bytes() == (runs[1] / "report.json").read_bytes()

    def test_outputs_stay_inside_out_dir(self, bench, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = tmp_path / "run"
        before = set(p for p in workdir.rglob("*"))
        code = main([
            "train", "--manifest", str(bench / "manifest.json"), "--mode", "naive",
            "--seed", "2", "--out", str(out), *FAST_FLAGS,
        ])
        assert code == 0
        assert set(p for p in workdir.rglob("*")) == before
        assert (out / "resolved_config.json").exists()
        assert (out / "checkpoints" / "seq_002.ckpt").exists()

    def test_zero_lr_accuracy_equals_post_init(self, bench, tmp_path):
        out = tmp_path / "lr0"
        code = main([
            "train", "--manifest", str(bench / "manifest.json"), "--mode", "recall",
            "--seed", "3", "--out", str(out), "--lr", "0", "--epochs", "2",
            "--hidden-width", "8",
        ])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        # an untrained model's accuracy is whatever the random heads give;
        # rerunning with more zero-lr epochs must not change it
        out2 = tmp_path / "lr0b"
        main([
            "train", "--manifest", str(bench / "manifest.json"), "--mode", "recall",
            "--seed", "3", "--out", str(out2), "--lr", "0", "--epochs", "5",
            "--hidden-width", "8",
        ])
        report2 = json.loads((out2 / "report.json").read_text())
        assert report["overall_accuracy"] == report2["overall_accuracy"]

    def test_repeats_make_seed_dirs(self, bench, tmp_path):
        out = tmp_path / "multi"
        code = main([
            "train", "--manifest", str(bench / "manifest.json"), "--mode", "recall",
            "--seed", "5", "--repeats", "2", "--out", str(out), *FAST_FLAGS,
        ])
        assert code == 0
        assert (out / "seed_5" / "report.json").exists()
        assert (out / "seed_6" / "report.json").exists()

    def test_bad_mode_exits_3(self, bench, tmp_path):
        code = main([
            "train", "--manifest", str(bench / "manifest.json"), "--mode", "bogus",
            "--out", str(tmp_path / "x"),
        ])
        assert code == 3

    def test_missing_manifest_exits_4(self, tmp_path):
        code = main([
            "train", "--manifest", str(tmp_path / "none.json"), "--mode", "recall",
            "--out", str(tmp_path / "x"),
        ])
        assert code == 4

    def test_config_file_and_env_precedence(self, bench, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs_per_sequence": 2, "hidden_width": 8,
                                   "learning_rate": 1e-3, "batch_size": 32}))
        monkeypatch.setenv("FEATCL_EPOCHS_PER_SEQUENCE", "7")  # overridden by config file
        monkeypatch.setenv("FEATCL_SEED", "9")  # survives (not in config or flags)
        out = tmp_path / "cfgrun"
        code = main([
            "train", "--manifest", str(bench / "manifest.json"), "--mode", "recall",
            "--config", str(cfg), "--out", str(out),
        ])
        assert code == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["epochs_per_sequence"] == 2
        assert resolved["seed"] == 9

    def test_unknown_config_key_exits_3(self, bench, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"no_such_field": 1}))
        code = main([
            "train", "--manifest", str(bench / "manifest.json"), "--config", str(cfg),
            "--out", str(tmp_path / "x"),
        ])
        assert code == 3


class TestEval:
    def test_eval_checkpoint(self, bench, tmp_path, capsys):
        out = tmp_path / "run"
        main([
            "train", "--manifest", str(bench / "manifest.json"), "--mode", "recall",
            "--seed", "1", "--out", str(out), *FAST_FLAGS,
        ])
        evald = tmp_path / "eval"
        code = main([
            "eval", "--model", str(out / "checkpoints" / "seq_002.ckpt"),
            "--data", str(bench / "val.fcl"), "--manifest", str(bench / "manifest.json"),
            "--out", str(evald),
        ])
        assert code == 0
        payload = json.loads((evald / "eval.json").read_text())
        assert 0.0 <= payload["overall_accuracy"] <= 1.0
        assert len(payload["per_sequence_accuracy"]) == 3


class TestCompare:
    def run_once(self, bench, out, seed="1", mode="recall"):
        return main([
            "train", "--manifest", str(bench / "manifest.json"), "--mode", mode,
            "--seed", seed, "--out", str(out), *FAST_FLAGS,
        ])

    def test_compare_run_with_itself(self, bench, tmp_path, capsys):
        run = tmp_path / "runA"
        assert self.run_once(bench, run) == 0
        out = tmp_path / "cmp"
        code = main(["compare", str(run), str(run), "--out", str(out)])
        assert code == 0
        rows = (out / "comparison.csv").read_text().splitlines()
        header = rows[0].split(",")
        assert header[0] == "sequence"
        for row in rows[1:]:
            cells = row.split(",")
            assert cells[1] == cells[3]  # identical means
            assert float(cells[2]) == 0.0 and float(cells[4]) == 0.0  # zero std

    def test_multi_seed_aggregation(self, bench, tmp_path, capsys):
        out = tmp_path / "multi"
        main([
            "train", "--manifest", str(bench / "manifest.json"), "--mode", "recall",
            "--seed", "1", "--repeats", "2", "--out", str(out), *FAST_FLAGS,
        ])
        cmp_out = tmp_path / "cmp"
        code = main(["compare", str(out), "--out", str(cmp_out)])
        assert code == 0
        text = capsys.readouterr().out
        # mean +- std presentation with 4 decimals
        assert "±" in text
        rows = (cmp_out / "comparison.csv").read_text().splitlines()
        assert len(rows) == 4  # header + 3 sequences

    def test_forty_seed_aggregation(self, tmp_path, capsys):
        # 40 synthetic single-seed reports; compare aggregates mean +- population std
        from featcl.metrics import MetricsReport, write_report

        rng = np.random.default_rng(7)
        run_dir = tmp_path / "forty"
        finals = []
        for seed in range(40):
            acc0 = float(rng.uniform(0.6, 1.0))
            acc1 = float(rng.uniform(0.4, 0.9))
            finals.append((acc0 + acc1) / 2)
            report = MetricsReport(
                overall_accuracy=[acc0, (acc0 + acc1) / 2],
                accuracy_matrix=[[acc0], [acc0, acc1]],
                variance_trace=[0.1, 0.2],
                origin_counts=[10, 10],
                seeds=[seed],
                manifest_sha256="fortyhash",
            )
            write_report(report, run_dir / f"seed_{seed}")
        out = tmp_path / "cmp40"
        assert main(["compare", str(run_dir), "--out", str(out)]) == 0
        rows = (out / "comparison.csv").read_text().splitlines()
        mean_cell, std_cell = rows[2].split(",")[1:3]
        assert abs(float(mean_cell) - np.mean(finals)) < 1e-12
        assert abs(float(std_cell) - np.std(finals)) < 1e-12  # population std
        text = capsys.readouterr().out
        assert f"{np.mean(finals):.4f}" in text and f"{np.std(finals):.4f}" in text

    def test_mismatched_manifests_rejected(self, bench, tmp_path):
        other_bench = tmp_path / "bench2"
        main([
            "gen", "--categories", "6", "--dim", "8", "--instances", "4", "--samples", "5",
            "--seed", "43", "--layout", "equal:2", "--out", str(other_bench),
        ])
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert self.run_once(bench, a) == 0
        assert main([
            "train", "--manifest", str(other_bench / "manifest.json"), "--mode", "recall",
            "--seed", "1", "--out", str(b), *FAST_FLAGS,
        ]) == 0
        assert main(["compare", str(a), str(b), "--out", str(tmp_path / "c")]) == 3


class TestAblate:
    def test_grid_shape(self, bench, tmp_path):
        out = tmp_path / "ablation"
        code = main([
            "ablate", "--manifest", str(bench / "manifest.json"), "--modes", "recall",
            "--seed", "1", "--out", str(out), *FAST_FLAGS,
        ])
        assert code == 0
        rows = (out / "ablation.csv").read_text().splitlines()
        assert rows[0] == "strategy,activation,mode,seeds,final_accuracy_mean,final_accuracy_std"
        assert len(rows) == 1 + 4  # {per-seq-head, expand-last} x {relu, siren}

    def test_usage_error_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--no-such-flag"])
        assert exc.value.code == 2
