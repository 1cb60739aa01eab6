import hashlib
import json

import pytest

from remixer.cli import main, parse_config_file
from remixer.datagen import load_manifest


def _tree_hash(root):
    # hash the dataset artifact itself; resolved.cfg records the (differing)
    # output path and is excluded
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        if path.name == "resolved.cfg":
            continue
        digest.update(str(path.relative_to(root)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_ds") / "ds"
    code = main([
        "synth-data", "--k", "2", "--out", str(out), "--seed", "7",
        "--items-train", "3", "--items-val", "1", "--items-test", "1",
        "--duration-s", "2.0",
    ])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, dataset_dir):
    out = tmp_path_factory.mktemp("cli_train") / "run"
    code = main([
        "train", "--variant", "model1", "--data", str(dataset_dir),
        "--out", str(out), "--max-epochs", "2", "--patience", "2",
        "--batch-size", "2", "--seed", "1",
        "--n-filters", "16", "--kernel-len", "8", "--stride", "4",
        "--bottleneck", "8", "--conv-channels", "12", "--blocks", "2",
        "--repeats", "1",
    ])
    assert code == 0
    return out


class TestSynthData:
    def test_writes_manifest_and_resolved_config(self, dataset_dir):
        manifest = load_manifest(dataset_dir)
        assert len(manifest.items) == 5
        assert (dataset_dir / "resolved.cfg").is_file()
        resolved = parse_config_file(dataset_dir / "resolved.cfg")
        assert resolved["k"] == "2"
        assert resolved["seed"] == "7"

    def test_refuses_nonempty_dir_without_force(self, dataset_dir):
        code = main(["synth-data", "--k", "2", "--out", str(dataset_dir)])
        assert code == 1

    def test_force_overwrites(self, dataset_dir):
        code = main([
            "synth-data", "--k", "2", "--out", str(dataset_dir), "--seed", "7",
            "--items-train", "3", "--items-val", "1", "--items-test", "1",
            "--duration-s", "2.0", "--force",
        ])
        assert code == 0

    def test_deterministic_rerun_hash_equal(self, tmp_path):
        args = [
            "synth-data", "--k", "2", "--seed", "3", "--items-train", "2",
            "--items-val", "1", "--items-test", "1", "--duration-s", "1.0",
        ]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        assert _tree_hash(tmp_path / "a") == _tree_hash(tmp_path / "b")

    def test_reproducible_from_resolved_config(self, dataset_dir, tmp_path):
        code = main([
            "synth-data", "--config", str(dataset_dir / "resolved.cfg"),
            "--out", str(tmp_path / "replay"),
        ])
        assert code == 0
        a = {p.name: p.read_bytes() for p in (dataset_dir / "train").rglob("*.wav")}
        b = {p.name: p.read_bytes() for p in (tmp_path / "replay" / "train").rglob("*.wav")}
        assert a == b


class TestTrain:
    def test_outputs(self, trained_dir):
        assert (trained_dir / "model.ckpt.json").is_file()
        assert (trained_dir / "history.csv").is_file()
        assert (trained_dir / "resolved.cfg").is_file()
        payload = json.loads((trained_dir / "model.ckpt.json").read_text())
        assert payload["variant"] == "model1"
        assert payload["metadata"]["labels"] == ["piano", "drums"]

    def test_baseline_warns_on_psi(self, dataset_dir, tmp_path, capsys):
        code = main([
            "train", "--variant", "baseline", "--psi", "2.0",
            "--data", str(dataset_dir), "--out", str(tmp_path / "run"),
            "--max-epochs", "1", "--patience", "1", "--batch-size", "2",
            "--n-filters", "16", "--kernel-len", "8", "--stride", "4",
            "--bottleneck", "8", "--conv-channels", "12", "--blocks", "2",
            "--repeats", "1",
        ])
        assert code == 0
        assert "--psi has no effect" in capsys.readouterr().err

    def test_seed_repeatable_history(self, dataset_dir, tmp_path):
        common = [
            "train", "--variant", "baseline", "--data", str(dataset_dir),
            "--max-epochs", "2", "--patience", "2", "--batch-size", "2",
            "--seed", "9",
            "--n-filters", "16", "--kernel-len", "8", "--stride", "4",
            "--bottleneck", "8", "--conv-channels", "12", "--blocks", "2",
            "--repeats", "1",
        ]
        assert main(common + ["--out", str(tmp_path / "a")]) == 0
        assert main(common + ["--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "history.csv").read_bytes() == (
            tmp_path / "b" / "history.csv"
        ).read_bytes()

    def test_missing_manifest_is_user_error(self, tmp_path):
        code = main([
            "train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "run"),
        ])
        assert code == 1


class TestEval:
    def test_eval_outputs_and_determinism(self, dataset_dir, trained_dir, tmp_path):
        common = [
            "eval", "--checkpoint", str(trained_dir / "model.ckpt.json"),
            "--data", str(dataset_dir), "--split", "test",
        ]
        assert main(common + ["--out", str(tmp_path / "a")]) == 0
        assert main(common + ["--out", str(tmp_path / "b")]) == 0
        rec_a = (tmp_path / "a" / "records.csv").read_bytes()
        rec_b = (tmp_path / "b" / "records.csv").read_bytes()
        assert rec_a == rec_b
        assert (tmp_path / "a" / "summary.json").is_file()
        separation = json.loads((tmp_path / "a" / "separation.json").read_text())
        assert set(separation) == {"piano", "drums"}
        for stats in separation.values():
            assert {"sdr", "sir", "sar"} <= set(stats)
        curves = sorted((tmp_path / "a" / "curves").glob("*.csv"))
        assert len(curves) == 2  # one per source for the single variant
        figures = sorted((tmp_path / "a" / "figures").glob("*.png"))
        assert len(figures) == 4  # minSDR + LD per source

    def test_record_count_formula(self, dataset_dir, trained_dir, tmp_path):
        from remixer.evaluation import read_records_csv

        assert main([
            "eval", "--checkpoint", str(trained_dir / "model.ckpt.json"),
            "--data", str(dataset_dir), "--split", "val",
            "--out", str(tmp_path / "out"),
        ]) == 0
        records = read_records_csv(tmp_path / "out" / "records.csv")
        # one val track of 2 s -> two 1 s segments; 16K+1 = 33 for K=2
        assert len(records) == 2 * 33

    def test_missing_checkpoint_is_user_error(self, dataset_dir, tmp_path):
        code = main([
            "eval", "--checkpoint", str(tmp_path / "nope.json"),
            "--data", str(dataset_dir), "--out", str(tmp_path / "out"),
        ])
        assert code == 1


class TestServe:
    def test_missing_checkpoint_refused(self, tmp_path):
        code = main(["serve", "--checkpoint", str(tmp_path / "nope.json")])
        assert code == 1

    def test_served_model_reachable(self, trained_dir):
        # drive the service app directly; uvicorn wiring is exercised via
        # create_app, which `remixer serve` hands to the server verbatim
        from fastapi.testclient import TestClient

        from remixer.service import create_app

        client = TestClient(create_app(trained_dir / "model.ckpt.json"))
        body = client.get("/v1/model").json()
        assert body["variant"] == "model1"


class TestConfigHandling:
    def test_unknown_keys_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("k = 2\nunknown_key = 5\n")
        code = main(["synth-data", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 1

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "base.cfg"
        cfg.write_text("k = 2\nitems_train = 1\nitems_val = 1\nitems_test = 1\nduration_s = 1.0\n")
        out = tmp_path / "ds"
        assert main([
            "synth-data", "--config", str(cfg), "--out", str(out), "--k", "3",
        ]) == 0
        assert load_manifest(out).k == 3

    def test_bad_usage_exits_one(self):
        assert main(["train", "--no-such-flag"]) == 1
        assert main(["no-such-command"]) == 1
