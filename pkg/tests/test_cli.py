import json
import shutil

import pytest

from main import main
from schemas.metrics_schema import MetricsReport

SPLIT_FILES = ("train.jsonl", "dev.jsonl", "test.jsonl", "labels.tsv", "stats.json")


def write_config(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def read_report(path):
    return MetricsReport.model_validate_json(path.read_text(encoding="utf-8"))


@pytest.fixture(scope="module")
def trained_run(tiny_config_file, tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", str(tiny_config_file), "--out", str(run)]) == 0
    return run


class TestGenData:
    def test_same_seed_same_bytes(self, tiny_config_file, tmp_path):
        for name in ("a", "b"):
            assert main(["gen-data", "--config", str(tiny_config_file), "--out", str(tmp_path / name)]) == 0
        for name in SPLIT_FILES:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["command"] == "gen-data"
        assert "train.jsonl" in manifest["files"]

    def test_seed_flag_changes_corpus(self, tiny_config_file, tmp_path):
        main(["gen-data", "--config", str(tiny_config_file), "--out", str(tmp_path / "a")])
        main(["gen-data", "--config", str(tiny_config_file), "--out", str(tmp_path / "b"), "--seed", "8"])
        assert (tmp_path / "a" / "train.jsonl").read_bytes() != (tmp_path / "b" / "train.jsonl").read_bytes()

    def test_stats(self, tiny_config_file, tmp_path):
        main(["gen-data", "--config", str(tiny_config_file), "--out", str(tmp_path)])
        stats = json.loads((tmp_path / "stats.json").read_text())
        assert stats["documents"] == 40
        assert set(stats["fragmentation_ratio"]) == {"word", "bpe"}
        assert stats["fragmentation_ratio"]["word"] == 1.0

    def test_non_positive_zipf_exponent(self, tiny_config_dict, tmp_path):
        tiny_config_dict["corpus"]["zipf_exponent"] = 0
        config = write_config(tmp_path / "bad.json", tiny_config_dict)
        assert main(["gen-data", "--config", config, "--out", str(tmp_path / "out")]) == 2
        assert not (tmp_path / "out").exists()

    def test_unknown_key(self, tiny_config_dict, tmp_path):
        tiny_config_dict["train"]["learning_rte"] = 0.1
        config = write_config(tmp_path / "bad.json", tiny_config_dict)
        assert main(["gen-data", "--config", config, "--out", str(tmp_path / "out")]) == 2

    def test_malformed_json(self, tmp_path):
        (tmp_path / "bad.json").write_text("{", encoding="utf-8")
        assert main(["gen-data", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "out")]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["gen-data", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "out")]) == 4


class TestTrainAndEval:
    def test_run_directory(self, trained_run):
        for name in ("config.json", "tokenizer/vocab.txt", "labels.tsv", "best.ckpt", "train_log.jsonl",
                     "dev_report.json", "history.json", "manifest.json"):
            assert (trained_run / name).exists(), name
        config = json.loads((trained_run / "config.json").read_text())
        assert config["encoder"]["vocab_size"] > 5
        history = json.loads((trained_run / "history.json").read_text())
        assert history["init"] == "random"
        assert len(history["epochs"]) == 2

    def test_eval_is_repeatable(self, trained_run, capsys):
        assert main(["eval", "--run", str(trained_run)]) == 0
        first = (trained_run / "test_report.json").read_text()
        predictions = (trained_run / "test_predictions.jsonl").read_text()
        assert main(["eval", "--run", str(trained_run)]) == 0
        assert (trained_run / "test_report.json").read_text() == first
        assert (trained_run / "test_predictions.jsonl").read_text() == predictions
        assert "micro_f1" in capsys.readouterr().out

    def test_dev_eval_reproduces_training_score(self, trained_run):
        history = json.loads((trained_run / "history.json").read_text())
        best = history["epochs"][history["best_epoch"] - 1]
        assert main(["eval", "--run", str(trained_run), "--split", "dev"]) == 0
        evaluated = read_report(trained_run / "dev_report.json")
        assert evaluated.threshold_source == "dev"
        assert evaluated.threshold == history["threshold"]
        assert evaluated.micro_f1 == pytest.approx(best["dev_micro_f1"], abs=1e-12)

    def test_threshold_override(self, trained_run):
        assert main(["eval", "--run", str(trained_run), "--split", "dev", "--threshold", "0.3"]) == 0
        report = read_report(trained_run / "dev_report.json")
        assert report.threshold_source == "override"
        assert report.threshold == 0.3

    def test_threshold_out_of_range(self, trained_run):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--run", str(trained_run), "--threshold", "1.5"])
        assert exc.value.code == 2

    def test_dump_attention(self, trained_run):
        assert main(["eval", "--run", str(trained_run), "--dump-attention", "3"]) == 0
        records = [json.loads(line) for line in (trained_run / "attention.jsonl").read_text().splitlines()]
        assert len(records) == 10
        for record in records:
            for pairs in record["attention"].values():
                assert 1 <= len(pairs) <= 3
                weights = [w for _, w in pairs]
                assert weights == sorted(weights, reverse=True)

    def test_missing_run(self, tmp_path):
        assert main(["eval", "--run", str(tmp_path / "nothing")]) == 4

    @pytest.mark.parametrize("damage", [lambda raw: raw[: len(raw) - 7], lambda raw: b"garbage"],
                             ids=["truncated", "garbage"])
    def test_corrupt_checkpoint(self, trained_run, tmp_path, damage):
        run = tmp_path / "run"
        shutil.copytree(trained_run, run)
        checkpoint = run / "best.ckpt"
        checkpoint.write_bytes(damage(checkpoint.read_bytes()))
        assert main(["eval", "--run", str(run)]) == 4

class TestPermissiveLabels:
    @pytest.fixture
    def data_dir(self, tiny_config_file, tmp_path):
        data = tmp_path / "data"
        assert main(["gen-data", "--config", str(tiny_config_file), "--out", str(data)]) == 0
        (data / "labels.tsv").unlink()
        with open(data / "dev.jsonl", "a", encoding="utf-8") as f:
            f.write(json.dumps({"id": "extra-dev", "text": "alpha beta", "labels": ["ZZZ.99"]}) + "\n")
        return data

    def test_unknown_dev_label_fails(self, tiny_config_file, data_dir, tmp_path):
        args = ["train", "--config", str(tiny_config_file), "--data", str(data_dir), "--out", str(tmp_path / "run")]
        assert main(args) == 2

    def test_permissive_flag_drops_unknown_labels(self, tiny_config_file, data_dir, tmp_path, caplog):
        run = tmp_path / "run"
        args = ["train", "--config", str(tiny_config_file), "--data", str(data_dir), "--permissive-labels",
                "--out", str(run)]
        assert main(args) == 0
        assert "unknown_labels_dropped | split=dev" in caplog.text
        assert json.loads((run / "config.json").read_text())["permissive_labels"] is True
        assert "ZZZ.99" not in (run / "labels.tsv").read_text()


class TestPretrainInit:
    def test_train_from_pretrained_encoder(self, tiny_config_file, tmp_path):
        checkpoint = tmp_path / "pretrain" / "encoder.ckpt"
        assert main(["pretrain", "--config", str(tiny_config_file), "--out", str(checkpoint)]) == 0
        assert checkpoint.exists()
        assert (tmp_path / "pretrain" / "encoder.ckpt.tokenizer" / "vocab.txt").exists()
        assert (tmp_path / "pretrain" / "encoder.ckpt.loss.jsonl").read_text().strip()

        run = tmp_path / "run"
        assert main(["train", "--config", str(tiny_config_file), "--init", str(checkpoint), "--out", str(run)]) == 0
        assert json.loads((run / "history.json").read_text())["init"] == str(checkpoint)
        assert (run / "tokenizer" / "vocab.txt").read_text() == \
            (tmp_path / "pretrain" / "encoder.ckpt.tokenizer" / "vocab.txt").read_text()

    def test_mismatched_encoder(self, tiny_config_dict, tiny_config_file, tmp_path):
        checkpoint = tmp_path / "encoder.ckpt"
        assert main(["pretrain", "--config", str(tiny_config_file), "--out", str(checkpoint)]) == 0
        tiny_config_dict["encoder"]["hidden"] = 32
        config = write_config(tmp_path / "wide.json", tiny_config_dict)
        assert main(["train", "--config", config, "--init", str(checkpoint), "--out", str(tmp_path / "run")]) == 4


class TestReport:
    def test_formats(self, trained_run, capsys):
        assert main(["eval", "--run", str(trained_run)]) == 0
        capsys.readouterr()
        assert main(["report", "--runs", str(trained_run), "--format", "csv"]) == 0
        lines = capsys.readouterr().out.split("\r\n")
        assert lines[0].startswith("variant,micro_f1,macro_f1")
        assert lines[1].startswith(trained_run.name + ",")

        assert main(["report", "--runs", str(trained_run), "--format", "json"]) == 0
        rows = json.loads(capsys.readouterr().out)
        stored = read_report(trained_run / "test_report.json")
        assert rows[0]["micro_f1"] == stored.micro_f1
        assert rows[0]["p@3"] == stored.precision_at["3"]

        assert main(["report", "--runs", str(trained_run), "--format", "md"]) == 0
        assert capsys.readouterr().out.startswith("| variant |")

    def test_recompute_matches_stored(self, trained_run, tmp_path):
        assert main(["eval", "--run", str(trained_run)]) == 0
        main(["report", "--runs", str(trained_run), "--format", "json", "--out", str(tmp_path / "stored.json")])
        main(["report", "--runs", str(trained_run), "--format", "json", "--recompute",
              "--out", str(tmp_path / "recomputed.json")])
        stored = json.loads((tmp_path / "stored.json").read_text())
        recomputed = json.loads((tmp_path / "recomputed.json").read_text())
        assert recomputed[0]["micro_f1"] == pytest.approx(stored[0]["micro_f1"], abs=1e-12)
        assert recomputed[0]["macro_auc"] == pytest.approx(stored[0]["macro_auc"], abs=1e-12)

    def test_run_without_report(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["report", "--runs", str(tmp_path / "empty")]) == 4


def test_unknown_suite(tiny_config_file, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["ablate", "--config", str(tiny_config_file), "--suite", "bogus", "--out", str(tmp_path)])
    assert exc.value.code == 2
