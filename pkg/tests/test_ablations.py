import io
import json

import pytest

import ablations
import pipeline
from ablations import Variant, apply_variant, suite_variants
from errors import ConfigError


@pytest.fixture
def config(tiny_config_dict):
    return pipeline.parse_config(tiny_config_dict)


class TestSuites:
    def test_heads(self, config):
        assert [v.name for v in suite_variants("heads", config)] == ["laat", "caml", "bertxml", "clsmean"]

    def test_pretrain(self, config):
        assert [v.init for v in suite_variants("pretrain", config)] == ["random", "mlm"]

    def test_lengths_are_scaled(self, config):
        variants = suite_variants("lengths", config)
        assert [v.name for v in variants] == ["len1536-seg32", "len768-seg64", "len768-seg32", "len768-seg16",
                                              "len768-seg8"]
        assert variants[1].overrides["encoder"] == {"max_positions": 66}

    def test_schedule_uses_scaled_reduced_rate(self, config):
        variants = suite_variants("schedule", config)
        assert variants[1].overrides == {"train": {"learning_rate": pytest.approx(4e-4)}}
        assert variants[2].overrides == {"train": {"schedule": "constant"}}

    def test_top_k(self, config):
        names = [v.name for v in suite_variants("top-k", config)]
        assert names == ["laat-full", "laat-top4", "clsmean-full", "clsmean-top4"]

    def test_unknown_suite(self, config):
        with pytest.raises(ConfigError):
            suite_variants("bogus", config)

    def test_every_suite_builds_valid_configs(self, config, tmp_path):
        for suite in ablations.SUITES:
            for variant in suite_variants(suite, config):
                resolved = apply_variant(config, variant, tmp_path)
                assert resolved.data_path == str(tmp_path)
                assert resolved.corpus is None
                assert resolved.segmenter.segment_length + 2 <= resolved.encoder.max_positions


def test_apply_variant_keeps_other_fields(config, tmp_path):
    variant = Variant("front", {"segmenter": {"truncation": "front"}, "top_k_labels": 4})
    resolved = apply_variant(config, variant, tmp_path)
    assert resolved.segmenter.truncation == "front"
    assert resolved.segmenter.segment_length == config.segmenter.segment_length
    assert resolved.top_k_labels == 4
    assert resolved.seed == config.seed


ROWS = [
    {"variant": "laat", "micro_f1": 0.5123, "macro_f1": 0.25, "micro_auc": 0.9, "macro_auc": None,
     "head_micro_f1": 0.6, "tail_micro_f1": 0.1, "p@1": 0.75, "p@3": 0.5},
    {"variant": "with,comma", "micro_f1": 0.4, "macro_f1": 0.2, "micro_auc": 0.8, "macro_auc": 0.7,
     "head_micro_f1": 0.5, "tail_micro_f1": 0.0, "p@1": 0.7, "p@3": 0.4},
]


class TestTables:
    def test_markdown(self):
        lines = ablations.markdown_table(ROWS).splitlines()
        assert lines[0] == ("| variant | micro_f1 | macro_f1 | micro_auc | macro_auc | p@1 | p@3 | head_micro_f1 "
                            "| tail_micro_f1 |")
        assert lines[2] == "| laat | 51.2 | 25.0 | 90.0 | n/a | 75.0 | 50.0 | 60.0 | 10.0 |"

    def test_csv(self):
        buffer = io.StringIO(newline="")
        ablations.write_csv_stream(buffer, ROWS)
        lines = buffer.getvalue().split("\r\n")
        assert lines[0] == "variant,micro_f1,macro_f1,micro_auc,macro_auc,p@1,p@3,head_micro_f1,tail_micro_f1"
        assert lines[2].startswith('"with,comma",0.4,')
        assert lines[3] == ""

    def test_write_tables(self, tmp_path):
        ablations.write_tables(tmp_path / "ablation", ROWS)
        assert json.loads((tmp_path / "ablation.json").read_text()) == ROWS
        assert (tmp_path / "ablation.csv").read_bytes().count(b"\r\n") == 3
        assert (tmp_path / "ablation.md").read_text().startswith("| variant |")


def test_run_suite(config, tmp_path):
    config = config.model_copy(update={"train": config.train.model_copy(update={"epochs": 1})})
    rows = ablations.run_suite("schedule", config, tmp_path)
    assert [r["variant"] for r in rows] == ["linear-peak", "linear-4e-04", "constant"]
    assert (tmp_path / "data" / "train.jsonl").exists()
    for row in rows:
        assert (tmp_path / row["variant"] / "test_report.json").exists()
        assert 0.0 <= row["micro_f1"] <= 1.0
    assert json.loads((tmp_path / "ablation.json").read_text()) == rows
