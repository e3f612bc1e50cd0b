from __future__ import annotations

import json
import os

import pytest

from guided_decode import benchmark
from guided_decode._data import data_path
from guided_decode.cli import run


def _write_world_files(tmp_path, oracle_world, count=30):
    vocab_path = tmp_path / "vocab.txt"
    model_path = tmp_path / "model.rules"
    dataset_path = tmp_path / "dataset.jsonl"
    oracle_world.vocab.save(str(vocab_path))
    model_path.write_text(oracle_world.config_text, encoding="utf-8")
    benchmark.write_dataset(str(dataset_path), oracle_world.instances[:count])
    return vocab_path, model_path, dataset_path


def test_build_kb_stats(capsys):
    assert run(["build-kb", "--kind", "hierarchy", "--input", data_path("hierarchy.kb")]) == 0
    out = capsys.readouterr().out
    assert "5 roots" in out
    assert run(["build-kb", "--kind", "property", "--input", data_path("properties.kb")]) == 0
    assert "5 properties" in capsys.readouterr().out


def test_build_kb_missing_file_exits_3(tmp_path):
    assert run(["build-kb", "--kind", "hierarchy", "--input", str(tmp_path / "nope.kb")]) == 3


def test_bad_flags_exit_2():
    assert run(["generate", "--strategy", "warp"]) == 2
    assert run(["frobnicate"]) == 2


def test_help_lists_defaults(capsys):
    from guided_decode.cli import build_parser

    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["generate", "--help"])
    out = " ".join(capsys.readouterr().out.split())
    assert "--alpha" in out and "default: 5.0" in out
    assert "--beta" in out and "default: 100.0" in out
    assert "default: 20" in out and "default: 40" in out
    assert "default: 200" in out  # trie budget
    assert "default: 64" in out   # max tokens
    assert "default: 8" in out    # look-ahead


def test_build_dataset_and_generate_evaluate_pipeline(tmp_path, oracle_world, hierarchy_kb):
    vocab_path, model_path, dataset_path = _write_world_files(tmp_path, oracle_world)
    out_dir = tmp_path / "splits"
    assert (
        run(
            [
                "build-dataset",
                "--kind", "hierarchy",
                "--kb", data_path("hierarchy.kb"),
                "--sizes", "12,6,6",
                "--template-partition", "3,3,3",
                "--seed", "5",
                "--out-dir", str(out_dir),
            ]
        )
        == 0
    )
    train = benchmark.read_dataset(str(out_dir / "train.jsonl"))
    assert len(train) == 12
    assert all(inst.rendered for inst in train)

    gen_path = tmp_path / "gen.jsonl"
    code = run(
        [
            "generate",
            "--dataset", str(dataset_path),
            "--model", f"table:{model_path}",
            "--vocab", str(vocab_path),
            "--strategy", "oracle",
            "--hierarchy-kb", data_path("hierarchy.kb"),
            "--seed", "3",
            "--out", str(gen_path),
        ]
    )
    assert code == 0
    records = [json.loads(line) for line in gen_path.read_text().splitlines()]
    assert len(records) == 30
    assert all(r["trace"]["strategy"] == "oracle" for r in records)

    report_path = tmp_path / "report.json"
    code = run(
        [
            "evaluate",
            "--dataset", str(dataset_path),
            "--generations", str(gen_path),
            "--hierarchy-kb", data_path("hierarchy.kb"),
            "--out-report", str(report_path),
        ]
    )
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["violation_rate"] == 0.0
    assert report["ic"] == 1.0

    assert run(["report", "--report", str(report_path)]) == 0


def test_evaluate_mismatched_ids_exit_3(tmp_path, oracle_world):
    vocab_path, model_path, dataset_path = _write_world_files(tmp_path, oracle_world, count=3)
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"id": "zzz", "text": "x"}) + "\n")
    code = run(
        [
            "evaluate",
            "--dataset", str(dataset_path),
            "--generations", str(bad),
            "--hierarchy-kb", data_path("hierarchy.kb"),
            "--out-report", str(tmp_path / "r.json"),
        ]
    )
    assert code == 3


def test_config_file_supplies_defaults_cli_wins(tmp_path, oracle_world):
    vocab_path, model_path, dataset_path = _write_world_files(tmp_path, oracle_world, count=2)
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"strategy": "none", "max-tokens": 5, "out": str(tmp_path / "from_config.jsonl")}))
    code = run(
        [
            "--config", str(config),
            "generate",
            "--dataset", str(dataset_path),
            "--model", f"table:{model_path}",
            "--vocab", str(vocab_path),
        ]
    )
    assert code == 0
    records = [json.loads(line) for line in (tmp_path / "from_config.jsonl").read_text().splitlines()]
    assert records[0]["config"]["strategy"] == "none"
    assert records[0]["config"]["max_tokens"] == 5

    # command line overrides the config file
    code = run(
        [
            "--config", str(config),
            "generate",
            "--dataset", str(dataset_path),
            "--model", f"table:{model_path}",
            "--vocab", str(vocab_path),
            "--max-tokens", "2",
            "--out", str(tmp_path / "cli_wins.jsonl"),
        ]
    )
    assert code == 0
    records = [json.loads(line) for line in (tmp_path / "cli_wins.jsonl").read_text().splitlines()]
    assert records[0]["config"]["max_tokens"] == 2


def test_workers_preserve_input_order(tmp_path, oracle_world):
    vocab_path, model_path, dataset_path = _write_world_files(tmp_path, oracle_world, count=12)
    solo, pooled = tmp_path / "solo.jsonl", tmp_path / "pooled.jsonl"
    base = [
        "generate",
        "--dataset", str(dataset_path),
        "--model", f"table:{model_path}",
        "--vocab", str(vocab_path),
        "--strategy", "oracle",
        "--hierarchy-kb", data_path("hierarchy.kb"),
    ]
    assert run(base + ["--out", str(solo)]) == 0
    assert run(base + ["--workers", "4", "--out", str(pooled)]) == 0
    assert solo.read_bytes() == pooled.read_bytes()


def test_guidance_cache_short_circuits_textual(tmp_path, oracle_world):
    vocab_path, model_path, dataset_path = _write_world_files(tmp_path, oracle_world, count=2)
    instances = benchmark.read_dataset(str(dataset_path))
    cache = {
        inst.instance_id: {"topic": ["merlot"], "constraint": ["cabernet"]}
        for inst in instances
    }
    cache_path = tmp_path / "cache.json"
    cache_path.write_text(json.dumps(cache))
    out = tmp_path / "cached.jsonl"
    code = run(
        [
            "generate",
            "--dataset", str(dataset_path),
            "--model", f"table:{model_path}",
            "--vocab", str(vocab_path),
            "--strategy", "textual",
            "--guidance-cache", str(cache_path),
            "--out", str(out),
        ]
    )
    assert code == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert all("merlot" in r["text"] for r in records)


def test_guidance_cache_written_back(tmp_path, oracle_world):
    vocab_path, model_path, dataset_path = _write_world_files(tmp_path, oracle_world, count=2)
    cache_path = tmp_path / "fresh_cache.json"
    args = [
        "generate",
        "--dataset", str(dataset_path),
        "--model", f"table:{model_path}",
        "--vocab", str(vocab_path),
        "--strategy", "textual",
        "--trie-budget", "12",
        "--beams", "2",
        "--guidance-cache", str(cache_path),
        "--out", str(tmp_path / "g1.jsonl"),
    ]
    assert run(args) == 0
    assert cache_path.exists()
    cached = json.loads(cache_path.read_text())
    instances = benchmark.read_dataset(str(dataset_path))
    assert set(cached) == {i.instance_id for i in instances}
    # a rerun consuming the cache reproduces the outputs byte for byte
    assert run(args[:-1] + [str(tmp_path / "g2.jsonl")]) == 0
    assert (tmp_path / "g1.jsonl").read_bytes() == (tmp_path / "g2.jsonl").read_bytes()
