import json
import time
from pathlib import Path

import pytest

from dqa.cli import main


@pytest.fixture(scope="module")
def artifacts_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("artifacts")
    code = main([
        "corpus", "gen", "--seed", "11", "--num-causes", "4",
        "--tickets-min", "20", "--tickets-max", "20",
        "--scenarios-per-cause", "2", "--out-dir", str(out),
    ])
    assert code == 0
    return out


def _common(out: Path) -> list[str]:
    return [
        "--corpus", str(out / "tickets.jsonl"),
        "--kb", str(out / "kb.jsonl"),
        "--seed", "11",
    ]


def test_corpus_gen_writes_three_files(artifacts_dir):
    for name in ("tickets.jsonl", "kb.jsonl", "scenarios.jsonl"):
        assert (artifacts_dir / name).exists()


def test_corpus_gen_deterministic(tmp_path, artifacts_dir):
    out2 = tmp_path / "again"
    code = main([
        "corpus", "gen", "--seed", "11", "--num-causes", "4",
        "--tickets-min", "20", "--tickets-max", "20",
        "--scenarios-per-cause", "2", "--out-dir", str(out2),
    ])
    assert code == 0
    for name in ("tickets.jsonl", "kb.jsonl", "scenarios.jsonl"):
        assert (out2 / name).read_bytes() == (artifacts_dir / name).read_bytes()


def test_corpus_validate(artifacts_dir, capsys):
    code = main(["corpus", "validate", *_common(artifacts_dir),
                 "--scenarios", str(artifacts_dir / "scenarios.jsonl")])
    assert code == 0
    out = capsys.readouterr().out
    assert "0 rejected" in out


def test_index_build_and_query(artifacts_dir, tmp_path, capsys):
    index_path = tmp_path / "index.jsonl"
    assert main(["index", "build", *_common(artifacts_dir), "--out", str(index_path)]) == 0
    assert index_path.exists()
    code = main(["index", "query", *_common(artifacts_dir), "--index", str(index_path),
                 "--query", "vpn certificate expired", "-k", "5"])
    assert code == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("T")]
    assert len(lines) == 5


def test_cluster_fit(artifacts_dir, tmp_path, capsys):
    out = tmp_path / "clusters.json"
    code = main(["cluster", "fit", *_common(artifacts_dir), "--k", "4", "--out", str(out)])
    assert code == 0
    model = json.loads(out.read_text())
    assert model["k_clusters"] == 4
    assert "prior" in capsys.readouterr().out


def test_raggg_aggregate(artifacts_dir, capsys):
    code = main(["raggg", "aggregate", *_common(artifacts_dir),
                 "--query", "vpn keeps failing with a certificate warning", "--k", "20"])
    assert code == 0
    record = json.loads(capsys.readouterr().out)
    assert record["neighborhood_size"] == 20
    assert sum(c["count"] for c in record["clusters"]) + record["other_count"] == 20


def test_chat_session(artifacts_dir, capsys, monkeypatch):
    import io
    monkeypatch.setattr("sys.stdin", io.StringIO("vpn keeps failing with a certificate warning\n\n"))
    code = main(["chat", *_common(artifacts_dir), "--variant", "dqa",
                 "--k-clusters", "4"])
    assert code == 0
    out = capsys.readouterr().out
    assert "agent[" in out
    assert "session ended." in out


def test_bench_run_and_determinism(artifacts_dir, tmp_path):
    out = tmp_path / "bench"
    args = [
        "bench", "run", *_common(artifacts_dir),
        "--scenarios", str(artifacts_dir / "scenarios.jsonl"),
        "--variants", "rag_baseline,dqa",
        "--seeds", "1", "--runs", "1", "--k-clusters", "4", "--k-retrieve", "15",
        "--out-dir", str(out),
    ]
    assert main(args) == 0
    first = {n: (out / n).read_bytes() for n in ("report.json", "report.txt", "report.csv")}
    assert main(args) == 0
    second = {n: (out / n).read_bytes() for n in ("report.json", "report.txt", "report.csv")}
    assert first == second
    report = json.loads((out / "report.json").read_text())
    assert set(report["per_system"]) == {"rag_baseline", "dqa"}
    assert report["config"]["k_clusters"] == 4


def test_missing_artifact_exit_code(tmp_path, capsys):
    code = main(["index", "build", "--corpus", str(tmp_path / "nope.jsonl"),
                 "--out-dir", str(tmp_path)])
    assert code == 3
    assert "class=missing_artifact" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    code = main(["corpus", "validate", "--config", str(cfg)])
    assert code == 2
    assert "class=config" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"no_such_key": 1}')
    assert main(["corpus", "validate", "--config", str(cfg)]) == 2


def test_end_to_end_smoke_under_60s(tmp_path):
    """gen -> index -> cluster -> bench on 10 scenarios, wall-clock bounded."""
    t0 = time.monotonic()
    out = tmp_path / "smoke"
    assert main(["corpus", "gen", "--seed", "3", "--num-causes", "5",
                 "--tickets-min", "30", "--tickets-max", "30",
                 "--scenarios-per-cause", "2", "--out-dir", str(out)]) == 0
    common = ["--corpus", str(out / "tickets.jsonl"), "--kb", str(out / "kb.jsonl"), "--seed", "3"]
    assert main(["index", "build", *common, "--out", str(out / "index.jsonl")]) == 0
    assert main(["cluster", "fit", *common, "--k", "5", "--out", str(out / "clusters.json")]) == 0
    assert main(["bench", "run", *common,
                 "--scenarios", str(out / "scenarios.jsonl"),
                 "--seeds", "1", "--runs", "1", "--k-clusters", "5", "--k-retrieve", "20",
                 "--out-dir", str(out / "bench")]) == 0
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    assert (out / "bench" / "report.json").exists()
