#!/usr/bin/env python3
"""Regenerate the pinned desk-scale benchmark and run the full ablation ladder.

Writes the corpus, scenario set, and report files under out/benchmark/ and
prints the rendered table. Everything is seeded; re-running reproduces the
same report byte for byte.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dqa.cli import main  # noqa: E402

OUT = Path(__file__).resolve().parents[1] / "out" / "benchmark"


def run() -> int:
    gen = main([
        "corpus", "gen", "--seed", "11", "--num-causes", "6",
        "--tickets-min", "40", "--tickets-max", "60",
        "--scenarios-per-cause", "5", "--out-dir", str(OUT),
    ])
    if gen != 0:
        return gen
    return main([
        "bench", "run",
        "--corpus", str(OUT / "tickets.jsonl"),
        "--kb", str(OUT / "kb.jsonl"),
        "--scenarios", str(OUT / "scenarios.jsonl"),
        "--seeds", "1,2,3",
        "--jobs", "4",
        "--save-transcripts",
        "--out-dir", str(OUT),
    ])


if __name__ == "__main__":
    sys.exit(run())
