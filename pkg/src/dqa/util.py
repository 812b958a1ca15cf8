"""Small shared helpers: text normalization, seed derivation, JSON lines IO."""

from __future__ import annotations

import json
import re
from hashlib import blake2b
from pathlib import Path
from typing import Any, Iterable, Iterator

_WS_RE = re.compile(r"\s+")
_PUNCT_RE = re.compile(r"[^0-9a-z ]+")
_FACT_ANNOTATION_RE = re.compile(r"\s*\[\[fact:([A-Za-z0-9_.-]+)\]\]")


def normalize_text(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace.

    This is the single normalization used by the simulator's pattern matcher,
    the judge, and the dialogue engine's step bookkeeping, so that what the
    engine filters is exactly what the judge checks.
    """
    lowered = text.lower()
    lowered = _PUNCT_RE.sub(" ", lowered)
    return _WS_RE.sub(" ", lowered).strip()


def tokens_of(text: str) -> list[str]:
    norm = normalize_text(text)
    return norm.split() if norm else []


def extract_fact_annotations(text: str) -> list[str]:
    """Return fact ids tagged inline in simulated-user text."""
    return _FACT_ANNOTATION_RE.findall(text)


def strip_fact_annotations(text: str) -> str:
    """Remove inline fact tags; the dialogue engine never sees them."""
    return _FACT_ANNOTATION_RE.sub("", text).strip()


def derive_seed(root_seed: int, label: str) -> int:
    """Fan one root seed out into stable per-component child seeds."""
    digest = blake2b(f"{root_seed}\x1f{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % (2**32)


def stable_hash(text: str) -> str:
    return blake2b(text.encode("utf-8"), digest_size=8).hexdigest()


def dump_json(obj: Any) -> str:
    """Canonical JSON for deterministic artifact files."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dump_json(rec))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (1-based line number, parsed record); raises ValueError with the line number."""
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: invalid record ({exc.msg})") from exc
