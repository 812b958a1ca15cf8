"""Ticket/KB ingestion and the seeded synthetic benchmark generator.

The generator builds corpora with known latent causes (one subject/component/
failure-mode triple per cause) plus matched replay scenarios, so clustering
quality and end-to-end success are checkable against ground truth. Everything
is a pure function of the config: same config, byte-identical output.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from .errors import DataError, DuplicateIdError
from .simulator import (
    Antipattern,
    Fact,
    Persona,
    RequiredStep,
    ScenarioSpec,
    Transition,
)
from .util import dump_json, normalize_text, write_jsonl


@dataclass(frozen=True)
class Ticket:
    id: str
    root_cause_text: str
    symptoms: tuple[str, ...]
    resolution_steps: tuple[str, ...]
    raw_text: str
    ground_truth_cause_key: str | None = None

    def to_dict(self) -> dict:
        rec = {
            "id": self.id,
            "root_cause_text": self.root_cause_text,
            "symptoms": list(self.symptoms),
            "resolution_steps": list(self.resolution_steps),
            "raw_text": self.raw_text,
        }
        if self.ground_truth_cause_key is not None:
            rec["ground_truth_cause_key"] = self.ground_truth_cause_key
        return rec


@dataclass(frozen=True)
class KBArticle:
    id: str
    title: str
    body: str

    def to_dict(self) -> dict:
        return {"id": self.id, "title": self.title, "body": self.body}


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    seed: int = 0
    num_causes: int = 6
    tickets_per_cause: tuple[int, int] = (40, 60)
    noise_rate: float = 0.0
    scenarios_per_cause: int = 5
    vocab: dict | None = None  # optional explicit per-cause phrase banks

    def validate(self) -> None:
        if self.num_causes < 2:
            raise DataError(f"num_causes must be >= 2, got {self.num_causes}")
        lo, hi = self.tickets_per_cause
        if lo < 1 or hi < lo:
            raise DataError(f"bad tickets_per_cause range {self.tickets_per_cause}")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise DataError(f"noise_rate must be in [0,1], got {self.noise_rate}")


class TicketLoadResult(NamedTuple):
    tickets: list[Ticket]
    rejected: list[tuple[int, str]]  # (line number, reason)


# ---------------------------------------------------------------------------
# Loading / writing line-delimited record files
# ---------------------------------------------------------------------------

def load_tickets(path: str | Path) -> TicketLoadResult:
    """Load tickets from a JSONL file.

    Content errors (bad JSON, missing/empty required fields) are skipped and
    reported per line; duplicate ids corrupt retrieval bookkeeping and fail
    the whole load.
    """
    tickets: list[Ticket] = []
    rejected: list[tuple[int, str]] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                rejected.append((lineno, f"invalid record: {exc.msg}"))
                continue
            tid = rec.get("id")
            if not tid or not isinstance(tid, str):
                rejected.append((lineno, "missing id"))
                continue
            if tid in seen:
                raise DuplicateIdError(f"duplicate ticket id {tid!r} at line {lineno}")
            root = rec.get("root_cause_text") or ""
            if not root.strip():
                rejected.append((lineno, f"ticket {tid!r}: empty root_cause_text"))
                continue
            seen.add(tid)
            tickets.append(
                Ticket(
                    id=tid,
                    root_cause_text=root,
                    symptoms=tuple(rec.get("symptoms") or ()),
                    resolution_steps=tuple(rec.get("resolution_steps") or ()),
                    raw_text=rec.get("raw_text") or "",
                    ground_truth_cause_key=rec.get("ground_truth_cause_key"),
                )
            )
    return TicketLoadResult(tickets, rejected)


def load_kb(path: str | Path) -> list[KBArticle]:
    articles: list[KBArticle] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            aid = rec.get("id")
            if not aid:
                raise DataError(f"KB line {lineno}: missing id")
            if aid in seen:
                raise DuplicateIdError(f"duplicate KB id {aid!r} at line {lineno}")
            seen.add(aid)
            articles.append(KBArticle(id=aid, title=rec.get("title", ""), body=rec.get("body", "")))
    return articles


def write_tickets(path: str | Path, tickets: list[Ticket]) -> int:
    return write_jsonl(path, (t.to_dict() for t in tickets))


def write_kb(path: str | Path, articles: list[KBArticle]) -> int:
    return write_jsonl(path, (a.to_dict() for a in articles))


# ---------------------------------------------------------------------------
# Synthetic world
# ---------------------------------------------------------------------------

_SUBJECTS = [
    "vpn", "wifi", "printer", "email", "laptop", "monitor", "intranet",
    "softphone", "database", "backup", "badge", "projector", "fileshare",
    "browser", "antivirus", "calendar", "chat", "payroll", "crm",
    "dashboard", "scanner", "keyboard", "headset", "dock",
]
_COMPONENTS = [
    "certificate", "driver", "password", "mailbox", "disk", "cable", "proxy",
    "license", "firmware", "profile", "token", "queue", "sync", "account",
    "adapter", "cache", "policy", "quota", "plugin", "battery", "session",
    "catalog", "firewall", "dns",
]
_MODES = [
    "expired", "corrupted", "outdated", "locked", "full", "unplugged",
    "misconfigured", "revoked", "stale", "disabled", "overloaded", "blocked",
    "fragmented", "desynced", "invalid", "drained", "conflicting",
    "throttled", "orphaned", "saturated", "detached", "looping", "truncated",
    "degraded",
]

_GENERIC_SYMPTOMS = [
    "it worked fine yesterday",
    "the problem started this morning",
    "restarting did not help at all",
    "my computer is acting up",
    "several colleagues see the issue too",
]

_NOISE_POOL = ["flibber", "zorp", "quux", "blarg", "wibble", "snark", "gronk", "plonk"]


@dataclass(frozen=True)
class CauseBank:
    key: str
    core_terms: tuple[str, str, str]  # (subject, component, mode)
    root_causes: tuple[str, ...]
    root_cause_weights: tuple[float, ...]
    symptoms: tuple[str, ...]  # cause-specific + shared generic phrases
    resolution_steps: tuple[str, ...]


def _build_cause_bank(index: int) -> CauseBank:
    if index >= min(len(_COMPONENTS), len(_MODES)):
        raise DataError(
            f"cause #{index}: phrase pools exhausted (max {len(_COMPONENTS)} causes)"
        )
    # Sibling causes share a subject (same device, different faults), so a
    # subject-only complaint is genuinely ambiguous between them and the
    # dialogue has to elicit the discriminating component/mode.
    s = _SUBJECTS[index // 3]
    c, m = _COMPONENTS[index], _MODES[index]
    core = f"{s} {c} {m}"
    root_causes = (
        core,
        f"{core} detected on the client",
        f"{core} after the latest rollout",
        f"{core} blocking all users",
        f"recurring {core} reported by the service desk",
    )
    if index % 3 == 0:
        # Low-paraphrase cause: one phrasing dominates, so even exact-text
        # deduplication concentrates evidence.
        root_causes = root_causes[:2]
        weights = (0.85, 0.15)
    else:
        weights = tuple(1.0 / len(root_causes) for _ in root_causes)
    symptoms = (
        f"{s} keeps failing with a {c} warning",
        f"cannot use the {s} since the {c} alert appeared",
        f"{s} error message mentions {m} {c}",
        f"{s} session drops after a few minutes",
        f"the {s} shows errors every morning",
    ) + tuple(_GENERIC_SYMPTOMS)
    steps = (
        f"restart the {s} service",
        f"repair the {m} {c}",
        f"apply the updated {s} {c} configuration",
        f"confirm the {s} works normally again",
    )
    return CauseBank(
        key=f"{s}-{c}-{m}",
        core_terms=(s, c, m),
        root_causes=root_causes,
        root_cause_weights=weights,
        symptoms=symptoms,
        resolution_steps=steps,
    )


def build_cause_banks(config: SyntheticCorpusConfig) -> list[CauseBank]:
    if config.vocab:
        banks = []
        for key, bank in config.vocab.items():
            for field_name in ("root_causes", "symptoms", "resolution_steps"):
                if not bank.get(field_name):
                    raise DataError(f"cause {key!r}: empty phrase bank {field_name!r}")
            rc = tuple(bank["root_causes"])
            weights = tuple(bank.get("root_cause_weights") or (1.0 / len(rc),) * len(rc))
            banks.append(
                CauseBank(
                    key=key,
                    core_terms=tuple(bank.get("core_terms", ("", "", ""))),
                    root_causes=rc,
                    root_cause_weights=weights,
                    symptoms=tuple(bank["symptoms"]),
                    resolution_steps=tuple(bank["resolution_steps"]),
                )
            )
        if len(banks) < config.num_causes:
            raise DataError("vocab does not cover num_causes causes")
        return banks[: config.num_causes]
    return [_build_cause_bank(i) for i in range(config.num_causes)]


def _apply_noise(text: str, rng: random.Random, noise_rate: float) -> str:
    if noise_rate <= 0.0:
        return text
    words = text.split()
    out = [rng.choice(_NOISE_POOL) if rng.random() < noise_rate else w for w in words]
    return " ".join(out)


def _make_scenario(
    scenario_idx: int,
    cause: CauseBank,
    distractor: CauseBank,
    difficulty: str,
    persona: Persona,
) -> ScenarioSpec:
    s, c, m = cause.core_terms
    sid = f"S{scenario_idx:03d}"
    sym_phrase = cause.symptoms[0]
    weak_phrase = cause.symptoms[3]  # subject-only, no component/mode terms

    fact_sym = Fact(
        fact_id="sym",
        description=sym_phrase,
        eliciting_triggers=[s, c, m],
    )
    fact_check = Fact(
        fact_id="check",
        description=f"the {s} {c} shows {m} in the diagnostic output",
        eliciting_triggers=[],
    )
    fact_detail = Fact(
        fact_id="detail",
        description=f"the {c} status page reports {m} since last week",
        eliciting_triggers=[],
    )

    true_outcome = (
        f"I checked the {s} {c}: it is definitely {m}. "
        f"The diagnostic output flags the {c} as {m}."
    )
    transitions = [
        Transition(
            id="check_true",
            pattern=[s, c, m],
            outcome_text=true_outcome,
            fact_ids=["check", "detail"] if difficulty == "easy" else ["check", "sym"],
        ),
        Transition(
            id="restart_generic",
            pattern=["restart"],
            outcome_text="restart performed, same issue persists",
            fact_ids=[],
        ),
        Transition(
            id="check_distractor",
            pattern=list(distractor.core_terms),
            outcome_text=(
                f"I checked the {distractor.core_terms[0]} "
                f"{distractor.core_terms[1]}: everything appears normal."
            ),
            fact_ids=[],
        ),
    ]

    steps = [
        RequiredStep(step_id=f"s{i}", description=step, match_pattern=normalize_text(step))
        for i, step in enumerate(cause.resolution_steps)
    ]

    if difficulty == "easy":
        complaint = f"{cause.symptoms[0]}. {cause.symptoms[2]}."
        required_facts = [fact_check, fact_detail]
        required_steps = steps
        already_attempted: list[str] = []
        antipattern = Antipattern(
            kind="false_timeline",
            params={
                "patterns": [
                    r"within \d+ (hours|minutes|days)",
                    r"by (tomorrow|tonight|end of day)",
                    r"guarantee[ds]?\b",
                    r"immediately resolve",
                ]
            },
        )
    elif difficulty == "vague":
        complaint = (
            f"{_GENERIC_SYMPTOMS[0]}. {_GENERIC_SYMPTOMS[3]}. {weak_phrase}."
        )
        required_facts = [fact_sym, fact_check]
        required_steps = steps
        already_attempted = []
        antipattern = Antipattern(
            kind="contradicted_path",
            params={
                "contradicted_terms": list(distractor.core_terms),
                "contradicting_fact": "sym",
            },
        )
    elif difficulty == "trap":
        attempted = cause.resolution_steps[0]
        complaint = (
            f"{_GENERIC_SYMPTOMS[1]}. {weak_phrase}. I already tried: {attempted}."
        )
        required_facts = [fact_sym, fact_check]
        required_steps = steps[1:]
        already_attempted = [attempted]
        antipattern = Antipattern(kind="redundant_step", params={})
    else:
        raise DataError(f"unknown scenario difficulty {difficulty!r}")

    spec = ScenarioSpec(
        id=sid,
        initial_complaint=complaint,
        ground_truth_cause_key=cause.key,
        persona=persona,
        required_facts=required_facts,
        required_steps=required_steps,
        antipattern=antipattern,
        transitions=transitions,
        already_attempted=already_attempted,
        difficulty=difficulty,
    )
    spec.validate()
    return spec


def generate_synthetic(
    config: SyntheticCorpusConfig,
) -> tuple[list[Ticket], list[KBArticle], list[ScenarioSpec]]:
    """Generate (tickets, KB articles, scenarios) from the seeded config."""
    config.validate()
    banks = build_cause_banks(config)
    rng = random.Random(config.seed)

    tickets: list[Ticket] = []
    ticket_idx = 0
    lo, hi = config.tickets_per_cause
    for bank in banks:
        count = rng.randint(lo, hi)
        for _ in range(count):
            root = rng.choices(bank.root_causes, weights=bank.root_cause_weights, k=1)[0]
            root = _apply_noise(root, rng, config.noise_rate)
            n_sym = rng.randint(2, 3)
            cause_specific = bank.symptoms[:5] if not config.vocab else bank.symptoms
            symptoms = rng.sample(list(cause_specific), k=min(n_sym, len(cause_specific)))
            # Two shared generic symptoms per ticket: frequent enough corpus-wide
            # that extraction learns to ignore them as non-informative.
            symptoms.extend(rng.sample(_GENERIC_SYMPTOMS, k=2))
            symptoms = [_apply_noise(sym, rng, config.noise_rate) for sym in symptoms]
            raw = f"User reports: {'. '.join(symptoms)}. Resolution: {root}."
            tickets.append(
                Ticket(
                    id=f"T{ticket_idx:05d}",
                    root_cause_text=root,
                    symptoms=tuple(symptoms),
                    resolution_steps=bank.resolution_steps,
                    raw_text=raw,
                    ground_truth_cause_key=bank.key,
                )
            )
            ticket_idx += 1

    articles: list[KBArticle] = []
    for i, bank in enumerate(banks):
        s, c, m = bank.core_terms if bank.core_terms[0] else ("system", "component", "issue")
        articles.append(
            KBArticle(
                id=f"KB{i:03d}",
                title=f"Fixing {m} {c} problems on the {s}",
                body=(
                    f"Symptoms: {'; '.join(bank.symptoms[:3])}. "
                    f"Steps: {'; '.join(bank.resolution_steps)}."
                ),
            )
        )
    articles.append(
        KBArticle(
            id=f"KB{len(banks):03d}",
            title="General troubleshooting guide",
            body="Collect the exact error message, note when the problem started, and record recent changes.",
        )
    )
    articles.append(
        KBArticle(
            id=f"KB{len(banks) + 1:03d}",
            title="How to reach the service desk",
            body="Open a ticket in the portal with your device name and a screenshot of the error.",
        )
    )

    scenarios: list[ScenarioSpec] = []
    difficulties = ["easy", "vague", "trap"]
    styles = ["terse", "verbose", "frustrated"]
    scenario_idx = 0
    for j in range(config.scenarios_per_cause):
        for i, bank in enumerate(banks):
            distractor = _sibling_bank(banks, i)
            persona = Persona(
                style=styles[(i + j) % len(styles)],
                knowledge="expert" if (i + j) % 2 == 0 else "novice",
                priorities="get back to work quickly" if i % 2 == 0 else "understand the root cause",
            )
            difficulty = difficulties[(i + j) % len(difficulties)]
            scenarios.append(
                _make_scenario(scenario_idx, bank, distractor, difficulty, persona)
            )
            scenario_idx += 1

    return tickets, articles, scenarios


def _sibling_bank(banks: list[CauseBank], i: int) -> CauseBank:
    """Prefer a same-subject sibling as the contradicted/distractor cause."""
    for j, other in enumerate(banks):
        if j != i and other.core_terms[0] == banks[i].core_terms[0]:
            return other
    return banks[(i + 1) % len(banks)]


def corpus_config_from_dict(data: dict) -> SyntheticCorpusConfig:
    tpc = data.get("tickets_per_cause", (30, 50))
    return SyntheticCorpusConfig(
        seed=int(data.get("seed", 0)),
        num_causes=int(data.get("num_causes", 6)),
        tickets_per_cause=(int(tpc[0]), int(tpc[1])),
        noise_rate=float(data.get("noise_rate", 0.0)),
        scenarios_per_cause=int(data.get("scenarios_per_cause", 5)),
        vocab=data.get("vocab"),
    )
