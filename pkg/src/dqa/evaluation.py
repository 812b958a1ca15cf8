"""Transcript judging, the trajectory-level success criterion, and the
four-variant benchmark runner with ablation reporting.

The default judge is deterministic: it recomputes diagnosis/resolution/
antipattern compliance from the transcript's inline fact annotations and the
scenario rubric, prefix by prefix. A case succeeds if at any prefix of the
trajectory all three criteria hold simultaneously; it does not have to
terminate on that turn.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .artifacts import ArtifactBundle, build_bundle
from .corpus import KBArticle, Ticket
from .dialogue import VARIANT_MASKS, DialogueEngine, FeatureMask, PolicyParams
from .encoding import EncoderConfig
from .errors import DataError
from .simulator import MAX_TURNS, ScenarioSpec, Transcript, run_replay
from .util import extract_fact_annotations, normalize_text, tokens_of

ALL_VARIANTS = ("rag_no_cqr", "rag_baseline", "rag_clustering", "dqa")

REPORT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EvalResult:
    scenario_id: str
    system_id: str
    diagnosis_score: float
    resolution_score: float
    antipattern_ok: bool
    success: bool
    turns_used: int
    first_success_turn: int | None
    diagnosis_fraction: tuple[int, int] = (0, 1)
    resolution_fraction: tuple[int, int] = (0, 1)
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "system_id": self.system_id,
            "diagnosis_score": self.diagnosis_score,
            "resolution_score": self.resolution_score,
            "antipattern_ok": self.antipattern_ok,
            "success": self.success,
            "turns_used": self.turns_used,
            "first_success_turn": self.first_success_turn,
            "aborted": self.aborted,
        }


def _turn_view(transcript: Transcript) -> list[dict]:
    """Group the flat utterance list into agent turns with their user context.

    Turn t sees: all user text up to and including the reply to agent turn t
    (facts elicited by an action are credited to the turn that elicited them).
    """
    turns: list[dict] = []
    utts = transcript.utterances
    i = 0
    pre_user: list[str] = []
    while i < len(utts):
        u = utts[i]
        if u["role"] == "user":
            pre_user.append(u["text"])
            i += 1
            continue
        reply = utts[i + 1]["text"] if i + 1 < len(utts) and utts[i + 1]["role"] == "user" else None
        turns.append(
            {
                "agent_text": u["text"],
                "action_type": u.get("action_type"),
                "users_before": list(pre_user),
                "reply": reply,
            }
        )
        i += 1
    return turns


def _antipattern_violations(
    scenario: ScenarioSpec, turns: list[dict]
) -> list[int]:
    """Agent turn indexes (1-based) where the scenario antipattern fires."""
    kind = scenario.antipattern.kind
    params = scenario.antipattern.params
    violations: list[int] = []
    if kind == "redundant_step":
        attempted = [normalize_text(s) for s in scenario.already_attempted]
        for t, turn in enumerate(turns, start=1):
            norm = normalize_text(turn["agent_text"])
            if any(a and a in norm for a in attempted):
                violations.append(t)
    elif kind == "contradicted_path":
        terms = [normalize_text(t) for t in params.get("contradicted_terms", [])]
        trigger_fact = params.get("contradicting_fact")
        fact_known = False
        for t, turn in enumerate(turns, start=1):
            if not fact_known:
                for text in turn["users_before"]:
                    if trigger_fact in extract_fact_annotations(text):
                        fact_known = True
                        break
            if (
                fact_known
                and turn["action_type"] in ("investigate", "resolve")
                and terms
            ):
                toks = set(tokens_of(turn["agent_text"]))
                if all(term in toks for term in terms):
                    violations.append(t)
    elif kind == "false_timeline":
        patterns = [re.compile(p, re.IGNORECASE) for p in params.get("patterns", [])]
        for t, turn in enumerate(turns, start=1):
            if any(p.search(turn["agent_text"]) for p in patterns):
                violations.append(t)
    else:
        raise DataError(f"unknown antipattern kind {kind!r}")
    return violations


def judge_transcript(transcript: Transcript, scenario: ScenarioSpec) -> EvalResult:
    """Deterministic judge over fact annotations and step match patterns."""
    if transcript.scenario_id != scenario.id:
        raise DataError(
            f"transcript {transcript.scenario_id!r} does not match scenario {scenario.id!r}"
        )
    turns = _turn_view(transcript)
    required_facts = [f.fact_id for f in scenario.required_facts]
    n_facts = len(required_facts)
    n_steps = len(scenario.required_steps)

    violations = set(_antipattern_violations(scenario, turns))

    facts: set[str] = set()
    steps: set[str] = set()
    success = False
    first_success: int | None = None
    diag = Fraction(1) if n_facts == 0 else Fraction(0)
    res = Fraction(1) if n_steps == 0 else Fraction(0)
    clean_so_far = True
    clean_at_success = True

    for t, turn in enumerate(turns, start=1):
        for text in turn["users_before"]:
            facts.update(f for f in extract_fact_annotations(text) if f in required_facts)
        norm = normalize_text(turn["agent_text"])
        for step in scenario.required_steps:
            if step.match_pattern in norm:
                steps.add(step.step_id)
        if turn["reply"] is not None:
            facts.update(f for f in extract_fact_annotations(turn["reply"]) if f in required_facts)
        if t in violations:
            clean_so_far = False
        diag = Fraction(len(facts), n_facts) if n_facts else Fraction(1)
        res = Fraction(len(steps), n_steps) if n_steps else Fraction(1)
        if not success and diag == 1 and res == 1 and clean_so_far:
            success = True
            first_success = t
            clean_at_success = clean_so_far

    antipattern_ok = clean_at_success if success else clean_so_far
    return EvalResult(
        scenario_id=scenario.id,
        system_id=transcript.system_id,
        diagnosis_score=float(diag),
        resolution_score=float(res),
        antipattern_ok=antipattern_ok,
        success=success,
        turns_used=transcript.turns_used,
        first_success_turn=first_success,
        diagnosis_fraction=(diag.numerator, diag.denominator),
        resolution_fraction=(res.numerator, res.denominator),
        aborted=transcript.termination == "aborted",
    )


# ---------------------------------------------------------------------------
# Delta / ablation arithmetic (table formatting contract)
# ---------------------------------------------------------------------------

def compute_deltas(
    per_system: dict[str, dict],
    target: str = "dqa",
    baseline: str = "rag_baseline",
) -> dict:
    """Target-vs-baseline deltas with the printed formats used in reports:
    percentage points at one decimal, relative percent at one decimal, turns
    at two decimals."""
    t, b = per_system[target], per_system[baseline]
    pp = t["success_rate"] - b["success_rate"]
    relative = (pp / b["success_rate"] * 100.0) if b["success_rate"] else float("inf")
    d_diag = t["diagnosis"] - b["diagnosis"]
    d_res = t["resolution"] - b["resolution"]
    d_turns = t["turns"] - b["turns"]
    return {
        "target": target,
        "baseline": baseline,
        "success_pp": pp,
        "success_relative_pct": relative,
        "diagnosis_delta": d_diag,
        "resolution_delta": d_res,
        "turns_delta": d_turns,
        "formatted": {
            "success_pp": f"{pp:+.1f}",
            "success_relative_pct": f"{relative:.1f}%",
            "diagnosis_delta": f"{d_diag:+.2f}",
            "resolution_delta": f"{d_res:+.2f}",
            "turns_delta": f"{d_turns:+.2f}",
        },
    }


def ablation_increments(per_system: dict[str, dict]) -> list[dict]:
    """Success-rate increments along the component ladder, each rung relative
    to the previous variant."""
    ladder = [
        ("query_rewriting", "rag_no_cqr", "rag_baseline"),
        ("semantic_clustering", "rag_baseline", "rag_clustering"),
        ("diagnostic_state", "rag_clustering", "dqa"),
    ]
    rows = []
    for component, prev, curr in ladder:
        if prev not in per_system or curr not in per_system:
            continue
        pp = per_system[curr]["success_rate"] - per_system[prev]["success_rate"]
        rel = (pp / per_system[prev]["success_rate"] * 100.0) if per_system[prev]["success_rate"] else float("inf")
        rows.append(
            {
                "component": component,
                "from": prev,
                "to": curr,
                "success_pp": pp,
                "relative_pct": rel,
                "formatted": {"success_pp": f"{pp:+.1f}pp", "relative_pct": f"{rel:+.1f}%"},
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Benchmark runner
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkResult:
    report: dict
    results: list[EvalResult]
    transcripts: list[tuple[int, Transcript]]  # (run seed, transcript)


def _aggregate(results: list[EvalResult]) -> dict:
    ok = [r for r in results if not r.aborted]
    if not ok:
        return {"success_rate": 0.0, "diagnosis": 0.0, "resolution": 0.0, "turns": 0.0, "count": 0}
    return {
        "success_rate": 100.0 * sum(1 for r in ok if r.success) / len(ok),
        "diagnosis": sum(r.diagnosis_score for r in ok) / len(ok),
        "resolution": sum(r.resolution_score for r in ok) / len(ok),
        "turns": sum(r.turns_used for r in ok) / len(ok),
        "count": len(ok),
    }


def judge_with_backend(transcript: Transcript, scenario: ScenarioSpec, backend) -> EvalResult:
    """Score a transcript through a plug-in judge backend. The backend gets
    the transcript plus the scenario rubric and owns its own prompting."""
    rubric = {
        "required_facts": [
            {"fact_id": f.fact_id, "description": f.description} for f in scenario.required_facts
        ],
        "required_steps": [
            {"step_id": s.step_id, "description": s.description} for s in scenario.required_steps
        ],
        "antipattern": {"kind": scenario.antipattern.kind, "params": scenario.antipattern.params},
        "already_attempted": list(scenario.already_attempted),
    }
    scores = backend.judge(transcript.to_dict(), rubric)
    diag = float(scores["diagnosis_score"])
    res = float(scores["resolution_score"])
    ok = bool(scores["antipattern_ok"])
    return EvalResult(
        scenario_id=scenario.id,
        system_id=transcript.system_id,
        diagnosis_score=diag,
        resolution_score=res,
        antipattern_ok=ok,
        success=diag == 1.0 and res == 1.0 and ok,
        turns_used=transcript.turns_used,
        first_success_turn=scores.get("first_success_turn"),
        aborted=transcript.termination == "aborted",
    )


def run_benchmark(
    tickets: list[Ticket],
    kb: list[KBArticle],
    scenarios: Sequence[ScenarioSpec],
    *,
    variants: Sequence[str] = ALL_VARIANTS,
    seeds: Sequence[int] = (1, 2, 3),
    encoder_config: EncoderConfig | None = None,
    k_clusters: int | None = None,
    params: PolicyParams | None = None,
    jobs: int = 1,
    config_echo: dict | None = None,
    generation_backend=None,
    persona_backend=None,
    judge_backend=None,
) -> BenchmarkResult:
    """Replay every scenario against every variant for every seed.

    One artifact bundle per seed is shared by all variants of that run; the
    aggregation is a deterministic ordered reduction regardless of `jobs`.
    Backends default to None, which keeps the whole run deterministic.
    """
    for v in variants:
        if v not in VARIANT_MASKS:
            raise DataError(f"unknown system variant {v!r}")
    if k_clusters is None:
        keys = {t.ground_truth_cause_key for t in tickets if t.ground_truth_cause_key}
        k_clusters = len(keys) if keys else 6
    params = params or PolicyParams()

    jobs_list: list[tuple[int, str, ScenarioSpec]] = []
    bundles: dict[int, ArtifactBundle] = {}
    for seed in seeds:
        bundles[seed] = build_bundle(
            tickets, kb, encoder_config=encoder_config, k_clusters=k_clusters, seed=seed
        )
        for variant in variants:
            for scenario in scenarios:
                jobs_list.append((seed, variant, scenario))

    def one(job: tuple[int, str, ScenarioSpec]):
        seed, variant, scenario = job
        engine = DialogueEngine(
            bundles[seed], variant=variant, params=params,
            generation_backend=generation_backend,
        )
        transcript = run_replay(scenario, engine, seed=seed, persona_backend=persona_backend)
        return seed, variant, scenario, transcript

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(one, jobs_list))
    else:
        raw = [one(j) for j in jobs_list]
    raw.sort(key=lambda r: (r[0], r[1], r[2].id))

    results: list[EvalResult] = []
    transcripts: list[tuple[int, Transcript]] = []
    notes: list[str] = []
    by_variant: dict[str, list[EvalResult]] = {v: [] for v in variants}
    scen_by_id = {s.id: s for s in scenarios}
    for seed, variant, scenario, transcript in raw:
        if judge_backend is not None:
            res = judge_with_backend(transcript, scen_by_id[scenario.id], judge_backend)
        else:
            res = judge_transcript(transcript, scen_by_id[scenario.id])
        if res.aborted:
            notes.append(
                f"aborted: seed={seed} variant={variant} scenario={scenario.id} error={transcript.error}"
            )
        results.append(res)
        transcripts.append((seed, transcript))
        by_variant[variant].append(res)

    per_system: dict[str, dict] = {}
    for variant in variants:
        agg = _aggregate(by_variant[variant])
        agg["by_seed"] = {}
        for seed in seeds:
            seed_results = [
                r
                for (s, v, sc, tr), r in zip(raw, results)
                if s == seed and v == variant
            ]
            agg["by_seed"][str(seed)] = _aggregate(seed_results)
        per_system[variant] = agg

    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "kind": "benchmark_report",
        "config": config_echo or {},
        "seeds": list(seeds),
        "runs": len(seeds),
        "scenarios": len(scenarios),
        "variants": list(variants),
        "per_system": per_system,
        "notes": notes,
    }
    if "dqa" in per_system and "rag_baseline" in per_system:
        report["deltas_vs_baseline"] = compute_deltas(per_system)
    report["ablation"] = ablation_increments(per_system)
    return BenchmarkResult(report=report, results=results, transcripts=transcripts)


def render_report_text(report: dict) -> str:
    """Aligned plain-text table mirroring the main results table layout."""
    lines = []
    lines.append(
        f"benchmark: {report['scenarios']} scenarios x {report['runs']} runs, seeds {report['seeds']}"
    )
    header = f"{'system':<16} {'success%':>9} {'diag':>6} {'res':>6} {'turns':>7}"
    lines.append(header)
    lines.append("-" * len(header))
    for variant in report["variants"]:
        agg = report["per_system"][variant]
        lines.append(
            f"{variant:<16} {agg['success_rate']:>9.1f} {agg['diagnosis']:>6.2f} "
            f"{agg['resolution']:>6.2f} {agg['turns']:>7.2f}"
        )
    deltas = report.get("deltas_vs_baseline")
    if deltas:
        f = deltas["formatted"]
        lines.append(
            f"delta {deltas['target']} vs {deltas['baseline']}: "
            f"{f['success_pp']}pp success ({f['success_relative_pct']} relative), "
            f"{f['diagnosis_delta']} diag, {f['resolution_delta']} res, "
            f"{f['turns_delta']} turns"
        )
    if report.get("ablation"):
        lines.append("")
        lines.append(f"{'component introduced':<24} {'success delta':>14} {'relative':>10}")
        for row in report["ablation"]:
            f = row["formatted"]
            lines.append(f"{row['component']:<24} {f['success_pp']:>14} {f['relative_pct']:>10}")
    for note in report.get("notes", []):
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def render_report_csv(report: dict) -> str:
    rows = ["system,success_rate,diagnosis,resolution,turns"]
    for variant in report["variants"]:
        agg = report["per_system"][variant]
        rows.append(
            f"{variant},{agg['success_rate']:.4f},{agg['diagnosis']:.4f},"
            f"{agg['resolution']:.4f},{agg['turns']:.4f}"
        )
    return "\n".join(rows) + "\n"
