"""Replay-based evaluation environment: scenario specs with personas and
deterministic transition tables, the simulated user, turn-cap enforcement,
and transcript capture.

The default simulated user is table-driven, not model-driven: agent text is
matched against probe patterns (longest pattern first), matched transitions
emit outcome text plus machine-readable fact annotations, and unmatched
probes yield a persona-styled "no change" response. This keeps judging exact
and runs reproducible; a model-backed persona can be plugged in through the
generation backend protocol.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import DataError
from .util import dump_json, normalize_text, strip_fact_annotations, tokens_of, write_jsonl

SCENARIO_FORMAT_VERSION = 1
TRANSCRIPT_FORMAT_VERSION = 1
MAX_TURNS = 15

_DENY_MARKERS = [
    "appears normal",
    "looks normal",
    "no change",
    "didn t help",
    "did not help",
    "same issue persists",
    "don t know",
    "not sure",
    "nothing new",
    "no luck",
]


def is_deny_response(text: str) -> bool:
    """True when a user reply reports no progress / no confirmation."""
    norm = normalize_text(text)
    return any(marker in norm for marker in _DENY_MARKERS)


@dataclass(frozen=True)
class Persona:
    style: str = "terse"  # terse | verbose | frustrated
    knowledge: str = "novice"  # novice | expert
    priorities: str = ""


@dataclass(frozen=True)
class Fact:
    fact_id: str
    description: str
    eliciting_triggers: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class RequiredStep:
    step_id: str
    description: str
    match_pattern: str  # normalized phrase, matched as substring of agent text


@dataclass(frozen=True)
class Transition:
    id: str
    pattern: list[str]  # all tokens must appear in the agent utterance
    outcome_text: str
    fact_ids: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Antipattern:
    kind: str  # redundant_step | contradicted_path | false_timeline
    params: dict = field(default_factory=dict)


@dataclass
class ScenarioSpec:
    id: str
    initial_complaint: str
    ground_truth_cause_key: str
    persona: Persona
    required_facts: list[Fact]
    required_steps: list[RequiredStep]
    antipattern: Antipattern
    transitions: list[Transition]
    already_attempted: list[str] = field(default_factory=list)
    difficulty: str = ""

    def validate(self) -> None:
        fact_ids = {f.fact_id for f in self.required_facts}
        if len(fact_ids) != len(self.required_facts):
            raise DataError(f"scenario {self.id}: duplicate fact ids")
        reachable = set()
        for tr in self.transitions:
            for fid in tr.fact_ids:
                if fid not in fact_ids:
                    raise DataError(
                        f"scenario {self.id}: transition {tr.id} emits unknown fact {fid!r}"
                    )
                reachable.add(fid)
        for f in self.required_facts:
            if f.eliciting_triggers:
                reachable.add(f.fact_id)
        missing = fact_ids - reachable
        if missing:
            raise DataError(f"scenario {self.id}: unreachable facts {sorted(missing)}")
        if self.antipattern.kind not in ("redundant_step", "contradicted_path", "false_timeline"):
            raise DataError(f"scenario {self.id}: unknown antipattern {self.antipattern.kind!r}")

    def to_dict(self) -> dict:
        return {
            "format_version": SCENARIO_FORMAT_VERSION,
            "id": self.id,
            "initial_complaint": self.initial_complaint,
            "ground_truth_cause_key": self.ground_truth_cause_key,
            "persona": {
                "style": self.persona.style,
                "knowledge": self.persona.knowledge,
                "priorities": self.persona.priorities,
            },
            "required_facts": [
                {
                    "fact_id": f.fact_id,
                    "description": f.description,
                    "eliciting_triggers": list(f.eliciting_triggers),
                }
                for f in self.required_facts
            ],
            "required_steps": [
                {
                    "step_id": s.step_id,
                    "description": s.description,
                    "match_pattern": s.match_pattern,
                }
                for s in self.required_steps
            ],
            "antipattern": {"kind": self.antipattern.kind, "params": self.antipattern.params},
            "transitions": [
                {
                    "id": t.id,
                    "pattern": list(t.pattern),
                    "outcome_text": t.outcome_text,
                    "fact_ids": list(t.fact_ids),
                }
                for t in self.transitions
            ],
            "already_attempted": list(self.already_attempted),
            "difficulty": self.difficulty,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        spec = cls(
            id=data["id"],
            initial_complaint=data["initial_complaint"],
            ground_truth_cause_key=data["ground_truth_cause_key"],
            persona=Persona(**data.get("persona", {})),
            required_facts=[Fact(**f) for f in data.get("required_facts", [])],
            required_steps=[RequiredStep(**s) for s in data.get("required_steps", [])],
            antipattern=Antipattern(**data["antipattern"]),
            transitions=[Transition(**t) for t in data.get("transitions", [])],
            already_attempted=list(data.get("already_attempted", [])),
            difficulty=data.get("difficulty", ""),
        )
        spec.validate()
        return spec


def write_scenarios(path: str | Path, scenarios: list[ScenarioSpec]) -> int:
    return write_jsonl(path, (s.to_dict() for s in scenarios))


def load_scenarios(path: str | Path) -> list[ScenarioSpec]:
    out: list[ScenarioSpec] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            spec = ScenarioSpec.from_dict(json.loads(line))
            if spec.id in seen:
                raise DataError(f"duplicate scenario id {spec.id!r} at line {lineno}")
            seen.add(spec.id)
            out.append(spec)
    return out


# ---------------------------------------------------------------------------
# Simulated user
# ---------------------------------------------------------------------------

class SimulatedUser:
    """Deterministic persona-styled user over the scenario transition table.

    A persona generation backend may re-phrase the surface text; the fact
    annotations are appended mechanically afterwards, so the post-hoc
    extraction pass (and therefore judging) stays exact either way.
    """

    def __init__(self, scenario: ScenarioSpec, persona_backend=None):
        self.scenario = scenario
        self.elicited: set[str] = set()
        self.missed_clarifies = 0
        self.persona_backend = persona_backend

    def _style(self, text: str) -> str:
        persona = self.scenario.persona
        if persona.style == "verbose":
            text = f"{text} To recap the original issue: {self.scenario.initial_complaint}"
        elif persona.style == "frustrated":
            text = f"Look, this is really blocking my work. {text}"
        if self.persona_backend is not None:
            prompt = (
                f"PERSONA: style={persona.style} knowledge={persona.knowledge} "
                f"priorities={persona.priorities}\nSAY THIS IN CHARACTER: {text}"
            )
            try:
                rephrased = self.persona_backend.complete(prompt)
            except Exception:
                return text
            if rephrased and rephrased.strip():
                return rephrased.strip()
        return text

    def _annotate(self, text: str, fact_ids: list[str]) -> str:
        return text + "".join(f" [[fact:{fid}]]" for fid in fact_ids)

    def respond(self, agent_action) -> tuple[str, list[str]]:
        """Match the agent action against the transition table and triggers.

        Returns (annotated user text, newly emitted fact ids). Facts already
        elicited are never re-emitted; persona styling changes surface text
        only, never the emitted fact set.
        """
        agent_tokens = set(tokens_of(agent_action.text))

        for tr in sorted(self.scenario.transitions, key=lambda t: (-len(t.pattern), t.id)):
            if tr.pattern and all(tok in agent_tokens for tok in tr.pattern):
                new_facts = [fid for fid in tr.fact_ids if fid not in self.elicited]
                self.elicited.update(new_facts)
                return self._annotate(self._style(tr.outcome_text), new_facts), new_facts

        if getattr(agent_action, "action_type", "") == "clarify":
            for fact in self.scenario.required_facts:
                if fact.fact_id in self.elicited or not fact.eliciting_triggers:
                    continue
                if any(trigger in agent_tokens for trigger in fact.eliciting_triggers):
                    self.elicited.add(fact.fact_id)
                    text = self._style(f"Yes, exactly: {fact.description}.")
                    return self._annotate(text, [fact.fact_id]), [fact.fact_id]
            self.missed_clarifies += 1
            if (
                self.scenario.persona.knowledge == "expert"
                and self.missed_clarifies % 2 == 0
            ):
                for fact in self.scenario.required_facts:
                    if fact.fact_id not in self.elicited and fact.eliciting_triggers:
                        self.elicited.add(fact.fact_id)
                        text = self._style(
                            f"No luck with that question. But I did notice: {fact.description}."
                        )
                        return self._annotate(text, [fact.fact_id]), [fact.fact_id]
            return self._style("Not sure, I don't know about that."), []

        return self._style("I checked, but everything appears normal. No change."), []


def user_respond(scenario: ScenarioSpec, agent_action, session_memory: SimulatedUser | None = None):
    """Functional wrapper over SimulatedUser for one-shot use in tests/tools."""
    user = session_memory or SimulatedUser(scenario)
    return user.respond(agent_action)


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------

@dataclass
class Transcript:
    scenario_id: str
    system_id: str
    utterances: list[dict]  # {role, text, turn, action_type?}
    per_turn_states: list[dict]
    elicited_fact_ids: list[str]
    provided_step_ids: list[str]
    termination: str  # resolved | turn_cap | aborted
    turns_used: int
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "format_version": TRANSCRIPT_FORMAT_VERSION,
            "scenario_id": self.scenario_id,
            "system_id": self.system_id,
            "utterances": self.utterances,
            "per_turn_states": self.per_turn_states,
            "elicited_fact_ids": self.elicited_fact_ids,
            "provided_step_ids": self.provided_step_ids,
            "termination": self.termination,
            "turns_used": self.turns_used,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Transcript":
        return cls(
            scenario_id=data["scenario_id"],
            system_id=data["system_id"],
            utterances=data["utterances"],
            per_turn_states=data.get("per_turn_states", []),
            elicited_fact_ids=data.get("elicited_fact_ids", []),
            provided_step_ids=data.get("provided_step_ids", []),
            termination=data["termination"],
            turns_used=data["turns_used"],
            error=data.get("error"),
        )


def save_transcript(transcript: Transcript, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(transcript.to_dict()) + "\n", encoding="utf-8")


def load_transcript(path: str | Path) -> Transcript:
    return Transcript.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def match_step_ids(scenario: ScenarioSpec, agent_text: str) -> list[str]:
    norm = normalize_text(agent_text)
    return [s.step_id for s in scenario.required_steps if s.match_pattern in norm]


def run_replay(scenario: ScenarioSpec, engine, seed: int = 0, max_turns: int = MAX_TURNS,
               persona_backend=None) -> Transcript:
    """Run the alternating replay loop until the system resolves or the cap.

    The engine sees user text with fact annotations stripped; the transcript
    keeps the annotated text so judging can recompute everything from the
    record alone. Fully deterministic under the default backends.
    """
    user = SimulatedUser(scenario, persona_backend=persona_backend)
    utterances: list[dict] = []
    per_turn_states: list[dict] = []
    elicited: list[str] = []
    provided_steps: list[str] = []
    termination = "turn_cap"
    turns = 0
    error: str | None = None

    user_text = scenario.initial_complaint
    try:
        for t in range(1, max_turns + 1):
            utterances.append({"role": "user", "text": user_text, "turn": t})
            action, state = engine.step(strip_fact_annotations(user_text))
            turns = t
            utterances.append(
                {
                    "role": "agent",
                    "text": action.text,
                    "turn": t,
                    "action_type": action.action_type,
                }
            )
            if getattr(engine, "keeps_state", False):
                per_turn_states.append(state.to_dict())
            for sid in match_step_ids(scenario, action.text):
                if sid not in provided_steps:
                    provided_steps.append(sid)
            if action.action_type == "resolve":
                termination = "resolved"
                break
            if t == max_turns:
                termination = "turn_cap"
                break
            user_text, new_facts = user.respond(action)
            for fid in new_facts:
                if fid not in elicited:
                    elicited.append(fid)
    except Exception as exc:  # system handle failure: mark aborted, keep partial record
        termination = "aborted"
        error = f"{type(exc).__name__}: {exc}"

    return Transcript(
        scenario_id=scenario.id,
        system_id=getattr(engine, "variant", "unknown"),
        utterances=utterances,
        per_turn_states=per_turn_states,
        elicited_fact_ids=sorted(elicited),
        provided_step_ids=sorted(provided_steps),
        termination=termination,
        turns_used=turns,
        error=error,
    )
