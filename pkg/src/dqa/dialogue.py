"""Multi-turn diagnostic control loop.

Each turn: rewrite the user utterance into a standalone query, aggregate the
retrieval neighborhood into per-root-cause evidence, fold it into the
persistent diagnostic state (weights recomputed from fresh evidence, never
propagated), re-rank KB articles, and pick the next action from a small
policy: clarify -> investigate -> resolve as support concentrates.

System variants are feature masks over this one engine: conversational query
rewriting on/off, semantic clustering on/off (off = exact-text dedup groups),
and persistent state on/off (off = a throwaway state rebuilt each turn from a
bounded raw history window).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .artifacts import ArtifactBundle
from .encoding import hash_tokenize
from .errors import ConfigError, DataError, DegenerateTextError, SessionConflictError
from .raggg import AggregatedEvidence, aggregate, normalize_weights
from .retrieval import top_k
from .simulator import is_deny_response
from .util import normalize_text, tokens_of

STATE_FORMAT_VERSION = 1

ANAPHORA_MARKERS = frozenset(
    {"it", "that", "this", "still", "same", "again", "they", "them", "nothing", "one"}
)

_CLARIFY_TERM_RE = re.compile(r'related to "([^"]+)"')


@dataclass(frozen=True)
class FeatureMask:
    cqr: bool
    clustering: bool
    state: bool


VARIANT_MASKS: dict[str, FeatureMask] = {
    "rag_no_cqr": FeatureMask(cqr=False, clustering=False, state=False),
    "rag_baseline": FeatureMask(cqr=True, clustering=False, state=False),
    "rag_clustering": FeatureMask(cqr=True, clustering=True, state=False),
    "dqa": FeatureMask(cqr=True, clustering=True, state=True),
}


@dataclass(frozen=True)
class PolicyParams:
    tau_resolve: float = 0.6
    tau_probe: float = 0.35
    k_retrieve: int = 50
    r_max: int = 3
    max_clusters_surfaced: int = 5
    kb_alpha: float = 0.5
    kb_beta: float = 0.5
    kb_top_n: int = 3
    history_window: int = 6
    prompt_budget: int = 2000
    synonyms: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class AgentAction:
    action_type: str  # clarify | investigate | resolve
    text: str
    target_cluster: str | None = None
    proposed_steps: tuple[str, ...] = ()

    def __post_init__(self):
        if self.action_type not in ("clarify", "investigate", "resolve"):
            raise DataError(f"unknown action type {self.action_type!r}")
        if self.action_type == "resolve" and (not self.proposed_steps or not self.target_cluster):
            raise DataError("resolve actions need proposed steps and a target cluster")


@dataclass(frozen=True)
class Utterance:
    role: str  # user | agent
    text: str
    turn: int
    action_type: str | None = None


class DialogueHistory:
    """Alternating utterance record, strictly user first."""

    def __init__(self):
        self.utterances: list[Utterance] = []

    def append_user(self, text: str) -> None:
        if self.utterances and self.utterances[-1].role == "user":
            raise DataError("two consecutive user utterances")
        turn = sum(1 for u in self.utterances if u.role == "user") + 1
        self.utterances.append(Utterance(role="user", text=text, turn=turn))

    def append_agent(self, action: AgentAction) -> None:
        if not self.utterances or self.utterances[-1].role != "user":
            raise DataError("agent utterance must follow a user utterance")
        turn = self.utterances[-1].turn
        self.utterances.append(
            Utterance(role="agent", text=action.text, turn=turn, action_type=action.action_type)
        )

    def last_user_text(self) -> str:
        for u in reversed(self.utterances):
            if u.role == "user":
                return u.text
        return ""

    def window(self, size: int) -> list[Utterance]:
        return self.utterances[-size:]


@dataclass
class Candidate:
    cluster_id: str
    weight: float
    label_text: str
    exemplar_ids: list[str]
    canonical_resolution: str
    resolution_steps: list[str]

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "weight": self.weight,
            "label_text": self.label_text,
            "exemplar_ids": list(self.exemplar_ids),
            "canonical_resolution": self.canonical_resolution,
            "resolution_steps": list(self.resolution_steps),
        }


@dataclass
class DiagnosticState:
    hypothesis: str = "insufficient evidence"
    symptoms: list[str] = field(default_factory=list)
    kb_refs: list[tuple[str, float]] = field(default_factory=list)
    candidates: list[Candidate] = field(default_factory=list)
    turn: int = 0
    attempted_steps: list[str] = field(default_factory=list)  # normalized, ordered
    probed: dict[str, bool] = field(default_factory=dict)  # cluster id -> outcome ok
    probed_texts: list[tuple[str, bool]] = field(default_factory=list)
    asked_terms: list[str] = field(default_factory=list)
    last_query: str = ""
    pending_probe: str | None = None
    pending_probe_text: str = ""

    def copy(self) -> "DiagnosticState":
        return DiagnosticState(
            hypothesis=self.hypothesis,
            symptoms=list(self.symptoms),
            kb_refs=list(self.kb_refs),
            candidates=[replace(c) for c in self.candidates],
            turn=self.turn,
            attempted_steps=list(self.attempted_steps),
            probed=dict(self.probed),
            probed_texts=list(self.probed_texts),
            asked_terms=list(self.asked_terms),
            last_query=self.last_query,
            pending_probe=self.pending_probe,
            pending_probe_text=self.pending_probe_text,
        )

    def argmax_candidate(self) -> Candidate | None:
        if not self.candidates:
            return None
        return min(self.candidates, key=lambda c: (-c.weight, c.cluster_id))

    def to_dict(self) -> dict:
        return {
            "format_version": STATE_FORMAT_VERSION,
            "hypothesis": self.hypothesis,
            "symptoms": list(self.symptoms),
            "kb_refs": [[aid, score] for aid, score in self.kb_refs],
            "candidates": [c.to_dict() for c in self.candidates],
            "turn": self.turn,
            "attempted_steps": list(self.attempted_steps),
            "probed": dict(self.probed),
            "asked_terms": list(self.asked_terms),
            "last_query": self.last_query,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DiagnosticState":
        state = cls(
            hypothesis=data.get("hypothesis", "insufficient evidence"),
            symptoms=list(data.get("symptoms", [])),
            kb_refs=[(a, float(s)) for a, s in data.get("kb_refs", [])],
            turn=int(data.get("turn", 0)),
            attempted_steps=list(data.get("attempted_steps", [])),
            probed={k: bool(v) for k, v in data.get("probed", {}).items()},
            asked_terms=list(data.get("asked_terms", [])),
            last_query=data.get("last_query", ""),
        )
        for c in data.get("candidates", []):
            state.candidates.append(
                Candidate(
                    cluster_id=c["cluster_id"],
                    weight=float(c["weight"]),
                    label_text=c.get("label_text", ""),
                    exemplar_ids=list(c.get("exemplar_ids", [])),
                    canonical_resolution=c.get("canonical_resolution", ""),
                    resolution_steps=list(c.get("resolution_steps", [])),
                )
            )
        return state


# ---------------------------------------------------------------------------
# Lexicon extraction
# ---------------------------------------------------------------------------

# Corpus items more frequent than this carry no diagnostic signal and are
# never extracted as symptoms.
DF_CUTOFF = 0.35


def extract_symptoms(text: str, bundle: ArtifactBundle, cap: int = 6) -> list[str]:
    """Corpus-vocabulary symptom extraction: known distinctive phrases first,
    then distinctive single tokens (corpus-universal items carry no signal)."""
    norm = normalize_text(text)
    if not norm:
        return []
    found: list[str] = []
    for phrase_norm, display in bundle.symptom_phrases.items():
        if bundle.phrase_df.get(phrase_norm, 0.0) >= DF_CUTOFF:
            continue
        if phrase_norm in norm and display not in found:
            found.append(display)
    covered = " ".join(normalize_text(p) for p in found)
    for tok in hash_tokenize(text):
        df = bundle.token_df.get(tok)
        if df is None or df >= DF_CUTOFF:
            continue
        if tok in covered or tok in found:
            continue
        found.append(tok)
    return found[:cap]


_ATTEMPT_CUE_RE = re.compile(r"\b(tried|attempted|already did)\b")


def extract_attempted(text: str, bundle: ArtifactBundle) -> list[str]:
    """Normalized resolution-step phrases the user reports having tried."""
    norm = normalize_text(text)
    if not _ATTEMPT_CUE_RE.search(norm):
        return []
    return [p for p in bundle.step_phrases if p in norm]


# ---------------------------------------------------------------------------
# Query rewriting
# ---------------------------------------------------------------------------

def is_underspecified(
    utterance: str,
    bundle: ArtifactBundle | None = None,
    known_context: str = "",
) -> bool:
    """A turn is underspecified when it is too short to stand alone or leans
    on anaphora without new corpus-recognizable content. `known_context` is
    what the session already retrieves on; restating it (e.g. a verbose user
    recapping the original complaint) adds nothing new."""
    toks = tokens_of(utterance)
    if len(toks) < 4:
        return True
    if bundle is None:
        return any(t in ANAPHORA_MARKERS for t in toks)
    vocab = [t for t in hash_tokenize(utterance) if t in bundle.token_df]
    if not vocab:
        return True
    if not any(t in ANAPHORA_MARKERS for t in toks):
        return False
    known = set(hash_tokenize(known_context)) if known_context else set()
    novel = {t for t in vocab if t not in known}
    return len(novel) < 2


def _known_context(state: DiagnosticState) -> str:
    return f"{state.last_query} {' '.join(state.symptoms)}"


def _apply_synonyms(utterance: str, synonyms: dict[str, str]) -> str:
    if not synonyms:
        return utterance
    toks = tokens_of(utterance)
    if not any(t in synonyms for t in toks):
        return utterance
    return " ".join(synonyms.get(t, t) for t in toks)


def _join_segments(parts: list[str]) -> str:
    """Compose query segments with order-preserving dedup so repeated
    rewrites stay bounded instead of compounding."""
    seen: set[str] = set()
    out: list[str] = []
    for part in parts:
        for seg in part.split("; "):
            seg = seg.strip()
            key = normalize_text(seg)
            if seg and key and key not in seen:
                seen.add(key)
                out.append(seg)
    return "; ".join(out)


def rewrite_query(
    utterance: str,
    history: DialogueHistory,
    state: DiagnosticState,
    synonyms: dict[str, str] | None = None,
    bundle: ArtifactBundle | None = None,
) -> str:
    """State-conditioned rewriter. Underspecified follow-ups are replaced by
    the previous standalone query plus the most recent symptoms plus the
    dominant candidate label, which keeps retrieval anchored on the current
    diagnostic context instead of reverting to generic failure modes."""
    utterance = _apply_synonyms(utterance.strip(), synonyms or {})
    if not tokens_of(utterance):
        return state.last_query
    if is_underspecified(utterance, bundle, known_context=_known_context(state)):
        parts: list[str] = []
        if state.last_query:
            parts.append(state.last_query)
        parts.extend(state.symptoms[-3:])
        top = state.argmax_candidate()
        if top is not None:
            parts.append(top.label_text)
        return _join_segments(parts) if parts else utterance
    norm_utt = normalize_text(utterance)
    extra = [s for s in state.symptoms[::-1] if normalize_text(s) not in norm_utt][:3]
    return utterance if not extra else _join_segments([utterance, *extra])


def stateless_rewrite(
    utterance: str,
    window_user_texts: list[str],
    bundle: ArtifactBundle,
) -> str:
    """Window-based rewriter for variants without persistent state: the
    utterance plus salient terms recovered from the recent raw history."""
    terms: list[str] = []
    for text in reversed(window_user_texts):
        for s in extract_symptoms(text, bundle):
            if s not in terms:
                terms.append(s)
    if not tokens_of(utterance):
        return "; ".join(terms[:6]) if terms else utterance
    if is_underspecified(utterance, bundle, known_context=" ".join(terms)):
        parts = [utterance] + terms[:6]
        return "; ".join(parts)
    norm_utt = normalize_text(utterance)
    extra = [t for t in terms if normalize_text(t) not in norm_utt][:3]
    return utterance if not extra else f"{utterance}; {'; '.join(extra)}"


# ---------------------------------------------------------------------------
# State update and KB ranking
# ---------------------------------------------------------------------------

def rank_kb(
    state: DiagnosticState,
    kb_index,
    rewritten_query: str,
    *,
    encoder,
    candidate_vec=None,
    alpha: float = 0.5,
    beta: float = 0.5,
    top_n: int = 3,
) -> list[tuple[str, float]]:
    """score = alpha * cos(article, query) + beta * cos(article, dominant
    candidate direction); the beta term is skipped when no candidates exist."""
    if kb_index is None or len(kb_index) == 0:
        return []
    try:
        qvec = encoder.encode(rewritten_query) if rewritten_query.strip() else None
    except (DegenerateTextError, DataError):
        qvec = None
    if qvec is None and candidate_vec is None:
        return []
    scores: list[tuple[str, float]] = []
    q_scores = kb_index.matrix @ qvec if qvec is not None else None
    c_scores = kb_index.matrix @ candidate_vec if candidate_vec is not None else None
    for i, aid in enumerate(kb_index.ids):
        score = 0.0
        if q_scores is not None:
            score += alpha * float(q_scores[i])
        if c_scores is not None:
            score += beta * float(c_scores[i])
        scores.append((aid, score))
    scores.sort(key=lambda p: (-p[1], p[0]))
    return scores[:top_n]


def update_state(
    state: DiagnosticState,
    evidence: AggregatedEvidence | None,
    history: DialogueHistory,
    *,
    bundle: ArtifactBundle,
    params: PolicyParams = PolicyParams(),
    rewritten_query: str = "",
) -> DiagnosticState:
    """One diagnostic state update: extend symptoms/attempted steps from the
    latest user turn, resolve any pending probe outcome, replace candidates
    with freshly normalized evidence weights, regenerate the hypothesis, and
    re-rank KB articles."""
    new = state.copy()
    latest = history.last_user_text()

    for sym in extract_symptoms(latest, bundle):
        if sym not in new.symptoms:
            new.symptoms.append(sym)
    for step in extract_attempted(latest, bundle):
        if step not in new.attempted_steps:
            new.attempted_steps.append(step)

    if state.pending_probe is not None:
        consistent = not is_deny_response(latest)
        new.probed[state.pending_probe] = consistent
        if state.pending_probe_text:
            new.probed_texts.append((state.pending_probe_text, consistent))
        new.pending_probe = None
        new.pending_probe_text = ""

    if evidence is None or evidence.is_empty:
        new.candidates = []
        new.hypothesis = "insufficient evidence"
    else:
        weights = normalize_weights(evidence).weights
        cands = []
        for ce in evidence.support:
            cands.append(
                Candidate(
                    cluster_id=ce.cluster_id,
                    weight=weights[ce.cluster_id],
                    label_text=ce.label_text,
                    exemplar_ids=[tid for tid, _ in ce.representatives],
                    canonical_resolution=ce.canonical_resolution,
                    resolution_steps=list(ce.resolution_steps),
                )
            )
        cands.sort(key=lambda c: (-c.weight, c.cluster_id))
        new.candidates = cands
        top = cands[0]
        shown = ", ".join(new.symptoms[:4]) if new.symptoms else "none reported"
        new.hypothesis = (
            f"likely root cause: {top.label_text} "
            f"(support {top.weight:.2f}); reported symptoms: {shown}"
        )

    if bundle.kb_index is not None:
        candidate_vec = None
        top = new.argmax_candidate()
        if top is not None and evidence is not None:
            members = next(
                (ce.member_ids for ce in evidence.support if ce.cluster_id == top.cluster_id),
                (),
            )
            candidate_vec = bundle.candidate_vector(members)
        new.kb_refs = rank_kb(
            new,
            bundle.kb_index,
            rewritten_query or new.last_query,
            encoder=bundle.encoder,
            candidate_vec=candidate_vec,
            alpha=params.kb_alpha,
            beta=params.kb_beta,
            top_n=params.kb_top_n,
        )

    new.turn = state.turn + 1
    if rewritten_query:
        new.last_query = rewritten_query
    return new


# ---------------------------------------------------------------------------
# Action selection
# ---------------------------------------------------------------------------

def _probe_state(state: DiagnosticState, cand: Candidate) -> bool | None:
    """None = never probed; True/False = probed with (in)consistent outcome."""
    if cand.cluster_id in state.probed:
        return state.probed[cand.cluster_id]
    label = normalize_text(cand.label_text)
    for text, ok in state.probed_texts:
        if label and label in text:
            return ok
    return None


def _discriminative_term(
    state: DiagnosticState,
    cands: list[Candidate],
    evidence: AggregatedEvidence | None,
    bundle: ArtifactBundle,
) -> str | None:
    """The term whose per-ticket frequency differs most between the top two
    candidate clusters; the most frequent unasked own-term for a lone one."""

    def freqs(cand: Candidate) -> dict[str, float]:
        if cand.cluster_id in bundle.model.sizes:
            return bundle.cluster_term_freq(cand.cluster_id)
        members = ()
        if evidence is not None:
            members = next(
                (ce.member_ids for ce in evidence.support if ce.cluster_id == cand.cluster_id),
                (),
            )
        return bundle.term_freq_for(members)

    asked = set(state.asked_terms)
    confirmed = set(" ".join(normalize_text(s) for s in state.symptoms).split())

    def usable(term: str) -> bool:
        if term in asked or term in confirmed:
            return False
        # corpus-universal tokens separate nothing worth asking about
        return bundle.token_df.get(term, 0.0) < DF_CUTOFF

    scored: list[tuple[float, str]] = []
    if len(cands) >= 2:
        f1, f2 = freqs(cands[0]), freqs(cands[1])
        for term in sorted(set(f1) | set(f2)):
            if not usable(term):
                continue
            gap = abs(f1.get(term, 0.0) - f2.get(term, 0.0))
            if gap > 0:
                scored.append((gap, term))
    elif len(cands) == 1:
        for term, freq in freqs(cands[0]).items():
            if not usable(term):
                continue
            if freq > 0:
                scored.append((freq, term))
    if not scored:
        return None
    scored.sort(key=lambda p: (-p[0], p[1]))
    return scored[0][1]


_GENERIC_CLARIFY = (
    "Could you describe exactly what you see, including any error message text "
    "and when the problem started?"
)


def select_action(
    state: DiagnosticState,
    evidence: AggregatedEvidence | None,
    *,
    bundle: ArtifactBundle,
    params: PolicyParams = PolicyParams(),
) -> AgentAction:
    """Deterministic policy over the hypothesis weights.

    resolve: dominant candidate over tau_resolve that was already probed with
    a consistent outcome; proposed steps exclude anything the user tried.
    investigate: strongest unprobed candidate over tau_probe.
    clarify: otherwise, ask about the term separating the top two candidates.
    """
    cands = sorted(state.candidates, key=lambda c: (-c.weight, c.cluster_id))
    attempted = set(state.attempted_steps)

    if cands:
        top = cands[0]
        if top.weight >= params.tau_resolve and _probe_state(state, top) is True:
            steps = tuple(
                s for s in top.resolution_steps if normalize_text(s) not in attempted
            )
            if not steps:
                steps = (f"escalate to a specialist with diagnosis: {top.label_text}",)
            listed = " ".join(f"{i}. {s}." for i, s in enumerate(steps, start=1))
            text = (
                f"Based on the accumulated evidence, the most likely root cause is: "
                f"{top.label_text}. Please apply these resolution steps: {listed}"
            )
            return AgentAction(
                action_type="resolve",
                text=text,
                target_cluster=top.cluster_id,
                proposed_steps=steps,
            )

        for cand in cands:
            if cand.weight < params.tau_probe:
                break
            if _probe_state(state, cand) is not None:
                continue
            text = (
                f"Let's verify the leading hypothesis: {cand.label_text}. "
                f"Please check the {cand.label_text} and tell me exactly what you find."
            )
            if any(p in normalize_text(text) for p in attempted):
                continue
            return AgentAction(
                action_type="investigate", text=text, target_cluster=cand.cluster_id
            )

    # Clarify against hypotheses that are still live: a cluster whose probe
    # came back inconsistent is ruled out, so asking about its terms wastes
    # the user's time.
    viable = [c for c in cands if _probe_state(state, c) is not False]
    term = _discriminative_term(state, viable or cands, evidence, bundle)
    if term is None:
        return AgentAction(action_type="clarify", text=_GENERIC_CLARIFY)
    text = (
        f'One more question: do you also notice anything related to "{term}"? '
        f"For example an error message mentioning {term}."
    )
    return AgentAction(action_type="clarify", text=text)


# ---------------------------------------------------------------------------
# State prompt serialization
# ---------------------------------------------------------------------------

def serialize_state_prompt(
    state: DiagnosticState,
    evidence: AggregatedEvidence | None,
    history: DialogueHistory,
    budget: int = 2000,
    max_candidates: int = 5,
) -> str:
    """Deterministic sectioned rendering of the diagnostic state, bounded to
    `budget` characters so generation context stays fixed-size."""
    lines: list[str] = []
    lines.append("HYPOTHESIS:")
    lines.append(state.hypothesis or "none")
    lines.append("SYMPTOMS:")
    if state.symptoms:
        lines.extend(f"- {s}" for s in state.symptoms)
    else:
        lines.append("none")
    lines.append("CANDIDATES:")
    cands = sorted(state.candidates, key=lambda c: (-c.weight, c.cluster_id))[:max_candidates]
    if cands:
        for c in cands:
            ex = ",".join(c.exemplar_ids) or "-"
            lines.append(f"- {c.label_text} (weight {c.weight:.3f}) exemplars: {ex}")
    else:
        lines.append("none")
    lines.append("KB:")
    if state.kb_refs:
        lines.extend(f"- {aid} (score {score:.3f})" for aid, score in state.kb_refs)
    else:
        lines.append("none")
    lines.append("RECENT TURNS:")
    recent = history.utterances[-4:]
    if recent:
        lines.extend(f"[{u.role}] {u.text}" for u in recent)
    else:
        lines.append("none")
    rendered = "\n".join(lines)
    if len(rendered) > budget:
        rendered = rendered[: max(0, budget - 1)] + "…"
    return rendered


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

class DialogueEngine:
    """One diagnostic session: owns the history and (for stateful variants)
    the persistent diagnostic state. Shared artifacts stay immutable."""

    def __init__(
        self,
        bundle: ArtifactBundle,
        variant: str = "dqa",
        params: PolicyParams | None = None,
        generation_backend=None,
    ):
        if variant not in VARIANT_MASKS:
            raise ConfigError(f"unknown system variant {variant!r}")
        self.bundle = bundle
        self.variant = variant
        self.mask = VARIANT_MASKS[variant]
        self.params = params or PolicyParams()
        self.history = DialogueHistory()
        self.state = DiagnosticState()
        self.keeps_state = self.mask.state
        self.terminated = False
        self.backend = generation_backend

    # -- stateless reconstruction ------------------------------------------

    def _rebuild_from_window(self) -> DiagnosticState:
        state = DiagnosticState()
        window = self.history.window(self.params.history_window)
        prev_agent: Utterance | None = None
        for utt in window:
            if utt.role == "user":
                for sym in extract_symptoms(utt.text, self.bundle):
                    if sym not in state.symptoms:
                        state.symptoms.append(sym)
                for step in extract_attempted(utt.text, self.bundle):
                    if step not in state.attempted_steps:
                        state.attempted_steps.append(step)
                if prev_agent is not None and prev_agent.action_type == "investigate":
                    state.probed_texts.append(
                        (normalize_text(prev_agent.text), not is_deny_response(utt.text))
                    )
                prev_agent = None
            else:
                if utt.action_type == "clarify":
                    m = _CLARIFY_TERM_RE.search(utt.text)
                    if m and m.group(1) not in state.asked_terms:
                        state.asked_terms.append(m.group(1))
                prev_agent = utt
        state.turn = sum(1 for u in self.history.utterances if u.role == "agent")
        return state

    # -- one turn ------------------------------------------------------------

    def _rewrite(self, user_text: str, base: DiagnosticState) -> str:
        if not self.mask.cqr:
            return user_text
        if self.mask.state:
            return rewrite_query(
                user_text,
                self.history,
                base,
                synonyms=dict(self.params.synonyms),
                bundle=self.bundle,
            )
        window = self.history.window(self.params.history_window)
        prior_user_texts = [u.text for u in window[:-1] if u.role == "user"]
        return stateless_rewrite(user_text, prior_user_texts, self.bundle)

    def _aggregate(self, query: str) -> AggregatedEvidence | None:
        if not query.strip():
            return None
        grouping = "model" if self.mask.clustering else "dedup"
        try:
            return aggregate(
                query,
                encoder=self.bundle.encoder,
                index=self.bundle.ticket_index,
                model=self.bundle.model,
                tickets=self.bundle.tickets,
                k_retrieve=self.params.k_retrieve,
                r_max=self.params.r_max,
                max_clusters_surfaced=self.params.max_clusters_surfaced,
                grouping=grouping,
            )
        except DegenerateTextError:
            return None

    def step(self, user_text: str) -> tuple[AgentAction, DiagnosticState]:
        """Run one full turn; returns the action and the post-turn state.

        Atomic: a failure mid-turn leaves history and state exactly as they
        were before the call."""
        if self.terminated:
            raise SessionConflictError("session already terminated by a resolve action")
        self.history.append_user(user_text)
        try:
            return self._step_inner(user_text)
        except Exception:
            self.history.utterances.pop()
            raise

    def _step_inner(self, user_text: str) -> tuple[AgentAction, DiagnosticState]:
        base = self.state if self.mask.state else self._rebuild_from_window()
        query = self._rewrite(user_text, base)
        evidence = self._aggregate(query)
        # Underspecified turns borrow the previous standalone query; only a
        # turn with novel content establishes a new base query for rewrites.
        is_base_turn = not is_underspecified(
            user_text, self.bundle, known_context=_known_context(base)
        )
        state = update_state(
            base,
            evidence,
            self.history,
            bundle=self.bundle,
            params=self.params,
            rewritten_query=query if is_base_turn else "",
        )
        action = select_action(state, evidence, bundle=self.bundle, params=self.params)
        # Bookkeeping reads the canonical action; a generation backend may
        # re-phrase the surface text afterwards but cannot change what was
        # asked or probed.
        if action.action_type == "clarify":
            m = _CLARIFY_TERM_RE.search(action.text)
            if m and m.group(1) not in state.asked_terms:
                state.asked_terms.append(m.group(1))
        elif action.action_type == "investigate":
            state.pending_probe = action.target_cluster
            state.pending_probe_text = normalize_text(action.text)
        if self.backend is not None:
            action = self._rephrase(action, state, evidence)
        self.history.append_agent(action)
        if self.mask.state:
            self.state = state
        if action.action_type == "resolve":
            self.terminated = True
        return action, state

    def export_session(self) -> dict:
        """Versioned record of everything needed to resume this session."""
        return {
            "format_version": STATE_FORMAT_VERSION,
            "variant": self.variant,
            "terminated": self.terminated,
            "state": self.state.to_dict(),
            "history": [
                {"role": u.role, "text": u.text, "turn": u.turn, "action_type": u.action_type}
                for u in self.history.utterances
            ],
        }

    @classmethod
    def restore_session(cls, bundle: ArtifactBundle, record: dict,
                        params: PolicyParams | None = None,
                        generation_backend=None) -> "DialogueEngine":
        engine = cls(bundle, variant=record.get("variant", "dqa"), params=params,
                     generation_backend=generation_backend)
        engine.terminated = bool(record.get("terminated", False))
        engine.state = DiagnosticState.from_dict(record.get("state", {}))
        for u in record.get("history", []):
            engine.history.utterances.append(
                Utterance(role=u["role"], text=u["text"], turn=u["turn"],
                          action_type=u.get("action_type"))
            )
        return engine

    def _rephrase(self, action: AgentAction, state: DiagnosticState, evidence) -> AgentAction:
        """Let a generation backend re-phrase the action text. The action type,
        target, and proposed steps are pinned; only wording may change."""
        prompt = (
            serialize_state_prompt(state, evidence, self.history, self.params.prompt_budget)
            + f"\nACTION TYPE: {action.action_type}\nDRAFT: {action.text}\n"
            "Rewrite the draft in your own words without changing its intent."
        )
        try:
            text = self.backend.complete(prompt)
        except Exception:
            return action
        if not text or not text.strip():
            return action
        if action.action_type == "resolve":
            # Keep the canonical step list visible regardless of phrasing.
            listed = " ".join(
                f"{i}. {s}." for i, s in enumerate(action.proposed_steps, start=1)
            )
            text = f"{text.strip()} Steps: {listed}"
        return AgentAction(
            action_type=action.action_type,
            text=text.strip(),
            target_cluster=action.target_cluster,
            proposed_steps=action.proposed_steps,
        )
