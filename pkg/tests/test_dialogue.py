import numpy as np
import pytest

from dqa.dialogue import (
    VARIANT_MASKS,
    AgentAction,
    Candidate,
    DiagnosticState,
    DialogueEngine,
    DialogueHistory,
    PolicyParams,
    extract_attempted,
    extract_symptoms,
    is_underspecified,
    rank_kb,
    rewrite_query,
    select_action,
    serialize_state_prompt,
    stateless_rewrite,
    update_state,
)
from dqa.errors import DataError, SessionConflictError
from dqa.raggg import aggregate, normalize_weights
from dqa.retrieval import top_k
from dqa.simulator import run_replay
from dqa.util import normalize_text


def _history(*texts: str) -> DialogueHistory:
    h = DialogueHistory()
    for i, text in enumerate(texts):
        if i % 2 == 0:
            h.append_user(text)
        else:
            h.append_agent(AgentAction(action_type="clarify", text=text))
    return h


def _candidate(cid, weight, label, steps=("restart the vpn service", "repair the expired certificate")):
    return Candidate(
        cluster_id=cid,
        weight=weight,
        label_text=label,
        exemplar_ids=["T1"],
        canonical_resolution="; ".join(steps),
        resolution_steps=list(steps),
    )


# -- rewriting ----------------------------------------------------------------

def test_first_turn_contains_complaint_verbatim(bundle):
    complaint = "vpn keeps failing with a certificate warning"
    out = rewrite_query(complaint, _history(), DiagnosticState(), bundle=bundle)
    assert complaint in out


def test_vague_followup_includes_dominant_label(bundle):
    state = DiagnosticState(
        last_query="vpn keeps failing with a certificate warning",
        candidates=[_candidate("c000", 0.8, "expired VPN certificate"),
                    _candidate("c001", 0.2, "wifi driver corrupted")],
    )
    out = rewrite_query("still broken", _history(), state, bundle=bundle)
    assert "expired VPN certificate" in out
    assert "vpn keeps failing with a certificate warning" in out


def test_empty_utterance_returns_previous_query(bundle):
    state = DiagnosticState(last_query="printer password outdated")
    assert rewrite_query("", _history(), state, bundle=bundle) == "printer password outdated"


def test_synonym_table_applied(bundle):
    out = rewrite_query(
        "the wireless lan is broken badly",
        _history(),
        DiagnosticState(),
        synonyms={"wireless": "wifi"},
        bundle=bundle,
    )
    assert "wifi" in out


def test_rewrite_does_not_compound(bundle):
    state = DiagnosticState(
        last_query="a; b; c",
        symptoms=["b", "c"],
        candidates=[_candidate("c000", 1.0, "c")],
    )
    out = rewrite_query("still same", _history(), state, bundle=bundle)
    assert out == "a; b; c"


def test_underspecified_detection(bundle):
    assert is_underspecified("still broken", bundle)
    assert is_underspecified("nope", bundle)
    assert is_underspecified("not sure, i don't know about that", bundle)
    assert not is_underspecified(
        "I checked the laptop disk: it is definitely full. The diagnostic output flags the disk as full.",
        bundle,
    )
    assert not is_underspecified("vpn keeps failing with a certificate warning", bundle)


def test_stateless_rewrite_pulls_window_terms(bundle):
    out = stateless_rewrite(
        "still broken",
        ["vpn keeps failing with a certificate warning", "it worked fine yesterday"],
        bundle,
    )
    assert "certificate" in out
    # corpus-universal generic phrases are not dragged back in
    assert "worked fine yesterday" not in out


# -- extraction ---------------------------------------------------------------

def test_extract_symptoms_phrases_and_tokens(bundle):
    found = extract_symptoms("the vpn keeps failing with a certificate warning today", bundle)
    assert "vpn keeps failing with a certificate warning" in found


def test_extract_symptoms_skips_generic(bundle):
    assert extract_symptoms("it worked fine yesterday", bundle) == []


def test_extract_attempted(bundle):
    steps = extract_attempted("I already tried: restart the vpn service.", bundle)
    assert "restart the vpn service" in steps
    assert extract_attempted("please restart the vpn service", bundle) == []


# -- update_state ---------------------------------------------------------------

def _evidence(bundle, query, **kw):
    return aggregate(
        query,
        encoder=bundle.encoder,
        index=bundle.ticket_index,
        model=bundle.model,
        tickets=bundle.tickets,
        **kw,
    )


def test_update_state_empty_evidence_keeps_symptoms(bundle):
    history = _history("vpn keeps failing with a certificate warning")
    state = update_state(DiagnosticState(), None, history, bundle=bundle)
    assert state.candidates == []
    assert state.hypothesis == "insufficient evidence"
    assert any("certificate" in s for s in state.symptoms)
    assert state.turn == 1


def test_update_state_idempotent_weights(bundle):
    history = _history("vpn keeps failing with a certificate warning")
    ev = _evidence(bundle, "vpn keeps failing with a certificate warning")
    s1 = update_state(DiagnosticState(), ev, history, bundle=bundle)
    s2 = update_state(DiagnosticState(), ev, history, bundle=bundle)
    assert [(c.cluster_id, c.weight) for c in s1.candidates] == [
        (c.cluster_id, c.weight) for c in s2.candidates
    ]


def test_weights_recomputed_not_propagated(bundle):
    """Corrupting the previous turn's weights must not leak into this turn."""
    history = _history("vpn keeps failing with a certificate warning")
    ev = _evidence(bundle, "vpn keeps failing with a certificate warning")
    clean = update_state(DiagnosticState(), ev, history, bundle=bundle)
    corrupted_prev = DiagnosticState(
        candidates=[_candidate("c003", 0.99, "bogus"), _candidate("c001", 0.01, "bogus2")]
    )
    after = update_state(corrupted_prev, ev, history, bundle=bundle)
    assert [(c.cluster_id, c.weight) for c in after.candidates] == [
        (c.cluster_id, c.weight) for c in clean.candidates
    ]
    expected = normalize_weights(ev).weights
    for c in after.candidates:
        assert c.weight == pytest.approx(expected[c.cluster_id], abs=1e-12)


def test_candidate_weights_sum_to_one(bundle):
    history = _history("the problem started this morning; laptop session drops after a few minutes")
    ev = _evidence(bundle, "laptop session drops after a few minutes")
    state = update_state(DiagnosticState(), ev, history, bundle=bundle)
    assert abs(sum(c.weight for c in state.candidates) - 1.0) < 1e-9


def test_probe_outcome_marked(bundle):
    pending = DiagnosticState(pending_probe="c000", pending_probe_text="check the vpn")
    confirm = _history("I checked the vpn certificate: it is definitely expired")
    state = update_state(pending, None, confirm, bundle=bundle)
    assert state.probed == {"c000": True}
    pending = DiagnosticState(pending_probe="c001", pending_probe_text="check the wifi")
    deny = _history("I checked, but everything appears normal. No change.")
    state = update_state(pending, None, deny, bundle=bundle)
    assert state.probed == {"c001": False}


def test_attempted_steps_monotone(bundle):
    h1 = _history("I already tried: restart the vpn service.")
    s1 = update_state(DiagnosticState(), None, h1, bundle=bundle)
    assert "restart the vpn service" in s1.attempted_steps
    h2 = _history("x", "y", "nothing new to report")
    s2 = update_state(s1, None, h2, bundle=bundle)
    assert "restart the vpn service" in s2.attempted_steps


# -- rank_kb -------------------------------------------------------------------

def test_rank_kb_pure_query_when_no_candidates(bundle):
    query = "vpn keeps failing with a certificate warning"
    ranked = rank_kb(DiagnosticState(), bundle.kb_index, query, encoder=bundle.encoder)
    direct = top_k(bundle.kb_index, bundle.encoder.encode(query), 3)
    assert [a for a, _ in ranked] == [a for a, _ in direct.hits]


def test_rank_kb_alpha_one_beta_zero_is_plain_retrieval(bundle):
    query = "wifi driver corrupted"
    ranked = rank_kb(
        DiagnosticState(candidates=[_candidate("c000", 1.0, "x")]),
        bundle.kb_index,
        query,
        encoder=bundle.encoder,
        candidate_vec=bundle.model.centroids[0],
        alpha=1.0,
        beta=0.0,
    )
    direct = top_k(bundle.kb_index, bundle.encoder.encode(query), 3)
    assert [a for a, _ in ranked] == [a for a, _ in direct.hits]
    for (aid, score), (did, dscore) in zip(ranked, direct.hits):
        assert score == pytest.approx(dscore, abs=1e-12)


def test_rank_kb_label_article_first_with_beta(bundle):
    from dqa.retrieval import build_index

    label = bundle.model.label_text["c000"]
    articles = [
        ("match", label),
        ("other1", "how to reach the service desk portal"),
        ("other2", "general troubleshooting guide for everything"),
    ]
    kb_index = build_index((aid, bundle.encoder.encode(text)) for aid, text in articles)
    cand_vec = bundle.encoder.encode(label)
    ranked = rank_kb(
        DiagnosticState(candidates=[_candidate("c000", 1.0, label)]),
        kb_index,
        "",
        encoder=bundle.encoder,
        candidate_vec=cand_vec,
        alpha=0.5,
        beta=0.5,
    )
    assert ranked[0][0] == "match"


# -- select_action ---------------------------------------------------------------

def test_resolve_when_dominant_and_probed(bundle):
    state = DiagnosticState(
        candidates=[_candidate("c000", 0.9, "vpn certificate expired"),
                    _candidate("c001", 0.1, "wifi driver corrupted")],
        probed={"c000": True},
        attempted_steps=["restart the vpn service"],
    )
    action = select_action(state, None, bundle=bundle)
    assert action.action_type == "resolve"
    assert action.target_cluster == "c000"
    assert "restart the vpn service" not in action.proposed_steps
    assert "repair the expired certificate" in action.proposed_steps
    assert normalize_text("restart the vpn service") not in normalize_text(action.text)


def test_clarify_on_uniform_weights(bundle):
    cands = [_candidate(f"c{i:03d}", 0.25, bundle.model.label_text[f"c{i:03d}"]) for i in range(4)]
    state = DiagnosticState(candidates=cands)
    action = select_action(state, None, bundle=bundle)
    assert action.action_type == "clarify"


def test_investigate_above_probe_threshold(bundle):
    state = DiagnosticState(
        candidates=[_candidate("c000", 0.5, "vpn certificate expired"),
                    _candidate("c001", 0.5, "wifi driver corrupted")]
    )
    action = select_action(state, None, bundle=bundle)
    assert action.action_type == "investigate"
    assert action.target_cluster == "c000"


def test_no_resolve_without_consistent_probe(bundle):
    state = DiagnosticState(
        candidates=[_candidate("c000", 0.9, "vpn certificate expired")],
        probed={"c000": False},
    )
    action = select_action(state, None, bundle=bundle)
    assert action.action_type != "resolve"


def test_escalation_ladder_monotone(bundle):
    """Rising support for one cluster walks clarify -> investigate -> resolve."""
    label = bundle.model.label_text["c000"]
    others = [bundle.model.label_text["c001"], bundle.model.label_text["c002"]]
    seq = []
    for weight, probed in ((0.3, None), (0.45, None), (0.7, True)):
        rest = (1 - weight) / 2
        cands = [
            _candidate("c000", weight, label),
            _candidate("c001", min(rest, 0.34), others[0]),
            _candidate("c002", min(rest, 0.34), others[1]),
        ]
        state = DiagnosticState(candidates=cands, probed={"c000": probed} if probed else {})
        seq.append(select_action(state, None, bundle=bundle).action_type)
    assert seq == ["clarify", "investigate", "resolve"]


def test_all_steps_attempted_escalates(bundle):
    steps = ("restart the vpn service",)
    state = DiagnosticState(
        candidates=[_candidate("c000", 0.9, "vpn certificate expired", steps=steps)],
        probed={"c000": True},
        attempted_steps=["restart the vpn service"],
    )
    action = select_action(state, None, bundle=bundle)
    assert action.action_type == "resolve"
    assert action.proposed_steps
    assert "escalate" in action.proposed_steps[0]


def test_resolve_requires_steps():
    with pytest.raises(DataError):
        AgentAction(action_type="resolve", text="x", target_cluster=None, proposed_steps=())


# -- serialization ----------------------------------------------------------------

def test_serialize_empty_state_has_all_sections():
    out = serialize_state_prompt(DiagnosticState(), None, DialogueHistory())
    for header in ("HYPOTHESIS:", "SYMPTOMS:", "CANDIDATES:", "KB:", "RECENT TURNS:"):
        assert header in out
    assert "none" in out


def test_serialize_deterministic(bundle):
    state = DiagnosticState(
        hypothesis="likely root cause: x",
        symptoms=["a", "b"],
        candidates=[_candidate("c000", 0.6, "x"), _candidate("c001", 0.4, "y")],
        kb_refs=[("KB000", 0.7)],
    )
    h = _history("hello there friend", "agent line")
    assert serialize_state_prompt(state, None, h) == serialize_state_prompt(state, None, h)


def test_serialize_respects_budget():
    state = DiagnosticState(symptoms=[f"symptom number {i} with plenty of words" for i in range(50)])
    out = serialize_state_prompt(state, None, DialogueHistory(), budget=300)
    assert len(out) <= 300


# -- history invariants ------------------------------------------------------------

def test_history_alternation_enforced():
    h = DialogueHistory()
    with pytest.raises(DataError):
        h.append_agent(AgentAction(action_type="clarify", text="x"))
    h.append_user("hi")
    with pytest.raises(DataError):
        h.append_user("again")


# -- engine / variants ---------------------------------------------------------------

def test_variant_masks_shape():
    assert set(VARIANT_MASKS) == {"rag_no_cqr", "rag_baseline", "rag_clustering", "dqa"}
    assert VARIANT_MASKS["rag_no_cqr"] == VARIANT_MASKS["rag_baseline"].__class__(False, False, False)


def test_engine_turn_produces_weighted_candidates(bundle):
    engine = DialogueEngine(bundle, variant="dqa")
    action, state = engine.step("vpn keeps failing with a certificate warning")
    assert action.action_type in ("clarify", "investigate", "resolve")
    assert state.candidates
    assert abs(sum(c.weight for c in state.candidates) - 1.0) < 1e-9
    assert engine.history.utterances[0].role == "user"
    assert engine.history.utterances[1].role == "agent"


def test_engine_rejects_turn_after_resolve(bundle):
    engine = DialogueEngine(bundle, variant="dqa")
    engine.terminated = True
    with pytest.raises(SessionConflictError):
        engine.step("hello again")


def test_cqr_variants_diverge_on_anaphoric_scenario(bundle, small_corpus):
    """Golden comparison: with rewriting off, retrieval sees only the raw
    anaphoric turn and the trajectory forks."""
    _, _, scenarios = small_corpus
    vague = next(s for s in scenarios if s.difficulty == "vague")
    transcripts = {}
    for variant in ("rag_no_cqr", "rag_baseline"):
        engine = DialogueEngine(bundle, variant=variant)
        transcripts[variant] = run_replay(vague, engine, seed=1)
    a = [u["text"] for u in transcripts["rag_no_cqr"].utterances]
    b = [u["text"] for u in transcripts["rag_baseline"].utterances]
    assert a != b


def test_symptoms_monotone_over_replay(bundle, small_corpus):
    _, _, scenarios = small_corpus
    engine = DialogueEngine(bundle, variant="dqa")
    transcript = run_replay(scenarios[1], engine, seed=1)
    prev: set[str] = set()
    for snap in transcript.per_turn_states:
        current = set(snap["symptoms"])
        assert prev <= current
        prev = current
        attempted = set(snap["attempted_steps"])
        assert attempted >= set()


def test_state_export_import_roundtrip(bundle):
    engine = DialogueEngine(bundle, variant="dqa")
    engine.step("vpn keeps failing with a certificate warning")
    state = engine.state
    back = DiagnosticState.from_dict(state.to_dict())
    assert back.to_dict() == state.to_dict()
    assert back.hypothesis == state.hypothesis
    assert [c.cluster_id for c in back.candidates] == [c.cluster_id for c in state.candidates]


def test_step_is_atomic_on_failure(bundle, monkeypatch):
    engine = DialogueEngine(bundle, variant="dqa")
    engine.step("vpn keeps failing with a certificate warning")
    before_history = list(engine.history.utterances)
    before_state = engine.state.to_dict()

    def boom(*args, **kwargs):
        raise RuntimeError("backend down")

    monkeypatch.setattr("dqa.dialogue.aggregate", boom)
    with pytest.raises(RuntimeError):
        engine.step("and now this")
    assert engine.history.utterances == before_history
    assert engine.state.to_dict() == before_state


def test_session_export_restore_roundtrip(bundle):
    engine = DialogueEngine(bundle, variant="dqa")
    engine.step("vpn keeps failing with a certificate warning")
    record = engine.export_session()
    restored = DialogueEngine.restore_session(bundle, record)
    assert restored.variant == "dqa"
    assert restored.state.to_dict() == engine.state.to_dict()
    assert len(restored.history.utterances) == len(engine.history.utterances)
    # the restored session keeps working
    action, _ = restored.step("still broken")
    assert action.action_type in ("clarify", "investigate", "resolve")


def test_serialized_prompt_bounded_over_replay(bundle, small_corpus):
    _, _, scenarios = small_corpus
    engine = DialogueEngine(bundle, variant="dqa")
    user_text = scenarios[0].initial_complaint
    from dqa.simulator import SimulatedUser
    from dqa.util import strip_fact_annotations

    user = SimulatedUser(scenarios[0])
    for _ in range(8):
        action, state = engine.step(strip_fact_annotations(user_text))
        prompt = serialize_state_prompt(state, None, engine.history, budget=2000)
        assert len(prompt) <= 2000
        if action.action_type == "resolve":
            break
        user_text, _facts = user.respond(action)
