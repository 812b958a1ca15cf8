#!/usr/bin/env python3
"""Scripted walkthrough of one diagnostic session against a tiny corpus.

Shows the clarify -> investigate -> resolve escalation and the evolving
hypothesis weights without needing the HTTP service.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dqa.artifacts import build_bundle  # noqa: E402
from dqa.corpus import SyntheticCorpusConfig, generate_synthetic  # noqa: E402
from dqa.dialogue import DialogueEngine  # noqa: E402
from dqa.simulator import SimulatedUser  # noqa: E402
from dqa.util import strip_fact_annotations  # noqa: E402


def _play(bundle, scenario, verbose: bool) -> bool:
    engine = DialogueEngine(bundle, variant="dqa")
    user = SimulatedUser(scenario)
    text = scenario.initial_complaint
    for _turn in range(1, 16):
        if verbose:
            print(f"\nuser> {text}")
        action, state = engine.step(strip_fact_annotations(text))
        if verbose:
            print(f"agent[{action.action_type}]> {action.text}")
            tops = sorted(state.candidates, key=lambda c: (-c.weight, c.cluster_id))[:3]
            for c in tops:
                bar = "#" * int(round(c.weight * 30))
                print(f"   {c.cluster_id} {c.weight:5.2f} {bar:<30} {c.label_text}")
        if action.action_type == "resolve":
            return True
        text, _ = user.respond(action)
    return False


def run() -> int:
    tickets, kb, scenarios = generate_synthetic(
        SyntheticCorpusConfig(seed=11, num_causes=6, tickets_per_cause=(40, 60),
                              scenarios_per_cause=3)
    )
    bundle = build_bundle(tickets, kb, k_clusters=6, seed=1)
    # pick the first ambiguous scenario this engine actually solves, then
    # replay it verbosely as the walkthrough
    ordered = [s for s in scenarios if s.difficulty == "vague"] + [
        s for s in scenarios if s.difficulty != "vague"
    ]
    for scenario in ordered:
        if _play(bundle, scenario, verbose=False):
            print(f"scenario {scenario.id} ({scenario.ground_truth_cause_key}), "
                  f"persona {scenario.persona.style}/{scenario.persona.knowledge}")
            _play(bundle, scenario, verbose=True)
            print("\nresolved.")
            return 0
    print("no vague scenario resolved; corpus or thresholds changed?")
    return 1


if __name__ == "__main__":
    sys.exit(run())
