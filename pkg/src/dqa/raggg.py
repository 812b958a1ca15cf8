"""Retrieval neighborhood aggregation: compress a top-k neighborhood into
per-root-cause evidence counts, representatives, and normalized hypothesis
weights.

Instead of handing generation dozens of near-duplicate tickets, the
neighborhood is grouped by root cause and reduced to (count, representatives)
pairs. Three grouping modes exist:

- "model": group hits by the repository-level cluster model (the default;
  deterministic and cacheable).
- "neighborhood": cluster the retrieved neighborhood itself on the fly
  (opt-in literal mode; cluster ids are neighborhood-local).
- "dedup": group by exact normalized root-cause text. This is the masked,
  clustering-off behavior used by baseline system variants: simple
  deduplication instead of semantic aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Sequence

from .clustering import ClusterModel, fit_clusters
from .errors import ConfigError, DataError
from .retrieval import VectorIndex, top_k
from .util import normalize_text, stable_hash

if TYPE_CHECKING:
    from .corpus import Ticket

DEFAULT_K_RETRIEVE = 50
DEFAULT_R_MAX = 3
DEFAULT_MAX_CLUSTERS_SURFACED = 5


@dataclass(frozen=True)
class ClusterEvidence:
    cluster_id: str
    count: int
    representatives: tuple[tuple[str, float], ...]  # (ticket id, query similarity)
    member_ids: tuple[str, ...]
    label_text: str
    canonical_resolution: str
    resolution_steps: tuple[str, ...]


@dataclass(frozen=True)
class AggregatedEvidence:
    query_text: str
    clusters: tuple[ClusterEvidence, ...]  # surfaced (truncated) view
    support: tuple[ClusterEvidence, ...]  # full pre-truncation support
    neighborhood_size: int
    other_count: int

    def counts_by_cluster(self) -> dict[str, int]:
        return {ce.cluster_id: ce.count for ce in self.support}

    @property
    def is_empty(self) -> bool:
        return self.neighborhood_size == 0


@dataclass(frozen=True)
class HypothesisWeights:
    weights: dict[str, float]

    def argmax(self) -> str:
        return min(self.weights, key=lambda cid: (-self.weights[cid], cid))


def select_representatives(
    cluster_hits: Sequence[tuple[str, float]], r_max: int = DEFAULT_R_MAX
) -> list[str]:
    """Top-r_max hits by similarity to the query, ties broken by ascending id."""
    if not cluster_hits:
        raise DataError("cannot select representatives from an empty hit list")
    ranked = sorted(cluster_hits, key=lambda h: (-h[1], h[0]))
    return [tid for tid, _ in ranked[: max(0, r_max)]]


def normalize_weights(evidence: AggregatedEvidence) -> HypothesisWeights:
    """Per-cluster neighborhood share: weight_j = n_j / sum(n). Recomputed from
    fresh evidence every turn; never propagated. Weights are taken over the
    full pre-truncation support."""
    if evidence.neighborhood_size < 1:
        raise DataError("cannot normalize weights of an empty neighborhood")
    counts = evidence.counts_by_cluster()
    total = sum(counts.values())
    if total <= 0:
        raise DataError("evidence counts sum to zero")
    return HypothesisWeights(weights={cid: n / total for cid, n in counts.items()})


def _group_by_model(hit_ids: Sequence[str], model: ClusterModel) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = {}
    for tid in hit_ids:
        try:
            cid = model.assignment[tid]
        except KeyError:
            raise DataError(f"ticket {tid!r} is not covered by the cluster model") from None
        groups.setdefault(cid, []).append(tid)
    return groups


def _group_by_dedup(hit_ids: Sequence[str], tickets: Mapping[str, "Ticket"]) -> tuple[dict[str, list[str]], dict[str, str]]:
    groups: dict[str, list[str]] = {}
    keys: dict[str, str] = {}
    for tid in hit_ids:
        norm = normalize_text(tickets[tid].root_cause_text)
        cid = f"d:{stable_hash(norm)}"
        groups.setdefault(cid, []).append(tid)
        keys[cid] = norm
    return groups, keys


def aggregate(
    query_text: str,
    *,
    encoder,
    index: VectorIndex,
    model: ClusterModel | None = None,
    tickets: Mapping[str, "Ticket"] | None = None,
    k_retrieve: int = DEFAULT_K_RETRIEVE,
    r_max: int = DEFAULT_R_MAX,
    max_clusters_surfaced: int = DEFAULT_MAX_CLUSTERS_SURFACED,
    grouping: str = "model",
    neighborhood_k: int | None = None,
    neighborhood_seed: int = 0,
) -> AggregatedEvidence:
    """Encode the query, retrieve top-k tickets, and fold them into
    per-root-cause evidence. Surfaced clusters are capped at
    `max_clusters_surfaced`; truncated mass lands in `other_count`."""
    if len(index) == 0:
        raise DataError("cannot aggregate over an empty index")
    query_vec = encoder.encode(query_text)
    hood = top_k(index, query_vec, k_retrieve, query_label=query_text)
    hit_ids = [tid for tid, _ in hood.hits]
    sim_of = dict(hood.hits)

    if grouping == "model":
        if model is None:
            raise ConfigError("grouping='model' requires a cluster model")
        groups = _group_by_model(hit_ids, model)

        def label_of(cid: str, members: list[str]) -> str:
            return model.label_text[cid]

        def steps_of(cid: str, members: list[str]) -> tuple[str, ...]:
            if tickets is None:
                return ()
            medoids = model.medoid_ids.get(cid) or []
            if medoids and medoids[0] in tickets:
                return tuple(tickets[medoids[0]].resolution_steps)
            return ()

    elif grouping == "dedup":
        if tickets is None:
            raise ConfigError("grouping='dedup' requires the ticket map")
        groups, _keys = _group_by_dedup(hit_ids, tickets)

        def label_of(cid: str, members: list[str]) -> str:
            anchor = min(members)
            return tickets[anchor].root_cause_text

        def steps_of(cid: str, members: list[str]) -> tuple[str, ...]:
            anchor = min(members)
            return tuple(tickets[anchor].resolution_steps)

    elif grouping == "neighborhood":
        if tickets is None:
            raise ConfigError("grouping='neighborhood' requires the ticket map")
        k_local = min(neighborhood_k or max_clusters_surfaced, len(hit_ids))
        local_model = fit_clusters(
            [(tid, index.vector(tid)) for tid in hit_ids],
            k_clusters=k_local,
            seed=neighborhood_seed,
            texts={tid: tickets[tid].root_cause_text for tid in hit_ids if tid in tickets},
        )
        groups = {}
        for tid in hit_ids:
            groups.setdefault(f"n:{local_model.assignment[tid]}", []).append(tid)

        def label_of(cid: str, members: list[str]) -> str:
            return local_model.label_text[cid.removeprefix("n:")]

        def steps_of(cid: str, members: list[str]) -> tuple[str, ...]:
            medoids = local_model.medoid_ids.get(cid.removeprefix("n:")) or []
            if medoids and medoids[0] in tickets:
                return tuple(tickets[medoids[0]].resolution_steps)
            return ()

    else:
        raise ConfigError(f"unknown grouping mode {grouping!r}")

    support: list[ClusterEvidence] = []
    for cid, members in groups.items():
        hits = [(tid, sim_of[tid]) for tid in members]
        reps = select_representatives(hits, r_max=r_max)
        steps = steps_of(cid, members)
        support.append(
            ClusterEvidence(
                cluster_id=cid,
                count=len(members),
                representatives=tuple((tid, sim_of[tid]) for tid in reps),
                member_ids=tuple(sorted(members)),
                label_text=label_of(cid, members),
                canonical_resolution="; ".join(steps),
                resolution_steps=steps,
            )
        )
    support.sort(key=lambda ce: (-ce.count, ce.cluster_id))
    surfaced = tuple(support[:max_clusters_surfaced])
    other = sum(ce.count for ce in support[max_clusters_surfaced:])
    return AggregatedEvidence(
        query_text=query_text,
        clusters=surfaced,
        support=tuple(support),
        neighborhood_size=len(hit_ids),
        other_count=other,
    )
