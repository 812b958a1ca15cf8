"""Shared immutable artifacts: encoder, ticket/KB indexes, cluster model, and
corpus-derived lexicons. One bundle is built per benchmark run and shared by
every system variant, so differences between variants can only come from how
evidence is formulated, never from the infrastructure underneath.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClusterModel, fit_clusters, load_cluster_model
from .corpus import KBArticle, Ticket, load_kb, load_tickets
from .encoding import EncoderConfig, get_encoder, hash_tokenize
from .errors import MissingArtifactError
from .retrieval import VectorIndex, build_index, load_index
from .util import derive_seed, normalize_text

DEFAULT_K_CLUSTERS = 6


def ticket_index_text(ticket: Ticket) -> str:
    """Text the retrieval index embeds: symptoms carry the lexical bridge from
    user complaints to tickets; the root cause anchors the cluster topic."""
    return f"{' . '.join(ticket.symptoms)} . {ticket.root_cause_text}"


def kb_index_text(article: KBArticle) -> str:
    return f"{article.title} . {article.body}"


@dataclass
class ArtifactBundle:
    encoder: object
    ticket_index: VectorIndex
    kb_index: VectorIndex | None
    model: ClusterModel
    tickets: dict[str, Ticket]
    kb: dict[str, KBArticle]
    symptom_phrases: dict[str, str]  # normalized -> display text
    step_phrases: dict[str, str]  # normalized -> display text
    token_df: dict[str, float]  # token -> fraction of tickets containing it
    phrase_df: dict[str, float] = field(default_factory=dict)  # normalized phrase -> df
    seed: int = 0
    _cluster_freq_cache: dict[str, dict[str, float]] = field(default_factory=dict, repr=False)

    def ticket_terms(self, ticket_id: str) -> set[str]:
        return set(hash_tokenize(ticket_index_text(self.tickets[ticket_id])))

    def term_freq_for(self, ticket_ids) -> dict[str, float]:
        """Per-term document frequency over the given tickets."""
        ids = [tid for tid in ticket_ids if tid in self.tickets]
        if not ids:
            return {}
        counts: dict[str, int] = {}
        for tid in ids:
            for tok in self.ticket_terms(tid):
                counts[tok] = counts.get(tok, 0) + 1
        return {tok: n / len(ids) for tok, n in sorted(counts.items())}

    def cluster_term_freq(self, cluster_id: str) -> dict[str, float]:
        if cluster_id not in self._cluster_freq_cache:
            members = self.model.members(cluster_id)
            self._cluster_freq_cache[cluster_id] = self.term_freq_for(members)
        return self._cluster_freq_cache[cluster_id]

    def candidate_vector(self, member_ids) -> np.ndarray | None:
        """Mean direction of the given tickets in index space."""
        rows = [self.ticket_index.vector(tid) for tid in member_ids if tid in self.ticket_index]
        if not rows:
            return None
        mean = np.mean(rows, axis=0)
        norm = float(np.linalg.norm(mean))
        return mean / norm if norm > 0 else None


def build_bundle(
    tickets: list[Ticket],
    kb: list[KBArticle] | None = None,
    *,
    encoder_config: EncoderConfig | None = None,
    k_clusters: int = DEFAULT_K_CLUSTERS,
    seed: int = 0,
    cluster_method: str = "minibatch-kmeans",
) -> ArtifactBundle:
    encoder = get_encoder(encoder_config or EncoderConfig())
    ticket_index = build_index(
        (t.id, encoder.encode_item(t.id, ticket_index_text(t))) for t in tickets
    )
    root_texts = {t.id: t.root_cause_text for t in tickets}
    model = fit_clusters(
        [(t.id, encoder.encode_item(f"{t.id}#root", t.root_cause_text)) for t in tickets],
        k_clusters=min(k_clusters, len(tickets)),
        seed=derive_seed(seed, "clustering"),
        method=cluster_method,
        texts=root_texts,
    )
    kb_index = None
    kb_map: dict[str, KBArticle] = {}
    if kb:
        kb_index = build_index((a.id, encoder.encode_item(a.id, kb_index_text(a))) for a in kb)
        kb_map = {a.id: a for a in kb}

    symptom_phrases: dict[str, str] = {}
    step_phrases: dict[str, str] = {}
    doc_counts: dict[str, int] = {}
    phrase_counts: dict[str, int] = {}
    for t in tickets:
        for sym in set(normalize_text(s) for s in t.symptoms):
            phrase_counts[sym] = phrase_counts.get(sym, 0) + 1
        for sym in t.symptoms:
            symptom_phrases.setdefault(normalize_text(sym), sym)
        for step in t.resolution_steps:
            step_phrases.setdefault(normalize_text(step), step)
        for tok in set(hash_tokenize(ticket_index_text(t))):
            doc_counts[tok] = doc_counts.get(tok, 0) + 1
    token_df = {tok: n / len(tickets) for tok, n in sorted(doc_counts.items())}
    phrase_df = {p: n / len(tickets) for p, n in sorted(phrase_counts.items())}

    return ArtifactBundle(
        encoder=encoder,
        ticket_index=ticket_index,
        kb_index=kb_index,
        model=model,
        tickets={t.id: t for t in tickets},
        kb=kb_map,
        symptom_phrases=dict(sorted(symptom_phrases.items())),
        step_phrases=dict(sorted(step_phrases.items())),
        token_df=token_df,
        phrase_df=phrase_df,
        seed=seed,
    )


def load_bundle_from_paths(
    corpus_path: str | Path,
    kb_path: str | Path | None = None,
    *,
    index_path: str | Path | None = None,
    clusters_path: str | Path | None = None,
    encoder_config: EncoderConfig | None = None,
    k_clusters: int = DEFAULT_K_CLUSTERS,
    seed: int = 0,
) -> ArtifactBundle:
    """Load corpus/KB files and either load or rebuild derived artifacts."""
    corpus_path = Path(corpus_path)
    if not corpus_path.exists():
        raise MissingArtifactError(f"ticket corpus not found: {corpus_path}")
    tickets, _rejected = load_tickets(corpus_path)
    kb = None
    if kb_path is not None:
        kb_path = Path(kb_path)
        if not kb_path.exists():
            raise MissingArtifactError(f"KB file not found: {kb_path}")
        kb = load_kb(kb_path)

    bundle = build_bundle(
        tickets,
        kb,
        encoder_config=encoder_config,
        k_clusters=k_clusters,
        seed=seed,
    )
    if index_path is not None:
        if not Path(index_path).exists():
            raise MissingArtifactError(f"index file not found: {index_path}")
        bundle.ticket_index = load_index(index_path)
    if clusters_path is not None:
        if not Path(clusters_path).exists():
            raise MissingArtifactError(f"cluster model file not found: {clusters_path}")
        bundle.model = load_cluster_model(clusters_path)
    return bundle
