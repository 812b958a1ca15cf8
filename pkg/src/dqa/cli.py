"""Single entry point for the whole pipeline.

Subcommands: corpus gen | corpus validate | index build | index query |
cluster fit | raggg aggregate | chat | bench run | serve.

Every subcommand honors --seed and --config (file values overridden by
flags); the resolved config is echoed into outputs. Exit codes: 0 ok,
2 config/usage, 3 missing artifact, 4 data error, 5 backend/internal.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import artifacts as art
from . import clustering as clu
from . import corpus as corp
from . import encoding as enc
from . import retrieval as ret
from .config import RunConfig, load_config
from .dialogue import DialogueEngine
from .errors import ConfigError, DataError, DqaError, MissingArtifactError
from .evaluation import ALL_VARIANTS, render_report_csv, render_report_text, run_benchmark
from .raggg import aggregate
from .simulator import load_scenarios, write_scenarios
from .util import dump_json


def _fail(exc: DqaError) -> int:
    print(f"dqa-error class={exc.error_class} detail={str(exc)!r}", file=sys.stderr)
    return exc.exit_code


def _require(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for key in (
        "corpus", "kb", "scenarios", "index", "clusters", "out_dir", "seed",
        "k_retrieve", "k_clusters", "variant", "jobs", "cluster_method",
    ):
        if hasattr(args, key) and getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "seeds", None):
        overrides["seeds"] = [int(s) for s in args.seeds.split(",")]
    if getattr(args, "runs", None):
        overrides["runs"] = args.runs
    cfg = load_config(getattr(args, "config", None), overrides)
    print(f"resolved-config {dump_json(cfg.to_dict())}", file=sys.stderr)
    return cfg


def _backends_from_config(cfg: RunConfig):
    """Optional remote backends; everything stays deterministic when unset."""
    from .backends import HttpGenerationBackend, HttpJudgeBackend

    generation = persona = judge = None
    if cfg.generation_endpoint:
        generation = HttpGenerationBackend(cfg.generation_endpoint, auth_token=cfg.backend_token)
    if cfg.user_endpoint:
        persona = HttpGenerationBackend(cfg.user_endpoint, auth_token=cfg.backend_token)
    if cfg.judge_endpoint:
        judge = HttpJudgeBackend(cfg.judge_endpoint, auth_token=cfg.backend_token)
    return generation, persona, judge


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------

def _cmd_corpus_gen(args) -> int:
    cfg = _config_from_args(args)
    gen_cfg = corp.SyntheticCorpusConfig(
        seed=cfg.seed,
        num_causes=args.num_causes,
        tickets_per_cause=(args.tickets_min, args.tickets_max),
        noise_rate=args.noise_rate,
        scenarios_per_cause=args.scenarios_per_cause,
    )
    if args.gen_config:
        gen_cfg = corp.corpus_config_from_dict(
            json.loads(_require(args.gen_config, "generator config").read_text())
        )
    tickets, kb, scenarios = corp.generate_synthetic(gen_cfg)
    out = Path(cfg.out_dir)
    n_t = corp.write_tickets(out / "tickets.jsonl", tickets)
    n_k = corp.write_kb(out / "kb.jsonl", kb)
    n_s = write_scenarios(out / "scenarios.jsonl", scenarios)
    print(f"wrote {n_t} tickets, {n_k} kb articles, {n_s} scenarios to {out}/")
    return 0


def _cmd_corpus_validate(args) -> int:
    cfg = _config_from_args(args)
    tickets, rejected = corp.load_tickets(_require(cfg.corpus, "ticket corpus"))
    print(f"tickets: {len(tickets)} valid, {len(rejected)} rejected")
    for lineno, reason in rejected:
        print(f"  line {lineno}: {reason}")
    if Path(cfg.kb).exists():
        kb = corp.load_kb(cfg.kb)
        print(f"kb articles: {len(kb)}")
    if Path(cfg.scenarios).exists():
        scenarios = load_scenarios(cfg.scenarios)
        print(f"scenarios: {len(scenarios)} (all validated)")
    return 0


# ---------------------------------------------------------------------------
# index / cluster / raggg
# ---------------------------------------------------------------------------

def _cmd_index_build(args) -> int:
    cfg = _config_from_args(args)
    tickets, _ = corp.load_tickets(_require(cfg.corpus, "ticket corpus"))
    encoder = enc.get_encoder(cfg.encoder_config())
    index = ret.build_index(
        (t.id, encoder.encode_item(t.id, art.ticket_index_text(t))) for t in tickets
    )
    out = Path(args.out or Path(cfg.out_dir) / "index.jsonl")
    ret.save_index(index, out)
    print(f"indexed {len(index)} tickets (dim {index.dimension}) -> {out}")
    return 0


def _cmd_index_query(args) -> int:
    cfg = _config_from_args(args)
    index = ret.load_index(_require(args.index or cfg.index, "index file"))
    encoder = enc.get_encoder(cfg.encoder_config())
    hood = ret.top_k(index, encoder.encode(args.query), args.k, query_label=args.query)
    for tid, score in hood.hits:
        print(f"{tid}\t{score:.6f}")
    return 0


def _cmd_cluster_fit(args) -> int:
    cfg = _config_from_args(args)
    tickets, _ = corp.load_tickets(_require(cfg.corpus, "ticket corpus"))
    encoder = enc.get_encoder(cfg.encoder_config())
    pairs = [(t.id, encoder.encode_item(f"{t.id}#root", t.root_cause_text)) for t in tickets]
    k = args.k or cfg.k_clusters
    if k is None:
        k, scores = clu.sweep_k(pairs, seed=cfg.seed)
        print(f"silhouette sweep selected k={k}")
    model = clu.fit_clusters(
        pairs,
        k_clusters=k,
        seed=cfg.seed,
        method=args.method or cfg.cluster_method,
        texts={t.id: t.root_cause_text for t in tickets},
    )
    out = Path(args.out or Path(cfg.out_dir) / "clusters.json")
    clu.save_cluster_model(model, out)
    priors = clu.empirical_priors(model)
    print(f"fit {model.k_clusters} clusters over {len(tickets)} tickets -> {out}")
    for cid in model.cluster_ids:
        print(
            f"  {cid} size={model.sizes[cid]} prior={float(priors[cid]):.3f} "
            f"label={model.label_text[cid]!r}"
        )
    return 0


def _cmd_raggg_aggregate(args) -> int:
    cfg = _config_from_args(args)
    tickets, _ = corp.load_tickets(_require(cfg.corpus, "ticket corpus"))
    kb = corp.load_kb(cfg.kb) if Path(cfg.kb).exists() else None
    bundle = art.build_bundle(
        tickets,
        kb,
        encoder_config=cfg.encoder_config(),
        k_clusters=cfg.k_clusters or art.DEFAULT_K_CLUSTERS,
        seed=cfg.seed,
        cluster_method=cfg.cluster_method,
    )
    evidence = aggregate(
        args.query,
        encoder=bundle.encoder,
        index=bundle.ticket_index,
        model=bundle.model,
        tickets=bundle.tickets,
        k_retrieve=args.k or cfg.k_retrieve,
        grouping="neighborhood" if args.cluster_neighborhood else "model",
        neighborhood_seed=cfg.seed,
    )
    record = {
        "query_text": evidence.query_text,
        "neighborhood_size": evidence.neighborhood_size,
        "other_count": evidence.other_count,
        "clusters": [
            {
                "cluster_id": ce.cluster_id,
                "count": ce.count,
                "label_text": ce.label_text,
                "representatives": [[tid, s] for tid, s in ce.representatives],
                "canonical_resolution": ce.canonical_resolution,
            }
            for ce in evidence.clusters
        ],
    }
    print(json.dumps(record, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# chat / bench / serve
# ---------------------------------------------------------------------------

def _build_bundle_from_config(cfg: RunConfig) -> art.ArtifactBundle:
    if cfg.index or cfg.clusters:
        return art.load_bundle_from_paths(
            _require(cfg.corpus, "ticket corpus"),
            cfg.kb if Path(cfg.kb).exists() else None,
            index_path=cfg.index,
            clusters_path=cfg.clusters,
            encoder_config=cfg.encoder_config(),
            k_clusters=cfg.k_clusters or art.DEFAULT_K_CLUSTERS,
            seed=cfg.seed,
        )
    tickets, _ = corp.load_tickets(_require(cfg.corpus, "ticket corpus"))
    kb = corp.load_kb(cfg.kb) if Path(cfg.kb).exists() else None
    return art.build_bundle(
        tickets,
        kb,
        encoder_config=cfg.encoder_config(),
        k_clusters=cfg.k_clusters or art.DEFAULT_K_CLUSTERS,
        seed=cfg.seed,
        cluster_method=cfg.cluster_method,
    )


def _cmd_chat(args) -> int:
    cfg = _config_from_args(args)
    bundle = _build_bundle_from_config(cfg)
    generation, _, _ = _backends_from_config(cfg)
    engine = DialogueEngine(
        bundle, variant=cfg.variant, params=cfg.policy_params(), generation_backend=generation
    )
    print(f"interactive session (variant={cfg.variant}); empty line or EOF ends.")
    while not engine.terminated:
        try:
            line = input("you> ").strip()
        except EOFError:
            break
        if not line:
            break
        action, state = engine.step(line)
        print(f"agent[{action.action_type}]> {action.text}")
        top = state.argmax_candidate()
        if top is not None:
            print(f"  hypothesis: {state.hypothesis}")
            shown = sorted(state.candidates, key=lambda c: (-c.weight, c.cluster_id))[:3]
            for c in shown:
                print(f"  candidate {c.cluster_id} w={c.weight:.3f} {c.label_text}")
        if state.kb_refs:
            print("  kb: " + ", ".join(f"{aid}({s:.2f})" for aid, s in state.kb_refs))
    print("session ended.")
    return 0


def _cmd_bench_run(args) -> int:
    cfg = _config_from_args(args)
    scenarios = load_scenarios(_require(cfg.scenarios, "scenario file"))
    tickets, _ = corp.load_tickets(_require(cfg.corpus, "ticket corpus"))
    kb = corp.load_kb(cfg.kb) if Path(cfg.kb).exists() else []
    variants = tuple(args.variants.split(",")) if args.variants else ALL_VARIANTS
    seeds = cfg.seeds[: cfg.runs] if cfg.seeds else [cfg.seed]
    generation, persona, judge = _backends_from_config(cfg)
    result = run_benchmark(
        tickets,
        kb,
        scenarios,
        variants=variants,
        seeds=seeds,
        encoder_config=cfg.encoder_config(),
        k_clusters=cfg.k_clusters,
        params=cfg.policy_params(),
        jobs=cfg.jobs,
        config_echo=cfg.to_dict(),
        generation_backend=generation,
        persona_backend=persona,
        judge_backend=judge,
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dump_json(result.report) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(render_report_text(result.report), encoding="utf-8")
    (out / "report.csv").write_text(render_report_csv(result.report), encoding="utf-8")
    if args.save_transcripts:
        tdir = out / "transcripts"
        tdir.mkdir(parents=True, exist_ok=True)
        for seed, tr in result.transcripts:
            name = f"{tr.scenario_id}_{tr.system_id}_seed{seed}.json"
            (tdir / name).write_text(dump_json(tr.to_dict()) + "\n", encoding="utf-8")
    print(render_report_text(result.report))
    print(f"report written to {out}/report.json")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = _config_from_args(args)
    bundle = _build_bundle_from_config(cfg)
    generation, _, _ = _backends_from_config(cfg)
    app = create_app(
        bundle,
        params=cfg.policy_params(),
        persist_dir=args.persist_dir,
        allow_cors=args.cors,
        generation_backend=generation,
    )
    print(f"serving on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="root seed (fans out per component)")
    p.add_argument("--corpus", help="ticket corpus JSONL")
    p.add_argument("--kb", help="KB article JSONL")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    corpus_p = sub.add_parser("corpus", help="generate or validate corpora")
    corpus_sub = corpus_p.add_subparsers(dest="subcommand", required=True)
    gen = corpus_sub.add_parser("gen", help="generate a seeded synthetic corpus")
    _add_common(gen)
    gen.add_argument("--num-causes", type=int, default=6)
    gen.add_argument("--tickets-min", type=int, default=30)
    gen.add_argument("--tickets-max", type=int, default=50)
    gen.add_argument("--noise-rate", type=float, default=0.0)
    gen.add_argument("--scenarios-per-cause", type=int, default=5)
    gen.add_argument("--gen-config", help="generator config JSON document")
    gen.set_defaults(func=_cmd_corpus_gen)
    val = corpus_sub.add_parser("validate", help="validate corpus/KB/scenario files")
    _add_common(val)
    val.add_argument("--scenarios", help="scenario JSONL")
    val.set_defaults(func=_cmd_corpus_validate)

    index_p = sub.add_parser("index", help="build or query the vector index")
    index_sub = index_p.add_subparsers(dest="subcommand", required=True)
    ib = index_sub.add_parser("build")
    _add_common(ib)
    ib.add_argument("--out", help="index output path")
    ib.set_defaults(func=_cmd_index_build)
    iq = index_sub.add_parser("query")
    _add_common(iq)
    iq.add_argument("--index", help="index file")
    iq.add_argument("--query", required=True)
    iq.add_argument("-k", type=int, default=10)
    iq.set_defaults(func=_cmd_index_query)

    cluster_p = sub.add_parser("cluster", help="fit the root-cause cluster model")
    cluster_sub = cluster_p.add_subparsers(dest="subcommand", required=True)
    cf = cluster_sub.add_parser("fit")
    _add_common(cf)
    cf.add_argument("--k", type=int, help="cluster count (default: silhouette sweep)")
    cf.add_argument("--method", choices=["minibatch-kmeans", "agglomerative"])
    cf.add_argument("--out", help="cluster model output path")
    cf.set_defaults(func=_cmd_cluster_fit)

    raggg_p = sub.add_parser("raggg", help="one-shot neighborhood aggregation")
    raggg_sub = raggg_p.add_subparsers(dest="subcommand", required=True)
    ra = raggg_sub.add_parser("aggregate")
    _add_common(ra)
    ra.add_argument("--query", required=True)
    ra.add_argument("--k", type=int, help="neighborhood size")
    ra.add_argument("--k-retrieve", dest="k_retrieve", type=int)
    ra.add_argument(
        "--cluster-neighborhood",
        action="store_true",
        help="cluster the retrieved neighborhood instead of using repository clusters",
    )
    ra.set_defaults(func=_cmd_raggg_aggregate)

    chat = sub.add_parser("chat", help="interactive terminal session")
    _add_common(chat)
    chat.add_argument("--variant", choices=list(ALL_VARIANTS))
    chat.add_argument("--k-clusters", dest="k_clusters", type=int)
    chat.add_argument("--k-retrieve", dest="k_retrieve", type=int)
    chat.set_defaults(func=_cmd_chat)

    bench = sub.add_parser("bench", help="benchmark runs")
    bench_sub = bench.add_subparsers(dest="subcommand", required=True)
    br = bench_sub.add_parser("run")
    _add_common(br)
    br.add_argument("--scenarios", help="scenario JSONL")
    br.add_argument("--variants", help="comma-separated variant list")
    br.add_argument("--runs", type=int)
    br.add_argument("--seeds", help="comma-separated run seeds, e.g. 1,2,3")
    br.add_argument("--jobs", type=int)
    br.add_argument("--k-clusters", dest="k_clusters", type=int)
    br.add_argument("--k-retrieve", dest="k_retrieve", type=int)
    br.add_argument("--save-transcripts", action="store_true")
    br.set_defaults(func=_cmd_bench_run)

    serve = sub.add_parser("serve", help="run the HTTP session service")
    _add_common(serve)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8077)
    serve.add_argument("--variant", choices=list(ALL_VARIANTS))
    serve.add_argument("--k-clusters", dest="k_clusters", type=int)
    serve.add_argument("--k-retrieve", dest="k_retrieve", type=int)
    serve.add_argument("--cors", action="store_true", help="permissive CORS for UI dev")
    serve.add_argument("--persist-dir", help="mirror sessions to disk")
    serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(exc)
    except MissingArtifactError as exc:
        return _fail(exc)
    except DataError as exc:
        return _fail(exc)
    except DqaError as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
