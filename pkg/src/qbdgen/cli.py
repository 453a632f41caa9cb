"""Command line entry point: one subcommand per workflow stage.

Exit codes are stable: 0 success, 1 usage error, 2 data error, 3 gateway
error. Every subcommand runs end to end with the stub backend and the
bundled fixtures, so no API key is needed for CI.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import bm25, corpus, pipeline, rerank, review, tuner
from .gateway import (
    CallLedger,
    Gateway,
    GatewayConfig,
    GatewayError,
    OpenAIBackend,
    StubBackend,
)
from .metrics import MetricReport, UndefinedMetricError

METHOD_NAMES = ("scs_emb", "scs_llm", "scs_instr", "pcs_llm", "pcs_instr")

DATA_ERRORS = (
    corpus.CorpusFormatError,
    corpus.SplitError,
    pipeline.PipelineError,
    pipeline.DatasetSchemaError,
    bm25.UnknownDocumentError,
    tuner.TuneError,
    UndefinedMetricError,
    review.UnknownItemError,
    review.InvalidActionError,
    review.NothingToExportError,
    review.RevisionConflictError,
    rerank.RerankFailure,
)


@click.group()
def cli():
    """Generate ranked query-by-document datasets, review them, and tune
    BM25 on the result."""


def _echo_json(payload) -> None:
    click.echo(json.dumps(payload, sort_keys=True, indent=2))


def _load(documents, judgments):
    docs, judg = corpus.load_corpus(documents, judgments)
    return docs, judg, corpus.build_pools(judg)


def _resolve_method(name: str, instructions: str | None) -> rerank.RerankMethod:
    if name in ("scs_instr", "pcs_instr"):
        if not instructions:
            raise click.UsageError(f"--method {name} needs instructions (see --instructions*)")
        kind = name.replace("_instr", "_llm")
        return rerank.RerankMethod(kind=kind, instructions=instructions)
    if name not in METHOD_NAMES:
        raise click.UsageError(f"unknown method {name!r}")
    return rerank.RerankMethod(kind=name, instructions=instructions or None)


def _build_gateway(base_url, model, embedding_model, stub_path, seed, parallelism) -> Gateway:
    config = GatewayConfig(
        base_url=base_url or "",
        model=model,
        embedding_model=embedding_model,
        parallelism=parallelism,
    )
    if base_url:
        backend = OpenAIBackend(config)
    elif stub_path:
        backend = StubBackend.from_jsonl(stub_path, seed=seed)
    else:
        backend = StubBackend(seed=seed)
    return Gateway(config, backend, CallLedger())


def _report_rows(report: MetricReport) -> list[tuple[str, float]]:
    rows = [
        ("tau_b", report.tau_b),
        ("spearman_rho", report.spearman_rho),
        ("map", report.map),
        ("mrr", report.mrr),
    ]
    rows.extend((f"p@{k}", v) for k, v in sorted(report.precision_at_k.items()))
    return rows


def _print_report(report: MetricReport) -> None:
    for name, value in _report_rows(report):
        click.echo(f"{name:>14}  {value:.4f}")


@cli.command()
@click.option("--documents", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--judgments", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def ingest(documents, judgments, as_json):
    """Validate a corpus and report its shape."""
    docs, judg, pools = _load(documents, judgments)
    grades = {}
    for j in judg:
        grades[j.grade] = grades.get(j.grade, 0) + 1
    summary = {
        "documents": len(docs),
        "judgments": len(judg),
        "queries": len(pools),
        "judgments_per_grade": grades,
        "avg_pool_size": round(sum(len(p.candidates) for p in pools) / len(pools), 2) if pools else 0,
    }
    if as_json:
        _echo_json(summary)
    else:
        for key, value in summary.items():
            click.echo(f"{key:>20}: {value}")


@cli.command()
@click.option("--documents", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--judgments", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--per-grade-cap", type=int, default=10, show_default=True)
@click.option("--pure-test-fraction", type=float, default=0.20, show_default=True)
@click.option("--budget", type=int, default=100, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def split(documents, judgments, seed, per_grade_cap, pure_test_fraction, budget, out, as_json):
    """Build and save the seeded train/test split."""
    _, _, pools = _load(documents, judgments)
    result = corpus.split_dataset(
        pools,
        seed=seed,
        per_grade_cap=per_grade_cap,
        pure_test_fraction=pure_test_fraction,
        train_pair_budget=budget,
    )
    corpus.save_split(result, out)
    summary = {
        "train_pairs": len(result.train_pairs),
        "train_queries": len(result.train_queries()),
        "test_queries": len(result.test_lists),
        "test_candidates": sum(len(v) for v in result.test_lists.values()),
        "pure_test_queries": len(result.pure_test_queries),
        "out": str(out),
    }
    if as_json:
        _echo_json(summary)
    else:
        for key, value in summary.items():
            click.echo(f"{key:>20}: {value}")


@cli.command("rerank")
@click.option("--documents", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--judgments", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", "split_path", type=click.Path(exists=True, dir_okay=False),
              help="Restrict to the split's train pairs.")
@click.option("--method", required=True, type=click.Choice(METHOD_NAMES))
@click.option("--instructions", default=None, help="Inline matching instructions.")
@click.option("--instructions-file", type=click.Path(exists=True, dir_okay=False))
@click.option("--instructions-store", type=click.Path(file_okay=False),
              help="Read instructions (and their version) from a review store.")
@click.option("--stub", "stub_path", type=click.Path(exists=True, dir_okay=False),
              help="Stub fixtures JSONL; default backend is the stub even without fixtures.")
@click.option("--base-url", default=None, help="OpenAI-compatible endpoint; switches off the stub.")
@click.option("--model", default="gpt-4o-mini", show_default=True)
@click.option("--embedding-model", default="text-embedding-3-large", show_default=True)
@click.option("--t", "t", type=int, default=30, show_default=True, help="Max candidates kept per record.")
@click.option("--min-candidates", type=int, default=2, show_default=True)
@click.option("--max-candidates", type=int, default=30, show_default=True)
@click.option("--templates-dir", type=click.Path(exists=True, file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--parallelism", type=int, default=4, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--review-store", "review_store_path", type=click.Path(file_okay=False),
              help="Also enqueue results into this review store.")
@click.option("--json", "as_json", is_flag=True)
def rerank_command(documents, judgments, split_path, method, instructions, instructions_file,
                   instructions_store, stub_path, base_url, model, embedding_model, t,
                   min_candidates, max_candidates, templates_dir, seed, parallelism, out,
                   review_store_path, as_json):
    """Rerank judged candidate pools and export the generated dataset."""
    docs, judg, pools = _load(documents, judgments)

    instructions_version = None
    sources = [s for s in (instructions, instructions_file, instructions_store) if s]
    if len(sources) > 1:
        raise click.UsageError("give at most one of --instructions/--instructions-file/--instructions-store")
    if instructions_file:
        instructions = Path(instructions_file).read_text(encoding="utf-8").strip()
    elif instructions_store:
        with review.ReviewStore(instructions_store) as store:
            doc = store.instructions()
        instructions = doc.text.strip() or None
        instructions_version = doc.version if instructions else None

    method_obj = _resolve_method(method, instructions)
    gateway = _build_gateway(base_url, model, embedding_model, stub_path, seed, parallelism)
    templates = rerank.PromptTemplates.load(templates_dir) if templates_dir else None

    query_ids = None
    if split_path:
        split_obj = corpus.load_split(split_path)
        pool_grades = _pool_grades(pools)
        train_by_query: dict[str, list[tuple[str, int]]] = {}
        for qid, did in split_obj.train_pairs:
            train_by_query.setdefault(qid, []).append((did, pool_grades[qid][did]))
        pools = [
            corpus.CandidatePool(query_id=q, candidates=tuple(sorted(cands)))
            for q, cands in sorted(train_by_query.items())
        ]
        query_ids = sorted(train_by_query)

    spec = pipeline.FilterSpec(min_candidates=min_candidates, max_candidates=max_candidates)
    dataset = pipeline.generate(
        docs, pools, method_obj, spec, t, gateway,
        templates=templates, seed=seed, query_ids=query_ids,
        instructions_version=instructions_version,
    )
    pipeline.export_dataset(dataset, out)

    enqueued = []
    if review_store_path:
        results = _regenerate_results_for_review(docs, pools, method_obj, gateway, templates,
                                                 dataset, instructions_version)
        with review.ReviewStore(review_store_path) as store:
            enqueued = store.enqueue(results, docs)

    summary = {
        "records": len(dataset.records),
        "failures": len(dataset.manifest.failures),
        "method": dataset.manifest.method,
        "config_hash": dataset.manifest.config_hash[:12],
        "ledger": dataset.manifest.ledger,
        "out": str(out),
        "enqueued": len(enqueued),
    }
    if as_json:
        _echo_json(summary)
    else:
        for key, value in summary.items():
            click.echo(f"{key:>14}: {value}")


def _pool_grades(pools) -> dict[str, dict[str, int]]:
    return {p.query_id: dict(p.candidates) for p in pools}


def _regenerate_results_for_review(docs, pools, method_obj, gateway, templates, dataset,
                                   instructions_version):
    """Re-run reranking per exported record to get full artifacts
    (verdicts, explanations) for the review queue. Deterministic under the
    stub, so this replays the exact generation."""
    by_query = {p.query_id: p for p in pools}
    results = []
    for record in dataset.records:
        pool = by_query[record.query_id]
        candidates = [docs[d] for d, _ in pool.candidates]
        results.append(
            rerank.rerank(docs[record.query_id], candidates, method_obj, gateway,
                          templates, instructions_version=instructions_version)
        )
    return results


@cli.command("review-serve")
@click.option("--store", "store_path", required=True, type=click.Path(file_okay=False),
              envvar="QBD_REVIEW_STORE")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--static-dir", type=click.Path(file_okay=False),
              help="Directory of built UI assets to mount at /ui.")
def review_serve(store_path, host, port, static_dir):
    """Serve the review HTTP API (and optionally the browser UI)."""
    import uvicorn

    from .review_http import create_app

    store = review.ReviewStore(store_path)
    app = create_app(store, static_dir=static_dir)
    click.echo(f"review service on http://{host}:{port} (store: {store_path})")
    uvicorn.run(app, host=host, port=port, log_level="info")


@cli.command()
@click.option("--documents", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--judgments", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", "split_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--signal", required=True,
              help="'ideal-train', 'ideal-test', or a generated dataset JSONL path.")
@click.option("--trials", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threshold", type=int, default=1, show_default=True,
              help="Relevance grade threshold for ground-truth signals.")
@click.option("--scs-cutoff", type=float, default=0.0, show_default=True,
              help="Score cutoff when the signal comes from pointwise scoring.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write the full tune result JSON here.")
@click.option("--json", "as_json", is_flag=True)
def tune(documents, judgments, split_path, signal, trials, seed, threshold, scs_cutoff, out, as_json):
    """Search BM25 {k1, b} against a training signal."""
    docs, judg, pools = _load(documents, judgments)
    split_obj = corpus.load_split(split_path)
    index = _train_index(docs, split_obj)
    queries = {d.id: d.text for d in docs.values()}
    texts = {d.id: d.text for d in docs.values()}

    grades = _pool_grades(pools)
    if signal == "ideal-train":
        signal_map = _train_signal(split_obj, grades)
        rule = tuner.RelevanceRule(kind=tuner.RULE_GRADE, threshold=threshold)
        provenance = "ideal-train"
    elif signal == "ideal-test":
        signal_map = {q: [(d, float(g)) for d, g in entries] for q, entries in split_obj.test_lists.items()}
        rule = tuner.RelevanceRule(kind=tuner.RULE_GRADE, threshold=threshold)
        provenance = "ideal-test"
    else:
        dataset = pipeline.import_dataset(signal)
        signal_map = pipeline.dataset_signal(dataset)
        if dataset.manifest.method.startswith("pcs"):
            rule = tuner.RelevanceRule(kind=tuner.RULE_PCS)
        else:
            rule = tuner.RelevanceRule(kind=tuner.RULE_SCS, threshold=scs_cutoff)
        provenance = dataset.manifest.method
    config = tuner.TuneConfig(n_trials=trials, seed=seed, rule=rule)
    result = tuner.tune(index, queries, signal_map, config, texts=texts, provenance=provenance)
    if out:
        Path(out).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    if as_json:
        _echo_json(result.to_dict() | {"out": out})
    else:
        click.echo(f"signal: {provenance}")
        click.echo(f"best k1={result.best_params.k1:.4f} b={result.best_params.b:.4f} "
                   f"MAP={result.best_objective:.4f} ({len(result.history)} trials)")


def _train_index(docs, split_obj):
    train_docs = [docs[d] for d in sorted(split_obj.train_docs())]
    return bm25.build_index(train_docs)


def _train_signal(split_obj, grades):
    signal: dict[str, list[tuple[str, float]]] = {}
    for qid, did in split_obj.train_pairs:
        signal.setdefault(qid, []).append((did, float(grades[qid][did])))
    return signal


@cli.command()
@click.option("--documents", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--judgments", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", "split_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k1", type=float, default=None)
@click.option("--b", type=float, default=None)
@click.option("--tune-result", type=click.Path(exists=True, dir_okay=False),
              help="Take {k1, b} from a tune result JSON instead of flags.")
@click.option("--threshold", type=int, default=1, show_default=True)
@click.option("--json", "as_json", is_flag=True)
def evaluate(documents, judgments, split_path, k1, b, tune_result, threshold, as_json):
    """Evaluate BM25 parameters on the split's withheld test lists."""
    docs, judg, pools = _load(documents, judgments)
    split_obj = corpus.load_split(split_path)
    if tune_result:
        best = json.loads(Path(tune_result).read_text(encoding="utf-8"))["best"]
        params = bm25.Bm25Params(k1=float(best["k1"]), b=float(best["b"]))
    elif k1 is not None and b is not None:
        params = bm25.Bm25Params(k1=k1, b=b)
    else:
        params = bm25.Bm25Params()
    index = _train_index(docs, split_obj)
    queries = {d.id: d.text for d in docs.values()}
    texts = {d.id: d.text for d in docs.values()}
    report = tuner.evaluate_tuned(params, index, queries, split_obj.test_lists,
                                  relevance_threshold=threshold, texts=texts)
    unindexed = sum(
        1 for entries in split_obj.test_lists.values() for d, _ in entries if d not in index
    )
    if as_json:
        payload = dict(_report_rows(report))
        payload.update({"k1": params.k1, "b": params.b, "unindexed_candidates": unindexed})
        _echo_json(payload)
    else:
        click.echo(f"params: k1={params.k1:.4f} b={params.b:.4f}")
        click.echo(f"test queries: {len(split_obj.test_lists)}  unindexed candidates: {unindexed}")
        _print_report(report)


@cli.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--statuses", default="accepted,corrected", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def export(store_path, statuses, out, as_json):
    """Export reviewed items from a review store as a dataset file."""
    wanted = [s.strip() for s in statuses.split(",") if s.strip()]
    with review.ReviewStore(store_path) as store:
        dataset = store.export_reviewed(wanted)
    pipeline.export_dataset(dataset, out)
    summary = {"records": len(dataset.records), "out": str(out)}
    if as_json:
        _echo_json(summary)
    else:
        click.echo(f"exported {summary['records']} records to {out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.Abort:
        return 130
    except click.ClickException as exc:
        exc.show()
        return 1
    except GatewayError as exc:
        click.echo(f"gateway error: {exc}", err=True)
        return 3
    except DATA_ERRORS as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
