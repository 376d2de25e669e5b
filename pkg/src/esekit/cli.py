"""Command line interface.

Every subcommand is a thin client over the engine service: it reads
local files, posts their records, and writes the reply back to disk as
header-prefixed artifacts. Without ``--server`` the service runs in
process, so the commands work standalone; with it, the same requests go
over the network.

Exit codes: 0 success, 1 usage error, 2 data validation error,
3 provider failure, 4 empty expansion.
"""
from __future__ import annotations

import json
from pathlib import Path

import click

from . import __version__
from .artifacts import make_header, read_jsonl_records, write_json, write_jsonl
from .classgen import ultra_class_from_record
from .config import RunConfig, config_hash, resolve_config
from .corpus import corpus_from_records, corpus_records
from .embeddings import EmbeddingStore
from .errors import (
    DataValidationError,
    EmptyExpansionError,
    EsekitError,
    ProviderError,
    UsageError,
)
from .generation import COT_MODES
from .metrics import AP_NORMALIZERS, flatten_queries
from .providers.conformance import run_conformance
from .service.client import EngineClient

# single-invocation resource names on the service
CORPUS_NAME = "cli"
STORE_NAME = "cli"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_PROVIDER = 3
EXIT_EMPTY = 4


def corpus_options(fn):
    fn = click.option("--classes", type=click.Path(), default=None, help="fine class records (JSONL)")(fn)
    fn = click.option("--sentences", type=click.Path(), default=None, help="sentence records (JSONL)")(fn)
    fn = click.option("--entities", type=click.Path(), default=None, help="entity records (JSONL)")(fn)
    return fn


@click.group(name="esekit")
@click.version_option(version=__version__)
@click.option("--config", "config_path", type=click.Path(), default=None, help="YAML or JSON config file")
@click.option("--server", default=None, help="engine service URL (default: run in process)")
@click.option("--seed", type=int, default=None, help="root random seed")
@click.option("--jobs", type=int, default=None, help="worker threads for embedding")
@click.option("--provider", type=click.Choice(["stub", "remote"]), default=None)
@click.option("--endpoint", default=None, help="model provider URL when --provider remote")
@click.pass_context
def cli(ctx, config_path, **overrides):
    """Entity set expansion with positive and negative seeds."""
    ctx.obj = {"config_path": config_path, "overrides": overrides}


def _config(ctx, **overrides) -> RunConfig:
    base = ctx.obj or {"config_path": None, "overrides": {}}
    return resolve_config(base["config_path"], **{**base["overrides"], **overrides})


def _client(cfg: RunConfig) -> EngineClient:
    return EngineClient(server=cfg.server, seed=cfg.seed, dim=cfg.dim, tokenizer_kind=cfg.tokenizer)


def _header(cfg: RunConfig, command: str, fmt: str) -> dict:
    return make_header(command, config_hash(cfg), cfg.seed, fmt)


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) in (None, "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"missing required option(s): {flags}")


def _corpus_payload(cfg: RunConfig) -> dict:
    _require(cfg, "entities", "sentences", "classes")
    return {
        "name": CORPUS_NAME,
        "entities": read_jsonl_records(cfg.entities),
        "sentences": read_jsonl_records(cfg.sentences),
        "fine_classes": read_jsonl_records(cfg.classes),
    }


def _post_store(client: EngineClient, path: str) -> EmbeddingStore:
    cache = EmbeddingStore.load(path)
    client.post("/stores/load", {"name": STORE_NAME, "dim": cache.dim, "records": cache.records()})
    return cache


@cli.command()
@corpus_options
@click.option("--out-dir", type=click.Path(), default=None, help="directory for canonical corpus files")
@click.pass_context
def ingest(ctx, **opts):
    """Validate raw corpus files and write their canonical form."""
    cfg = _config(ctx, **opts)
    payload = _corpus_payload(cfg)
    with _client(cfg) as client:
        reply = client.post("/corpora", payload)
    corpus = corpus_from_records(payload["entities"], payload["sentences"], payload["fine_classes"])
    entities, sentences, classes = corpus_records(corpus)
    out_dir = Path(cfg.out_dir or "canonical")
    write_jsonl(out_dir / "entities.jsonl", entities, _header(cfg, "ingest", "entities"))
    write_jsonl(out_dir / "sentences.jsonl", sentences, _header(cfg, "ingest", "sentences"))
    write_jsonl(out_dir / "fine_classes.jsonl", classes, _header(cfg, "ingest", "fine-classes"))
    click.echo(json.dumps(reply["stats"], sort_keys=True))


@cli.command("gen-classes")
@corpus_options
@click.option("--fine-class", default=None, help="restrict to one fine class")
@click.option("--pos-attr-count", type=int, default=None, help="attribute constraints per positive side")
@click.option("--neg-attr-count", type=int, default=None, help="attribute constraints per negative side")
@click.option("--n-thred", type=int, default=None, help="minimum size of both target sets")
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def gen_classes(ctx, **opts):
    """Derive constrained expansion classes from corpus attributes."""
    cfg = _config(ctx, **opts)
    payload = _corpus_payload(cfg)
    with _client(cfg) as client:
        client.post("/corpora", payload)
        reply = client.post(
            "/classes/generate",
            {
                "corpus": CORPUS_NAME,
                "fine_class": cfg.fine_class,
                "pos_attr_count": cfg.pos_attr_count,
                "neg_attr_count": cfg.neg_attr_count,
                "n_thred": cfg.n_thred,
                "seed": cfg.seed,
            },
        )
    out = Path(cfg.out or "ultra_classes.jsonl")
    write_jsonl(out, reply["classes"], _header(cfg, "gen-classes", "ultra-classes"))
    click.echo(f"wrote {len(reply['classes'])} classes to {out}")


@cli.command()
@corpus_options
@click.option("--store", type=click.Path(), default=None, help="output cache path")
@click.option("--cap", type=int, default=None, help="max sentences averaged per entity")
@click.option("--dim", type=int, default=None, help="embedding width (stub provider)")
@click.pass_context
def embed(ctx, **opts):
    """Embed every candidate entity from its masked contexts."""
    cfg = _config(ctx, **opts)
    payload = _corpus_payload(cfg)
    with _client(cfg) as client:
        client.post("/corpora", payload)
        client.post(
            "/stores/build",
            {
                "corpus": CORPUS_NAME,
                "name": STORE_NAME,
                "cap": cfg.cap,
                "dim": cfg.dim,
                "seed": cfg.seed,
                "jobs": cfg.jobs,
                "embedder": cfg.embedder,
                "provider": cfg.provider_config(),
            },
        )
        dump = client.get(f"/stores/{STORE_NAME}")
    store = EmbeddingStore.from_records(dump["dim"], dump["records"])
    out = Path(cfg.store or "embeddings.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    store.save(out, extra_header=_header(cfg, "embed", "embedding-cache")["header"])
    click.echo(f"embedded {len(store)} entities (dim {store.dim}) to {out}")


@cli.command()
@corpus_options
@click.option("--dataset", type=click.Path(), default=None, help="class dataset (JSONL)")
@click.option("--store", type=click.Path(), default=None, help="embedding cache (retrieval framework)")
@click.option("--framework", type=click.Choice(["ret", "gen"]), default=None)
@click.option("--k", type=int, default=None, help="list length per query")
@click.option("--segment-length", type=int, default=None)
@click.option("--rerank/--no-rerank", default=None)
@click.option("--rounds", type=int, default=None, help="generation rounds (default: enough to fill k)")
@click.option("--per-round-generate", type=int, default=None)
@click.option("--select-count", type=int, default=None)
@click.option("--beam-width", type=int, default=None)
@click.option("--cot-mode", type=click.Choice(list(COT_MODES)), default=None)
@click.option("--cot-log", type=click.Path(), default=None, help="write reasoning transcripts here")
@click.option("--tokenizer", type=click.Choice(["whitespace", "character"]), default=None)
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def expand(ctx, **opts):
    """Expand every query in a dataset into a ranked entity list."""
    cfg = _config(ctx, **opts)
    _require(cfg, "dataset")
    payload = _corpus_payload(cfg)
    body = {
        "corpus": CORPUS_NAME,
        "framework": cfg.framework,
        "dataset": read_jsonl_records(cfg.dataset),
        "k": cfg.k,
        "segment_length": cfg.segment_length,
        "rerank": cfg.rerank,
        "rounds": cfg.rounds,
        "per_round_generate": cfg.per_round_generate,
        "select_count": cfg.select_count,
        "beam_width": cfg.beam_width,
        "seed": cfg.seed,
        "cot_mode": cfg.cot_mode,
        "tokenizer": cfg.tokenizer,
        "provider": cfg.provider_config(),
    }
    with _client(cfg) as client:
        client.post("/corpora", payload)
        if cfg.framework == "ret":
            _require(cfg, "store")
            _post_store(client, cfg.store)
            body["store"] = STORE_NAME
        reply = client.post("/expand", body)
    out = Path(cfg.out or "expanded.jsonl")
    write_jsonl(out, reply["results"], _header(cfg, "expand", "ranked-lists"))
    if cfg.cot_log:
        write_jsonl(cfg.cot_log, reply["cot"], _header(cfg, "expand", "cot-log"))
    empty = [r["query_index"] for r in reply["results"] if not r["entries"]]
    for qi in empty:
        click.echo(f"warning: query {qi} produced an empty expansion", err=True)
    click.echo(f"wrote {len(reply['results'])} ranked lists to {out}")
    if empty and len(empty) == len(reply["results"]):
        raise EmptyExpansionError("every query produced an empty expansion")


@cli.command("mine-pairs")
@corpus_options
@click.option("--store", type=click.Path(), default=None, help="embedding cache")
@click.option("--dataset", type=click.Path(), default=None, help="class dataset (JSONL)")
@click.option("--query-index", type=int, default=None, help="which dataset query to mine from")
@click.option("--t", "t", type=int, default=None, help="similar-list size per polarity")
@click.option("--k", type=int, default=None, help="expansion length the lists are drawn from")
@click.option("--pool-size", type=int, default=None, help="other-class entities used as negatives")
@click.option("--samples-per-entity", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def mine_pairs(ctx, **opts):
    """Mine contrastive training pairs from a retrieval expansion."""
    cfg = _config(ctx, **opts)
    _require(cfg, "dataset", "store")
    payload = _corpus_payload(cfg)
    dataset = [ultra_class_from_record(r) for r in read_jsonl_records(cfg.dataset)]
    flat = flatten_queries(dataset)
    if not 0 <= cfg.query_index < len(flat):
        raise UsageError(f"--query-index {cfg.query_index} out of range; dataset has {len(flat)} queries")
    ultra_class, query = flat[cfg.query_index]
    with _client(cfg) as client:
        client.post("/corpora", payload)
        _post_store(client, cfg.store)
        reply = client.post(
            "/pairs/mine",
            {
                "corpus": CORPUS_NAME,
                "store": STORE_NAME,
                "fine_class": ultra_class.fine_class,
                "query": {"pos_seeds": list(query.pos_seeds), "neg_seeds": list(query.neg_seeds)},
                "k": cfg.k,
                "t": cfg.t,
                "pool_size": cfg.pool_size,
                "samples_per_entity": cfg.samples_per_entity,
                "provider": cfg.provider_config(),
            },
        )
    out = Path(cfg.out or "pairs.jsonl")
    records = reply["positives"] + reply["negatives"]
    write_jsonl(out, records, _header(cfg, "mine-pairs", "contrastive-pairs"))
    click.echo(
        f"wrote {len(reply['positives'])} positive and {len(reply['negatives'])} negative pairs to {out}"
    )


@cli.command("eval")
@click.option("--results", type=click.Path(), default=None, help="ranked lists (JSONL)")
@click.option("--dataset", type=click.Path(), default=None, help="class dataset (JSONL)")
@click.option("--ks", default=None, help="comma separated cutoffs (default 10,20,50,100)")
@click.option("--normalizer", type=click.Choice(list(AP_NORMALIZERS)), default=None)
@click.option("--out", type=click.Path(), default=None, help="report JSON path")
@click.option("--table-out", type=click.Path(), default=None, help="also write the text table here")
@click.pass_context
def eval_cmd(ctx, ks, **opts):
    """Score ranked lists against their class targets."""
    if ks is not None:
        try:
            ks = tuple(int(v) for v in str(ks).split(","))
        except ValueError:
            raise UsageError(f"--ks must be comma separated integers, got {ks!r}") from None
    cfg = _config(ctx, ks=ks, **opts)
    _require(cfg, "results", "dataset")
    with _client(cfg) as client:
        reply = client.post(
            "/eval",
            {
                "results": read_jsonl_records(cfg.results),
                "dataset": read_jsonl_records(cfg.dataset),
                "ks": list(cfg.ks),
                "normalizer": cfg.normalizer,
            },
        )
    document = {**_header(cfg, "eval", "metric-report"), "report": reply["report"]}
    write_json(Path(cfg.out or "report.json"), document)
    if cfg.table_out:
        Path(cfg.table_out).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.table_out).write_text(reply["table"] + "\n", encoding="utf-8")
    click.echo(reply["table"])


@cli.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.pass_context
def serve(ctx, host, port):
    """Run the engine service over HTTP."""
    import uvicorn

    from .service.app import create_app

    cfg = _config(ctx)
    uvicorn.run(create_app(seed=cfg.seed, dim=cfg.dim, tokenizer_kind=cfg.tokenizer), host=host, port=port)


@cli.command()
@click.option("--endpoint", default=None, help="provider base URL to check")
@click.pass_context
def conformance(ctx, **opts):
    """Check a model provider endpoint against the wire protocol."""
    cfg = _config(ctx, **opts)
    _require(cfg, "endpoint")
    results = run_conformance(cfg.endpoint, timeout=cfg.timeout)
    failed = [r for r in results if not r.ok]
    for result in results:
        line = f"{'PASS' if result.ok else 'FAIL'} {result.name}"
        if not result.ok:
            line += f": {result.detail}"
        click.echo(line)
    if failed:
        raise ProviderError(f"{len(failed)} conformance check(s) failed")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except EmptyExpansionError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_EMPTY
    except UsageError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except DataValidationError as exc:
        click.echo(exc.report(), err=True)
        return EXIT_VALIDATION
    except ProviderError as exc:
        message = f"error: {exc}"
        if exc.request_id:
            message += f" (request {exc.request_id})"
        click.echo(message, err=True)
        return EXIT_PROVIDER
    except EsekitError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
