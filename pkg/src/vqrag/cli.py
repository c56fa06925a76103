"""Operator CLI: thin wrappers around the same engine the service exposes."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__, evalharness
from .config import backends_from_env, build_run_config
from .domain import MediaInput, QualityQuestion, canonical_json
from .errors import VqragError
from .mediaprobe import probe as probe_media
from .pipeline import Engine, StageCache
from .service.app import create_app


@click.group()
@click.version_option(version=__version__, prog_name="vqrag")
def main() -> None:
    """Visual quality question answering with retrieval-augmented evidence."""


def _engine(mock: bool, config_file: str | None, **overrides) -> Engine:
    cfg = build_run_config(config_file, overrides)
    return Engine(backends_from_env(mock=mock), cfg)


def _config_options(include_seed: bool = True):
    def wrap(fn):
        fn = click.option("--tau", type=float, default=None, help="retrieval threshold")(fn)
        fn = click.option("--nl", "n_l", type=int, default=None, help="local description samples")(fn)
        if include_seed:
            fn = click.option("--seed", type=int, default=None)(fn)
        fn = click.option("--cache-dir", type=click.Path(), default=None)(fn)
        fn = click.option("--config", "config_file", type=click.Path(exists=True), default=None)(fn)
        fn = click.option("--mock", is_flag=True, help="use deterministic offline backends")(fn)
        return fn

    return wrap


@main.command("probe")
@click.argument("path", type=click.Path())
def cmd_probe(path: str) -> None:
    """Print technical metadata for a media file as canonical JSON."""
    try:
        media = MediaInput.from_path(path)
        meta = probe_media(media)
    except VqragError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(meta.to_json())


@main.command("ask")
@click.argument("media", nargs=-1, type=click.Path(exists=True), required=True)
@click.option("--question", "-q", required=True)
@click.option("--option", "options", multiple=True, help="answer choice (repeat; labels are A, B, ...)")
@click.option("--no-meta", is_flag=True, help="disable the metadata database")
@click.option("--no-loc", is_flag=True, help="disable the localization database")
@click.option("--no-globalq", is_flag=True, help="disable the global summary database")
@click.option("--no-localq", is_flag=True, help="disable the local description database")
@click.option("--server", default=None, help="send the request to a running service instead")
@_config_options()
def cmd_ask(
    media: tuple[str, ...],
    question: str,
    options: tuple[str, ...],
    no_meta: bool,
    no_loc: bool,
    no_globalq: bool,
    no_localq: bool,
    server: str | None,
    mock: bool,
    config_file: str | None,
    **overrides,
) -> None:
    """Answer a quality question about one or two media files."""
    if len(media) not in (1, 2):
        raise click.UsageError("pass one or two media files")
    if server:
        _ask_via_server(server, media, question, options, overrides)
        return
    from .domain import KnowledgeFlags

    flags = KnowledgeFlags(
        meta=not no_meta, loc=not no_loc, globalq=not no_globalq, localq=not no_localq
    )
    try:
        engine = _engine(mock, config_file, flags=flags, **overrides)
        q = QualityQuestion.mcq(question, list(options), n_inputs=len(media))
        record = engine.run(list(media), q)
    except VqragError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(canonical_json(record.model_dump(mode="json")))


def _ask_via_server(server: str, media, question, options, overrides) -> None:
    import httpx

    body = {
        "media": [{"path": str(Path(p).resolve())} for p in media],
        "question": question,
        "options": list(options),
        "config": {k: v for k, v in overrides.items() if v is not None and k != "cache_dir"},
    }
    resp = httpx.post(server.rstrip("/") + "/ask", json=body, timeout=600)
    if resp.status_code != 200:
        click.echo(f"error: server replied {resp.status_code}: {resp.text}", err=True)
        sys.exit(1)
    click.echo(canonical_json(resp.json()))


@main.command("serve")
@click.option("--addr", default="127.0.0.1:8080", show_default=True)
@click.option("--cache-dir", type=click.Path(), default=None)
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.option("--mock", is_flag=True)
def cmd_serve(addr: str, cache_dir: str | None, config_file: str | None, mock: bool) -> None:
    """Run the HTTP service (POST /ask, GET /health)."""
    import uvicorn

    host, _, port = addr.partition(":")
    engine = _engine(mock, config_file, cache_dir=cache_dir)
    uvicorn.run(create_app(engine), host=host or "127.0.0.1", port=int(port or 8080))


@main.command("eval-mcq")
@click.option("--items", "items_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--parallelism", type=int, default=1, show_default=True)
@_config_options()
def cmd_eval_mcq(items_path, out_path, parallelism, mock, config_file, **overrides) -> None:
    """Answer every benchmark item and write an accuracy report."""
    try:
        items = evalharness.load_items(items_path)
        engine = _engine(mock, config_file, **overrides)
        results = engine.run_batch(
            [(list(it.media), it.to_question()) for it in items], parallelism=parallelism
        )
        records = []
        failures = 0
        for res, item in zip(results, items):
            if res.ok:
                records.append(res.record)
            else:
                failures += 1
                from .domain import AnswerRecord

                records.append(AnswerRecord(prompt_text="", raw_output=f"error: {res.error}"))
        report = evalharness.score_mcq(records, items)
        report["failed_runs"] = failures
    except VqragError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    Path(out_path).write_text(json.dumps(report, indent=2) + "\n", "utf-8")
    click.echo(json.dumps(report, indent=2))


@main.command("eval-pairwise")
@click.option("--items", "items_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, required=True)
@click.option("--pairs-out", "pairs_out", required=True, type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None, help="also answer and score the pairs")
@click.option("--parallelism", type=int, default=1, show_default=True)
@_config_options(include_seed=False)
def cmd_eval_pairwise(
    items_path, seed, pairs_out, out_path, parallelism, mock, config_file, **overrides
) -> None:
    """Build the seeded comparison pairs (and optionally answer + score them)."""
    try:
        items = evalharness.load_items(items_path)
        pairset = evalharness.build_pairs(items, seed)
        Path(pairs_out).write_text(pairset.to_json() + "\n", "utf-8")
        click.echo(f"wrote {len(pairset.pairs)} pairs ({len(pairset.non_tie())} non-tie) to {pairs_out}")
        if out_path is None:
            return
        engine = _engine(mock, config_file, **overrides)
        batch = []
        for pair in pairset.non_tie():
            first, second = items[pair.first], items[pair.second]
            kind = MediaInput.from_path(first.media[0]).kind.value
            batch.append(([first.media[0], second.media[0]], evalharness.comparison_question(kind)))
        results = engine.run_batch(batch, parallelism=parallelism)
        from .domain import AnswerRecord

        records = [
            r.record if r.ok else AnswerRecord(prompt_text="", raw_output=f"error: {r.error}")
            for r in results
        ]
        report = evalharness.score_pairwise(records, pairset)
    except VqragError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    Path(out_path).write_text(json.dumps(report, indent=2) + "\n", "utf-8")
    click.echo(json.dumps(report, indent=2))


@main.group("cache")
def cmd_cache() -> None:
    """Inspect or clear the stage cache."""


@cmd_cache.command("clear")
@click.option("--cache-dir", required=True, type=click.Path())
def cmd_cache_clear(cache_dir: str) -> None:
    removed = StageCache(cache_dir).clear()
    click.echo(f"removed {removed} cached stage outputs")


@cmd_cache.command("info")
@click.option("--cache-dir", required=True, type=click.Path())
def cmd_cache_info(cache_dir: str) -> None:
    root = Path(cache_dir)
    counts = {}
    if root.exists():
        for stage_dir in sorted(root.iterdir()):
            if stage_dir.is_dir():
                counts[stage_dir.name] = len(list(stage_dir.glob("*.json")))
    click.echo(json.dumps({"cache_dir": str(root), "entries": counts}))


if __name__ == "__main__":
    main()
