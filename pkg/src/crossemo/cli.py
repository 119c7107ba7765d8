"""Command-line client for the toolkit.

Each subcommand builds the same request model the HTTP service accepts and
either calls the handler in-process (default) or POSTs it to a running
service (--server). Artifacts are rendered locally from the response, so a
run produces identical bytes either way.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .adaptation import GridRow
from .errors import CrossemoError
from .fad import FADResult
from .probe import LayerProbeRow
from .reporting import (
    write_adapt_artifacts,
    write_fad_artifacts,
    write_probe_artifacts,
)
from .service import handlers
from .service.schemas import (
    AdapterSettings,
    AdaptRequest,
    EncoderSettings,
    FadRequest,
    ProbeRequest,
    SynthRequest,
    TrainSettings,
    ValidateRequest,
)
from .store import EMOTIONS

OUTPUT_ENV = "CROSSEMO_OUT"

_ENDPOINTS = {
    "synth": handlers.handle_synth,
    "validate": handlers.handle_validate,
    "probe": handlers.handle_probe,
    "adapt": handlers.handle_adapt,
    "fad": handlers.handle_fad,
}


def dispatch(server: str | None, endpoint: str, request) -> dict:
    """Run a request in-process, or POST it to a service at ``server``."""
    if server is None:
        return _ENDPOINTS[endpoint](request).model_dump()
    import httpx

    try:
        response = httpx.post(
            f"{server.rstrip('/')}/{endpoint}",
            json=request.model_dump(),
            timeout=600.0,
        )
    except httpx.HTTPError as exc:
        raise CrossemoError(f"cannot reach service at {server}: {exc}") from exc
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise CrossemoError(f"service error ({response.status_code}): {detail}")
    return response.json()


# ---------------------------------------------------------------------------
# Shared option handling
# ---------------------------------------------------------------------------


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _default_out(args, config) -> Path:
    out = args.out or config.get("output_dir") or os.environ.get(OUTPUT_ENV) or "out"
    return Path(out)


def _embedding_map(args, config, parser, key="embeddings") -> dict[str, str]:
    mapping = dict(config.get(key, {}))
    for item in getattr(args, key, None) or []:
        if "=" not in item:
            parser.error(f"--{key} takes tag=path, got '{item}'")
        tag, path = item.split("=", 1)
        mapping[tag] = path
    return mapping


def _apply_models_filter(parser, models: str | None, *maps: dict[str, str]):
    """Restrict tag->path maps to --models; unknown tags are a usage error."""
    if models is None:
        return maps
    wanted = [t for t in models.split(",") if t]
    known = set().union(*maps)
    missing = [t for t in wanted if t not in known]
    if missing:
        parser.error(f"unknown model tags {missing}; have {sorted(known)}")
    return tuple({t: m[t] for t in wanted if t in m} for m in maps)


def _parse_params(items) -> dict:
    params = {}
    for item in items or []:
        key, _, value = item.partition("=")
        try:
            params[key] = json.loads(value)
        except ValueError:
            params[key] = value
    return params


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, parser) -> int:
    config = _load_config(args.config)
    out = _default_out(args, config)
    request = SynthRequest(
        out_dir=str(out),
        name=args.name,
        seed=args.seed if args.seed is not None else config.get("seed", 0),
        preset=args.preset,
        params=_parse_params(args.param),
        config=config.get("synthetic") if args.config else None,
    )
    result = dispatch(args.server, "synth", request)
    print(f"wrote {result['record_count']} records to {result['embedding_path']}")
    print(f"manifest: {result['manifest_path']}")
    print(f"config:   {result['config_path']}")
    return 0


def cmd_validate(args, parser) -> int:
    result = dispatch(args.server, "validate", ValidateRequest(path=args.path))
    if result["valid"]:
        print(
            f"OK: {result['record_count']} records, "
            f"L={result['num_layers']}, D={result['dim']}, "
            f"model_tags={result['model_tags']}"
        )
        return 0
    for error in result["errors"]:
        print(f"error: {error}", file=sys.stderr)
    return 1


def _probe_rows_by_pair(rows) -> dict[tuple[str, str], list[LayerProbeRow]]:
    grouped: dict[tuple[str, str], list[LayerProbeRow]] = {}
    for row in rows:
        recalls = np.array(
            [
                np.nan if row["per_class_recall"][e] is None else row["per_class_recall"][e]
                for e in EMOTIONS
            ]
        )
        grouped.setdefault((row["model_tag"], row["task"]), []).append(
            LayerProbeRow(
                layer=row["layer"],
                val_ua=row["val_ua"],
                test_ua=row["test_ua"],
                per_class_recall=recalls,
                epoch_of_best=row["epoch_of_best"],
            )
        )
    return grouped


def cmd_probe(args, parser) -> int:
    config = _load_config(args.config)
    (embeddings,) = _apply_models_filter(
        parser, args.models, _embedding_map(args, config, parser)
    )
    if not embeddings:
        parser.error("no embedding files given (use --embeddings or --config)")
    probe_cfg = config.get("probe", {})
    train = TrainSettings(**probe_cfg.get("train", {}))
    if args.epochs is not None:
        train.epochs = args.epochs
    if args.seed is not None:
        train.seed = args.seed
    request = ProbeRequest(
        embeddings=embeddings,
        tasks=probe_cfg.get("tasks", ["SER", "MER"]),
        split_seed=(
            args.split_seed
            if args.split_seed is not None
            else config.get("split_seed", 0)
        ),
        manifest=args.manifest or config.get("manifest"),
        train=train,
        jobs=args.jobs,
    )
    result = dispatch(args.server, "probe", request)
    out = _default_out(args, config)
    if result["rows"]:
        paths = write_probe_artifacts(out, _probe_rows_by_pair(result["rows"]))
        for path in paths:
            print(f"wrote {path}")
    for failure in result["failures"]:
        print(
            f"model failed: {failure['model_tag']}"
            f"{'/' + failure['task'] if failure['task'] else ''}: {failure['error']}",
            file=sys.stderr,
        )
    return 1 if result["failures"] else 0


def cmd_adapt(args, parser) -> int:
    config = _load_config(args.config)
    adapt_cfg = config.get("adapt", {})
    embeddings, inputs = _apply_models_filter(
        parser,
        args.models,
        _embedding_map(args, config, parser),
        _embedding_map(args, config, parser, key="inputs"),
    )
    if not embeddings and not inputs:
        parser.error("no embedding or input files given")
    out = _default_out(args, config)
    encoder = adapt_cfg.get("encoder")
    request = AdaptRequest(
        embeddings=embeddings,
        inputs=inputs,
        encoder=EncoderSettings(**encoder) if encoder else None,
        adapter=AdapterSettings(**adapt_cfg.get("adapter", {})),
        approaches=(
            args.approaches.split(",")
            if args.approaches
            else adapt_cfg.get("approaches", ["baseline", "ws", "peft"])
        ),
        directions=adapt_cfg.get("directions", ["SER->MER", "MER->SER"]),
        split_seed=(
            args.split_seed
            if args.split_seed is not None
            else config.get("split_seed", 0)
        ),
        manifest=args.manifest or config.get("manifest"),
        seed=args.seed if args.seed is not None else adapt_cfg.get("seed", 0),
        epochs=(
            args.epochs if args.epochs is not None else adapt_cfg.get("epochs", 300)
        ),
        include_scratch=args.scratch or adapt_cfg.get("include_scratch", False),
        checkpoint_dir=str(out / "checkpoints"),
        learning_rates=adapt_cfg.get("learning_rates", {}),
    )
    result = dispatch(args.server, "adapt", request)
    grid_rows = [GridRow(**row) for row in result["rows"]]
    paths = write_adapt_artifacts(out, grid_rows)
    for path in paths:
        print(f"wrote {path}")
    failed = [row for row in grid_rows if row.error]
    for row in failed:
        print(
            f"cell failed: {row.model_tag}/{row.approach}/{row.direction}: {row.error}",
            file=sys.stderr,
        )
    return 0


def cmd_fad(args, parser) -> int:
    config = _load_config(args.config)
    (embeddings,) = _apply_models_filter(
        parser, args.models, _embedding_map(args, config, parser)
    )
    if not embeddings:
        parser.error("no embedding files given (use --embeddings or --config)")
    request = FadRequest(
        embeddings=embeddings,
        manifest=args.manifest or config.get("manifest"),
        per_frame=args.per_frame or config.get("fad", {}).get("per_frame", False),
    )
    result = dispatch(args.server, "fad", request)
    by_tag: dict[str, list[FADResult]] = {}
    for failure in result["failures"]:
        print(
            f"model failed: {failure['model_tag']}: {failure['error']}",
            file=sys.stderr,
        )
    for row in result["rows"]:
        by_tag.setdefault(row["model_tag"], []).append(
            FADResult(
                model_tag=row["model_tag"],
                layer=row["layer"],
                emotion=row["emotion"],
                score=row["fad"],
                n_speech=row["n_speech"],
                n_music=row["n_music"],
                error=row["error"],
            )
        )
    out = _default_out(args, config)
    if by_tag:
        paths = write_fad_artifacts(out, by_tag)
        for path in paths:
            print(f"wrote {path}")
    return 1 if result["failures"] else 0


def cmd_serve(args, parser) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossemo",
        description="Cross-domain emotion representation toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_embeddings=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--server", help="service URL; default runs in-process")
        p.add_argument("--out", help=f"output directory (or ${OUTPUT_ENV})")
        p.add_argument("--seed", type=int, default=None, help="run seed")
        if with_embeddings:
            p.add_argument(
                "--embeddings",
                action="append",
                metavar="TAG=PATH",
                help="embedding file per model tag (repeatable)",
            )
            p.add_argument(
                "--models", help="comma-separated model tags to keep from the config"
            )
            p.add_argument("--manifest", help="manifest JSON; default: derive by seed")
            p.add_argument(
                "--split-seed", type=int, default=None, dest="split_seed",
                help="seed for the derived 60/20/20 split",
            )

    p = sub.add_parser("synth", help="generate a synthetic fixture corpus")
    common(p, with_embeddings=False)
    p.add_argument("--name", default="fixture", help="basename for output files")
    p.add_argument(
        "--preset",
        default="coupled",
        choices=("coupled", "layer_signal", "disjoint"),
        help="fixture family",
    )
    p.add_argument(
        "--param",
        action="append",
        metavar="KEY=VALUE",
        help="preset parameter override (repeatable), e.g. dim=16",
    )
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="lint an embedding file")
    common(p, with_embeddings=False)
    p.add_argument("path", help="embedding file to check")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("probe", help="layerwise probe sweep")
    common(p)
    p.add_argument("--epochs", type=int, default=None, help="override training epochs")
    p.add_argument("--jobs", type=int, default=1, help="parallel (model, task) jobs")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("adapt", help="two-stage domain adaptation grid")
    common(p)
    p.add_argument(
        "--inputs",
        action="append",
        metavar="TAG=PATH",
        help="single-layer input corpus per model tag (enables peft)",
    )
    p.add_argument("--approaches", help="comma-separated subset of baseline,ws,peft")
    p.add_argument("--epochs", type=int, default=None, help="epochs per stage")
    p.add_argument(
        "--scratch",
        action="store_true",
        help="also train a from-scratch target baseline per cell",
    )
    p.add_argument("--jobs", type=int, default=1, help="accepted for symmetry")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("fad", help="per-layer, per-emotion FAD sweep")
    common(p)
    p.add_argument(
        "--per-frame",
        action="store_true",
        help="use frame vectors instead of per-utterance pooling",
    )
    p.set_defaults(func=cmd_fad)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8060)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except CrossemoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
