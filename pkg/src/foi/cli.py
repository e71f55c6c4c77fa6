"""Command-line surface: ``foi edit``, ``foi eval``, ``foi serve``.

Edits run in-process by default; ``--server URL`` turns the CLI into a
thin client that POSTs the request to a running service and writes the
returned image locally.  Attention debug dumps (``--dump``) are produced
where the pipeline runs and are therefore local-mode only.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import base64
import concurrent.futures
import sys

from . import __version__
from .errors import FoiError
from .instructions import split_instruction
from .masks import ExtractionParams
from .metrics import evaluate_manifest, get_provider, load_pairs_manifest, rows_to_csv
from .pipeline import EditRequest, edit, parse_sub_flag
from .sampling import DEFAULT_SEED, GuidanceParams

_EDIT_DEFAULTS = {
    "instruction": "",
    "seed": DEFAULT_SEED,
    "backend": "toy",
    "steps": 100,
    "noise_start": 0.8,
    "disentangle_frac": 0.75,
    "si": 1.5,
    "st": 7.5,
    "gamma": 3,
    "tau": None,
    "dump": None,
    "image": None,
    "out": None,
    "auto_sub": False,
}

_CONFIG_CASTS = {
    "seed": int,
    "steps": int,
    "gamma": int,
    "noise_start": float,
    "disentangle_frac": float,
    "si": float,
    "st": float,
    "tau": float,
    "auto_sub": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foi",
        description="Instruction-focused image editing with attention-derived masks.",
    )
    parser.add_argument("--version", action="version", version=f"foi {__version__}")
    sub = parser.add_subparsers(dest="command")

    p_edit = sub.add_parser("edit", help="run one edit (or a batch via --config)")
    p_edit.add_argument("--image", help="input image (PNG or JPEG)")
    p_edit.add_argument("--instruction", help="composite edit instruction")
    p_edit.add_argument(
        "--sub",
        action="append",
        metavar="TEXT::KEYWORD[::ALPHA]",
        help="sub-instruction spec, repeatable (double-colon separated, alpha defaults to 1.0)",
    )
    p_edit.add_argument(
        "--auto-sub",
        action="store_true",
        default=None,
        help="derive subs heuristically (split on '.'/';', keyword = last word)",
    )
    p_edit.add_argument("--out", help="output PNG path")
    p_edit.add_argument("--seed", type=int)
    p_edit.add_argument("--backend", choices=["toy", "real"])
    p_edit.add_argument("--steps", type=int, help="configured denoising steps (default 100)")
    p_edit.add_argument("--noise-start", type=float, dest="noise_start",
                        help="fraction of noise added to the input (default 0.8)")
    p_edit.add_argument("--disentangle-frac", type=float, dest="disentangle_frac",
                        help="fraction of effective steps using the masked combination (default 0.75)")
    p_edit.add_argument("--si", type=float, help="image guidance scale (default 1.5)")
    p_edit.add_argument("--st", type=float, help="text guidance scale (default 7.5)")
    p_edit.add_argument("--gamma", type=int, help="mask enhancement iterations (default 3)")
    p_edit.add_argument("--tau", type=float,
                        help="mask threshold; unset means sampled per keyword from [0.4, 0.7]")
    p_edit.add_argument("--dump", metavar="DIR", help="write masks and attention dumps here")
    p_edit.add_argument("--config", action="append", metavar="FILE",
                        help="flat key=value config; repeatable for batches (flags override)")
    p_edit.add_argument("--jobs", type=int, default=1, help="concurrent batch requests")
    p_edit.add_argument("--server", metavar="URL", help="send the edit to a running service")
    p_edit.set_defaults(func=_cmd_edit)

    p_eval = sub.add_parser("eval", help="score edited/original pairs, CSV to stdout")
    p_eval.add_argument("--pairs", required=True, metavar="MANIFEST",
                        help="JSON list of {source_image, edited_image, source_text, edited_text}")
    p_eval.add_argument("--provider", default="toy", help="embedding provider name")
    p_eval.add_argument("--out", help="write CSV here instead of stdout")
    p_eval.add_argument("--server", metavar="URL", help="evaluate via a running service")
    p_eval.set_defaults(func=_cmd_eval)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=_cmd_serve)

    return parser


def load_config(path: str) -> dict:
    """Parse a flat ``key = value`` config file mirroring the edit flags.

    ``#`` starts a comment; ``sub`` may repeat.  Keys use flag spelling
    with either '-' or '_'.
    """
    values: dict = {}
    subs: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"bad config line (expected key = value): {raw.rstrip()!r}")
            key = key.strip().replace("-", "_")
            value = value.strip()
            if key == "sub":
                subs.append(value)
            else:
                values[key] = value
    if subs:
        values["sub"] = subs
    return values


class _UsageError(Exception):
    pass


def _merge_edit(args: argparse.Namespace, config: dict) -> EditRequest:
    def pick(key):
        flag = getattr(args, key, None)
        if flag is not None:
            return flag
        if key in config:
            raw = config[key]
            cast = _CONFIG_CASTS.get(key)
            return cast(raw) if cast and isinstance(raw, str) else raw
        return _EDIT_DEFAULTS[key]

    image = pick("image")
    out = pick("out")
    if not image:
        raise _UsageError("--image is required")
    if not out:
        raise _UsageError("--out is required")

    instruction = pick("instruction") or ""
    raw_subs = args.sub if args.sub is not None else config.get("sub", [])
    try:
        subs = tuple(parse_sub_flag(s) for s in raw_subs)
    except ValueError as exc:
        raise _UsageError(str(exc)) from exc
    if not subs and pick("auto_sub"):
        subs = tuple(split_instruction(instruction))

    return EditRequest(
        instruction=instruction,
        subs=subs,
        image_path=image,
        out_path=out,
        dump_dir=pick("dump"),
        backend=pick("backend"),
        seed=pick("seed"),
        steps=pick("steps"),
        noise_start=pick("noise_start"),
        disentangle_frac=pick("disentangle_frac"),
        guidance=GuidanceParams(pick("si"), pick("st")),
        extraction=ExtractionParams(gamma=pick("gamma"), tau=pick("tau")),
    )


def _remote_edit(server: str, request: EditRequest) -> None:
    import httpx

    with open(request.image_path, "rb") as fh:
        image_b64 = base64.b64encode(fh.read()).decode("ascii")
    payload = {
        "image_b64": image_b64,
        "instruction": request.instruction,
        "subs": [{"text": t, "keyword": k, "alpha": a} for t, k, a in request.subs],
        "seed": request.seed,
        "backend": request.backend,
        "steps": request.steps,
        "noise_start": request.noise_start,
        "disentangle_frac": request.disentangle_frac,
        "image_guidance": request.guidance.image_scale,
        "text_guidance": request.guidance.text_scale,
        "gamma": request.extraction.gamma,
        "tau": request.extraction.tau,
        "include_masks": False,
    }
    response = httpx.post(server.rstrip("/") + "/v1/edit", json=payload, timeout=600.0)
    if response.status_code != 200:
        raise FoiError(f"server returned {response.status_code}: {response.text}")
    with open(request.out_path, "wb") as fh:
        fh.write(base64.b64decode(response.json()["image_b64"]))


def _cmd_edit(args: argparse.Namespace) -> int:
    configs = [load_config(p) for p in args.config] if args.config else [{}]
    try:
        requests = [_merge_edit(args, cfg) for cfg in configs]
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print("run 'foi edit --help' for flags", file=sys.stderr)
        return 2

    if args.server:
        if any(r.dump_dir for r in requests):
            print("usage error: --dump is not supported with --server", file=sys.stderr)
            return 2
        for request in requests:
            _remote_edit(args.server, request)
            print(request.out_path)
        return 0

    if len(requests) == 1 or args.jobs <= 1:
        for request in requests:
            result = edit(request)
            print(f"{request.out_path} ({result.duration_s:.2f}s)")
        return 0

    failures = 0
    with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
        futures = {pool.submit(edit, r): r for r in requests}
        for future in concurrent.futures.as_completed(futures):
            request = futures[future]
            try:
                result = future.result()
            except Exception as exc:  # keep the batch going
                failures += 1
                print(f"error: {request.image_path}: {exc}", file=sys.stderr)
            else:
                print(f"{request.out_path} ({result.duration_s:.2f}s)")
    return 1 if failures else 0


def _cmd_eval(args: argparse.Namespace) -> int:
    if args.server:
        import httpx

        rows = []
        pairs = load_pairs_manifest(args.pairs)
        payload_pairs = []
        for pair in pairs:
            with open(pair["source_image"], "rb") as fh:
                src = base64.b64encode(fh.read()).decode("ascii")
            with open(pair["edited_image"], "rb") as fh:
                edited = base64.b64encode(fh.read()).decode("ascii")
            payload_pairs.append(
                {
                    "source_image_b64": src,
                    "edited_image_b64": edited,
                    "source_text": pair["source_text"],
                    "edited_text": pair["edited_text"],
                }
            )
        response = httpx.post(
            args.server.rstrip("/") + "/v1/eval",
            json={"provider": args.provider, "pairs": payload_pairs},
            timeout=600.0,
        )
        if response.status_code != 200:
            raise FoiError(f"server returned {response.status_code}: {response.text}")
        for pair, row in zip(pairs, response.json()["rows"]):
            rows.append(
                {
                    "source_image": pair["source_image"],
                    "edited_image": pair["edited_image"],
                    "image_similarity": row["image_similarity"],
                    "directional_similarity": row["directional_similarity"],
                }
            )
    else:
        rows = evaluate_manifest(args.pairs, get_provider(args.provider))

    text = rows_to_csv(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code is None else int(exc.code)
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (FoiError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(cli_main(sys.argv[1:]))
