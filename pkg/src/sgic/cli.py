"""Command-line front end.

Exit codes: 0 success, 1 usage (bad flags or config), 2 data error
(anything raised as a pipeline error), 3 internal. Errors go to stderr as
single-line JSON records; command results go to stdout the same way.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import bitstream, raster
from .errors import ConfigInvalid, SgicError
from .harness import (
    RunConfig,
    build_pipeline,
    load_config,
    run_ablate,
    run_rd,
    run_sweep,
    run_timing,
    run_training,
)

_COMMANDS = ("encode", "decode", "train", "sweep", "rd", "timing", "ablate")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract wants 1
    def error(self, message: str):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _build_parser() -> _Parser:
    p = _Parser(prog="sgic", description="semantics-guided generative image codec")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="override config seed")
        sp.add_argument("--mode", choices=("full", "no_clipseg", "no_cad"), help="override config mode")
        sp.add_argument("--workers", type=int, help="override config worker count")

    sp = sub.add_parser("encode", help="compress one image to a .sgic file")
    sp.add_argument("input", help="PNG or binary PPM image")
    sp.add_argument("output", help="output .sgic path")
    common(sp)

    sp = sub.add_parser("decode", help="decompress a .sgic file to an image")
    sp.add_argument("input", help=".sgic file")
    sp.add_argument("output", help="output PNG or PPM path")
    common(sp)

    for name, blurb in (
        ("train", "oracle sweep + controller MLP training"),
        ("sweep", "oracle label sweep only"),
        ("rd", "rate-distortion table over the quality ladder"),
        ("timing", "encode/decode wall-clock study"),
        ("ablate", "three-variant comparison at the configured quality"),
    ):
        sp = sub.add_parser(name, help=blurb)
        common(sp)
    return p


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.mode is not None:
        updates["mode"] = args.mode
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigInvalid(f"workers must be >= 1, got {args.workers}")
        updates["workers"] = args.workers
    return replace(cfg, **updates) if updates else cfg


def _emit(obj: dict) -> None:
    print(json.dumps(obj))


def _cmd_encode(args, cfg: RunConfig) -> None:
    pipe = build_pipeline(cfg, need_models=False)
    img = raster.load_image(args.input)
    image_id = Path(args.input).stem
    t0 = time.perf_counter()
    c = pipe.encode(image_id, img)
    seconds = time.perf_counter() - t0
    packed = bitstream.pack(
        c.width, c.height, c.semantics_payload, c.latent_payload, grid_map=c.grid_map_payload
    )
    Path(args.output).write_bytes(packed)
    _emit(
        {
            "output": args.output,
            "bytes": len(packed),
            "bpp": bitstream.bpp(c),
            "grid_map": c.grid_map_payload is not None,
            "seconds": seconds,
        }
    )


def _cmd_decode(args, cfg: RunConfig) -> None:
    pipe = build_pipeline(cfg, need_models=cfg.mode != "no_cad")
    data = Path(args.input).read_bytes()
    c = bitstream.unpack(data)
    image_id = Path(args.input).stem
    img, report = pipe.decode(c, image_id)
    raster.save_image(img, args.output)
    _emit(
        {
            "output": args.output,
            "plan": {"steps": report.plan.steps, "cfg": report.plan.cfg},
            "plan_source": report.plan_source,
            "mask_source": report.mask_source,
            "timings": report.timings,
        }
    )


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return 1
    try:
        cfg = _resolve_config(args)
        if args.command == "encode":
            _cmd_encode(args, cfg)
        elif args.command == "decode":
            _cmd_decode(args, cfg)
        elif args.command == "train":
            _emit(run_training(cfg))
        elif args.command == "sweep":
            _emit(run_sweep(cfg))
        elif args.command == "rd":
            _emit({"csv": str(run_rd(cfg))})
        elif args.command == "timing":
            _emit(run_timing(cfg))
        elif args.command == "ablate":
            _emit({"csv": str(run_ablate(cfg))})
        else:  # unreachable once argparse owns the choices
            raise ConfigInvalid(f"unknown command {args.command!r}")
    except ConfigInvalid as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    except SgicError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit 3
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
