"""Command-line launcher: `model-gateway [--stub] [--host H] [--port P]`."""

from __future__ import annotations

import argparse

import uvicorn

from .app import API_KEY_ENV, Settings, create_app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="model-gateway",
        description="HTTP sidecar for embedding, segmentation, and captioning models",
        epilog=f"The upstream captioner API key is read from ${API_KEY_ENV}.",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument("--stub", action="store_true", help="serve deterministic fixture models")
    args = parser.parse_args(argv)

    app = create_app(Settings.from_env(stub=args.stub))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
