"""Service entry point."""

from __future__ import annotations

import argparse
import sys

import uvicorn

from .app import build_models, create_app
from .config import SidecarConfig
from .models import ModelLoadError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hcog-sidecar", description=__doc__)
    parser.add_argument("--config", help="SidecarConfig JSON; omit for stub-model mode")
    parser.add_argument("--host", default=None)
    parser.add_argument("--port", type=int, default=None)
    args = parser.parse_args(argv)

    config = SidecarConfig.from_file(args.config) if args.config else SidecarConfig.stub()
    if args.host is not None:
        config.host = args.host
    if args.port is not None:
        config.port = args.port

    # load before binding: a service that cannot serve must not accept
    # connections
    models = build_models(config)
    try:
        for model in (*models[0].values(), models[1]):
            model.load()
    except ModelLoadError as exc:
        print(f"refusing to start: {exc}", file=sys.stderr)
        return 1

    app = create_app(config, models)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
