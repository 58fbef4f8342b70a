"""Serve a model registry described by a JSON config.

  umf-modelserver serve <models.json> [--host H] [--port P] [--max-concurrency N]

Config: {"models": [{"id": str, "pieces": {id: text}, "mask_id": int,
"eos_id": int, "pad_id": int, "template": [int] (optional),
"margin": float (optional)}]}
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .app import create_app
from .codec import PieceCodec
from .registry import ModelRegistry, TableModel


def load_registry(path: str | Path) -> ModelRegistry:
    doc = json.loads(Path(path).read_text("utf-8"))
    registry = ModelRegistry()
    for entry in doc["models"]:
        codec = PieceCodec({int(k): v for k, v in entry["pieces"].items()})
        registry.register(
            TableModel(
                model_id=entry["id"],
                codec=codec,
                mask_id=entry["mask_id"],
                eos_id=entry["eos_id"],
                pad_id=entry["pad_id"],
                template=tuple(entry["template"]) if entry.get("template") else None,
                margin=float(entry.get("margin", 8.0)),
            )
        )
    return registry


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="umf-modelserver", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    serve_p = sub.add_parser("serve", help="serve the wire protocol")
    serve_p.add_argument("config")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8000)
    serve_p.add_argument("--max-concurrency", type=int, default=8)
    args = parser.parse_args(argv)

    import uvicorn

    app = create_app(load_registry(args.config), max_concurrency=args.max_concurrency)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
