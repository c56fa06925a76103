"""Export the wire-protocol JSON Schemas shared with adapter implementations."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from .protocol import (
    ChatRequest,
    ChatResponse,
    DetectRequest,
    DetectResponse,
    EmbedRequest,
    EmbedResponse,
)

WIRE_MODELS = {
    "chat_request": ChatRequest,
    "chat_response": ChatResponse,
    "embed_request": EmbedRequest,
    "embed_response": EmbedResponse,
    "detect_request": DetectRequest,
    "detect_response": DetectResponse,
}


def schema_documents() -> dict[str, dict]:
    return {name: model.model_json_schema() for name, model in WIRE_MODELS.items()}


def export_schemas(out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, doc in schema_documents().items():
        path = out / f"{name}.schema.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")
        written.append(path)
    return written


def main() -> None:
    parser = argparse.ArgumentParser(description="Write wire-protocol JSON Schemas")
    parser.add_argument("--out", default="schemas", help="output directory")
    args = parser.parse_args()
    for path in export_schemas(args.out):
        print(path)


if __name__ == "__main__":
    main()
