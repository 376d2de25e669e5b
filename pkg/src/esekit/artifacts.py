"""Artifact files: header-prefixed JSONL and JSON documents.

Every file the command line writes starts with a header record carrying
the command name, config hash, seed, package version, and format tag.
Headers never contain timestamps, so reruns are byte identical.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from . import __version__
from .errors import UsageError


def make_header(command: str, config_hash: str, seed: int, fmt: str) -> dict:
    return {
        "header": {
            "command": command,
            "config_hash": config_hash,
            "seed": seed,
            "app_version": __version__,
            "format": fmt,
        }
    }


def dump_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def write_jsonl(path: Path | str, records: Iterable[dict], header: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        if header is not None:
            handle.write(dump_line(header) + "\n")
        for record in records:
            handle.write(dump_line(record) + "\n")
    return path


def write_json(path: Path | str, document: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, sort_keys=True, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return path


def read_jsonl_records(path: Path | str, skip_header: bool = True) -> list[dict]:
    """Parse a JSONL file into raw dicts without schema validation."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"file not found: {path}")
    records: list[dict] = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}:{number}: invalid JSON: {exc}") from None
        if not isinstance(record, dict):
            raise UsageError(f"{path}:{number}: expected an object")
        if skip_header and "header" in record:
            continue
        records.append(record)
    return records
