"""Run configuration with reproducible hashing.

Precedence is flags > config file > defaults. The config hash covers
every field that influences artifact content (not where it is written or
how work is scheduled), so two runs with equal hashes produce byte
identical primary outputs.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import UsageError

# fields that never influence output bytes
NON_SEMANTIC_FIELDS = ("server", "jobs", "out", "out_dir", "cot_log", "table_out")


@dataclass
class RunConfig:
    # corpus and artifact paths
    entities: str | None = None
    sentences: str | None = None
    classes: str | None = None
    dataset: str | None = None
    store: str | None = None
    results: str | None = None
    out: str | None = None
    out_dir: str | None = None
    cot_log: str | None = None
    table_out: str | None = None

    # pipeline shape
    framework: str = "ret"
    k: int = 100
    segment_length: int = 10
    rerank: bool = True
    rounds: int | None = None
    per_round_generate: int = 20
    select_count: int = 5
    beam_width: int | None = None
    t: int = 10
    pool_size: int = 10
    samples_per_entity: int = 2
    cot_mode: str | None = None

    # class generation
    fine_class: str | None = None
    pos_attr_count: int = 1
    neg_attr_count: int = 1
    n_thred: int = 6

    # embeddings
    cap: int = 64
    dim: int = 64
    embedder: dict = field(default_factory=dict)

    # evaluation
    ks: tuple[int, ...] = (10, 20, 50, 100)
    normalizer: str = "min_k_g"
    query_index: int = 0

    # execution
    provider: str = "stub"
    endpoint: str | None = None
    timeout: float = 30.0
    retry: int = 2
    tokenizer: str = "whitespace"
    seed: int = 0
    jobs: int = 1
    server: str | None = None

    def provider_config(self) -> dict:
        if self.provider == "stub":
            return {"kind": "stub"}
        if self.provider == "remote":
            if not self.endpoint:
                raise UsageError("provider 'remote' needs --endpoint")
            return {
                "kind": "remote",
                "endpoint": {"base_url": self.endpoint, "timeout": self.timeout, "retry": self.retry},
            }
        raise UsageError(f"unknown provider {self.provider!r}; pick 'stub' or 'remote'")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def load_config_file(path: Path | str) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot parse config file {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    unknown = set(data) - set(_FIELDS)
    if unknown:
        raise UsageError(f"unknown config keys in {path}: {sorted(unknown)}")
    return data


def resolve_config(file_path: Path | str | None = None, **overrides) -> RunConfig:
    """Merge defaults, the optional config file, and explicit flag values
    (``None`` overrides are treated as "not given")."""
    values: dict = {}
    if file_path:
        values.update(load_config_file(file_path))
    for key, value in overrides.items():
        if key not in _FIELDS:
            raise UsageError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = value
    if "ks" in values:
        values["ks"] = tuple(int(k) for k in values["ks"])
    return RunConfig(**values)


def config_hash(config: RunConfig) -> str:
    payload = dataclasses.asdict(config)
    for name in NON_SEMANTIC_FIELDS:
        payload.pop(name, None)
    payload["ks"] = list(payload["ks"])
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
