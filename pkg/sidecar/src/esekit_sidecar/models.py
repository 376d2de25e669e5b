"""Tiny transformer models behind the provider protocol.

One bidirectional encoder produces text embeddings, a masked-entity
distribution, and projected contrastive features; one causal generator
produces next-token logprobs, continuation scores, and greedy
completions. Both are deliberately small: the serving and training
contracts are about correctness, not capacity.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, DataError
from .vocab import BOS, EOS, PAD, UNK, Vocab, tokenize


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 48
    layers: int = 2
    heads: int = 4
    ffn: int = 96
    proj_dim: int = 24
    max_len: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.layers < 1 or self.ffn < 1 or self.max_len < 2:
            raise ConfigError("model dimensions must be positive")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.proj_dim < 1:
            raise ConfigError("projection dim must be positive")


def _encoder_stack(config: ModelConfig) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=config.dim,
        nhead=config.heads,
        dim_feedforward=config.ffn,
        dropout=0.0,
        batch_first=True,
        norm_first=True,
    )
    return nn.TransformerEncoder(layer, num_layers=config.layers, enable_nested_tensor=False)


def _pad_batch(rows: list[list[int]], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (ids [B, T], pad_mask [B, T]) with True marking padding."""
    width = max((len(r) for r in rows), default=1) or 1
    ids = torch.full((len(rows), width), pad_id, dtype=torch.long)
    mask = torch.ones((len(rows), width), dtype=torch.bool)
    for i, row in enumerate(rows):
        if row:
            ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
            mask[i, : len(row)] = False
    return ids, mask


class SidecarEncoder(nn.Module):
    """Bidirectional encoder with mean-pool embedding, mask-position
    entity head, and a projection head for contrastive features."""

    def __init__(self, vocab: Vocab, entity_ids: list[str], config: ModelConfig):
        super().__init__()
        if not entity_ids:
            raise ConfigError("encoder needs at least one candidate entity")
        torch.manual_seed(config.seed)
        self.vocab = vocab
        self.entity_ids = tuple(entity_ids)
        self.config = config
        self.tok = nn.Embedding(len(vocab), config.dim, padding_idx=vocab.id(PAD))
        self.pos = nn.Embedding(config.max_len, config.dim)
        self.encoder = _encoder_stack(config)
        self.entity_head = nn.Sequential(
            nn.Linear(config.dim, config.dim),
            nn.GELU(),
            nn.Linear(config.dim, len(entity_ids)),
        )
        self.projection = nn.Linear(config.dim, config.proj_dim)

    @property
    def dim(self) -> int:
        return self.config.dim

    def _rows(self, texts: list[str]) -> list[list[int]]:
        limit = self.config.max_len
        unk = self.vocab.id(UNK)
        # a fully empty row would leave attention with nothing to attend to
        return [self.vocab.encode(text)[:limit] or [unk] for text in texts]

    def _hidden(self, rows: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
        device = self.tok.weight.device
        ids, pad_mask = _pad_batch(rows, self.vocab.id(PAD))
        ids, pad_mask = ids.to(device), pad_mask.to(device)
        positions = torch.arange(ids.shape[1], device=device).unsqueeze(0)
        states = self.tok(ids) + self.pos(positions)
        hidden = self.encoder(states, src_key_padding_mask=pad_mask)
        return hidden, pad_mask

    def embed_texts(self, texts: list[str]) -> torch.Tensor:
        """Mean of non-padding hidden states per text, [B, dim]."""
        rows = self._rows(texts)
        hidden, pad_mask = self._hidden(rows)
        keep = (~pad_mask).unsqueeze(-1).float()
        counts = keep.sum(dim=1).clamp(min=1.0)
        return (hidden * keep).sum(dim=1) / counts

    def entity_probs(self, texts: list[str]) -> torch.Tensor:
        """Masked-entity distribution read at each text's mask position."""
        mask_id = self.vocab.id(self.vocab.mask_token)
        rows = self._rows(texts)
        positions = []
        for text, row in zip(texts, rows):
            if mask_id not in row:
                raise DataError(f"no {self.vocab.mask_token} token in sample {text!r}")
            positions.append(row.index(mask_id))
        hidden, _ = self._hidden(rows)
        readout = hidden[torch.arange(len(rows)), torch.tensor(positions)]
        return F.softmax(self.entity_head(readout), dim=-1)

    def project_unit(self, texts: list[str]) -> torch.Tensor:
        """Projected features on the unit hypersphere, [B, proj_dim]."""
        return F.normalize(self.projection(self.embed_texts(texts)), dim=-1)


class SidecarGenerator(nn.Module):
    """Causal transformer for next-token logprobs, continuation scoring,
    and greedy completion over the whitespace vocabulary."""

    def __init__(self, vocab: Vocab, config: ModelConfig):
        super().__init__()
        torch.manual_seed(config.seed)
        self.vocab = vocab
        self.config = config
        self.tok = nn.Embedding(len(vocab), config.dim, padding_idx=vocab.id(PAD))
        self.pos = nn.Embedding(config.max_len, config.dim)
        self.encoder = _encoder_stack(config)
        self.lm_head = nn.Linear(config.dim, len(vocab))

    def _clip(self, ids: list[int]) -> list[int]:
        limit = self.config.max_len
        return ids[-limit:] if len(ids) > limit else ids

    def logits(self, rows: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
        """Causal logits [B, T, V] plus the padding mask."""
        device = self.tok.weight.device
        ids, pad_mask = _pad_batch([self._clip(r) for r in rows], self.vocab.id(PAD))
        ids, pad_mask = ids.to(device), pad_mask.to(device)
        width = ids.shape[1]
        positions = torch.arange(width, device=device).unsqueeze(0)
        states = self.tok(ids) + self.pos(positions)
        causal = torch.triu(torch.ones(width, width, dtype=torch.bool, device=device), diagonal=1)
        hidden = self.encoder(states, mask=causal, src_key_padding_mask=pad_mask)
        return self.lm_head(hidden), pad_mask

    def _last_logprobs(self, ids: list[int]) -> torch.Tensor:
        clipped = self._clip(ids)
        logits, _ = self.logits([clipped])
        return F.log_softmax(logits[0, len(clipped) - 1], dim=-1)

    def next_token_logprobs(self, prefix_tokens: list[str], allowed: list[str]) -> dict[str, float]:
        """Logprobs renormalized over the allowed token set."""
        if not allowed:
            return {}
        ids = [self.vocab.id(BOS)] + self.vocab.ids(prefix_tokens)
        with torch.no_grad():
            lp = self._last_logprobs(ids).double()
        raw = {tok: lp[self.vocab.id(tok)] for tok in allowed}
        total = torch.logsumexp(torch.stack(list(raw.values())), dim=0)
        return {tok: float(v - total) for tok, v in raw.items()}

    def score_continuation(self, prefix: str, continuation: str) -> tuple[float, int]:
        """Sum of per-token logprobs of the continuation after the prefix."""
        cont = tokenize(continuation)
        ids = [self.vocab.id(BOS)] + self.vocab.encode(prefix)
        total = 0.0
        with torch.no_grad():
            for tok in cont:
                lp = self._last_logprobs(ids)
                total += float(lp[self.vocab.id(tok)])
                ids.append(self.vocab.id(tok))
        return total, len(cont)

    def complete(self, prompt: str, max_tokens: int) -> str:
        """Greedy decoding over content tokens; stops at the end marker."""
        banned = [self.vocab.id(t) for t in (PAD, UNK, BOS, self.vocab.mask_token)]
        eos = self.vocab.id(EOS)
        ids = [self.vocab.id(BOS)] + self.vocab.encode(prompt)
        out: list[str] = []
        with torch.no_grad():
            for _ in range(max(max_tokens, 0)):
                lp = self._last_logprobs(ids).clone()
                lp[banned] = float("-inf")
                best = int(torch.argmax(lp))
                if best == eos:
                    break
                out.append(self.vocab.tokens[best])
                ids.append(best)
        return " ".join(out)


# --- checkpoints ------------------------------------------------------------------


def save_checkpoint(path: Path | str, model: nn.Module, meta: dict | None = None) -> Path:
    if isinstance(model, SidecarEncoder):
        kind, entities = "encoder", list(model.entity_ids)
    elif isinstance(model, SidecarGenerator):
        kind, entities = "generator", None
    else:
        raise ConfigError(f"cannot checkpoint a {type(model).__name__}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "kind": kind,
            "config": asdict(model.config),
            "vocab": list(model.vocab.tokens),
            "mask_token": model.vocab.mask_token,
            "entities": entities,
            "state": model.state_dict(),
            "meta": dict(meta or {}),
        },
        path,
    )
    return path


def _load_payload(path: Path | str, kind: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("kind") != kind:
        raise ConfigError(f"{path} is not a {kind} checkpoint")
    return payload


def load_encoder(path: Path | str) -> tuple[SidecarEncoder, dict]:
    payload = _load_payload(path, "encoder")
    vocab = Vocab(tokens=tuple(payload["vocab"]), mask_token=payload["mask_token"])
    model = SidecarEncoder(vocab, payload["entities"], ModelConfig(**payload["config"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload["meta"]


def load_generator(path: Path | str) -> tuple[SidecarGenerator, dict]:
    payload = _load_payload(path, "generator")
    vocab = Vocab(tokens=tuple(payload["vocab"]), mask_token=payload["mask_token"])
    model = SidecarGenerator(vocab, ModelConfig(**payload["config"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload["meta"]
