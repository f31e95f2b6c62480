"""Transformer sentence autoencoder with a multi-head sentence bottleneck."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .tokenizer import BOS_ID, EOS_ID, PAD_ID, SNT_ID


class InputError(ValueError):
    pass


@dataclass
class ModelConfig:
    dim: int = 320
    ff_dim: int = 512
    layers: int = 3
    attn_heads: int = 4
    sentence_heads: int = 8
    vocab_size: int = 32000
    codebook_size: int = 1024
    soft_samples: int = 30
    lr: float = 1e-3
    lr_decay: float = 0.9
    warmup_epochs: int = 4
    epochs: int = 20
    use_positional_encodings: bool = False
    dropout: float = 0.1
    clip_norm: float = 1.0
    commitment_weight: float = 1.0
    batch_size: int = 64
    ema_decay: float = 0.99
    ema_epsilon: float = 1e-5
    ema_assignment: str = "hard"
    activation: str = "relu"
    max_sentence_len: int = 64

    def validate(self) -> "ModelConfig":
        if self.dim % self.sentence_heads:
            raise ValueError("dim must be divisible by sentence_heads")
        if self.dim % self.attn_heads:
            raise ValueError("dim must be divisible by attn_heads")
        if self.soft_samples < 1:
            raise ValueError("soft_samples must be >= 1")
        if self.codebook_size < self.sentence_heads:
            raise ValueError("codebook_size must be >= sentence_heads")
        if self.ema_assignment not in ("hard", "soft"):
            raise ValueError("ema_assignment must be 'hard' or 'soft'")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs]")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()


def sinusoidal_positions(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float32)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe


def pad_batch(seqs: Sequence[Sequence[int]], prefix: int | None = None,
              suffix: int | None = None) -> torch.Tensor:
    """Right-pad id sequences into a (B, T) long tensor, optionally framing them."""
    framed = [([prefix] if prefix is not None else []) + list(s) +
              ([suffix] if suffix is not None else []) for s in seqs]
    width = max(len(s) for s in framed)
    out = torch.full((len(framed), width), PAD_ID, dtype=torch.long)
    for i, s in enumerate(framed):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out


class QuantizedTransformer(nn.Module):
    """Encoder, head projection and decoder.

    The codebook is not a parameter of this module; it is trained by EMA
    and passed in from outside (see :mod:`qtsum.quantizer`).
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        d, h = config.dim, config.sentence_heads
        self.embed = nn.Embedding(config.vocab_size, d, padding_idx=PAD_ID)
        self.register_buffer(
            "positions", sinusoidal_positions(config.max_sentence_len + 2, d), persistent=False
        )
        enc_layer = nn.TransformerEncoderLayer(
            d, config.attn_heads, config.ff_dim, config.dropout,
            activation=config.activation, batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(enc_layer, config.layers, enable_nested_tensor=False)
        self.head_proj = nn.Linear(d // h, d)
        self.head_norm = nn.LayerNorm(d)
        dec_layer = nn.TransformerDecoderLayer(
            d, config.attn_heads, config.ff_dim, config.dropout,
            activation=config.activation, batch_first=True,
        )
        self.decoder = nn.TransformerDecoder(dec_layer, config.layers)
        self.output = nn.Linear(d, config.vocab_size)

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.embed(ids)
        if self.config.use_positional_encodings:
            x = x + self.positions[: ids.shape[1]].to(x.dtype)
        return x

    def _check_ids(self, seqs: Sequence[Sequence[int]]) -> None:
        for s in seqs:
            if len(s) == 0:
                raise InputError("empty token sequence")
            if len(s) > self.config.max_sentence_len:
                raise InputError(
                    f"sequence of {len(s)} tokens exceeds max_sentence_len={self.config.max_sentence_len}"
                )
            if max(s) >= self.config.vocab_size or min(s) < 0:
                raise InputError(f"token id out of range for vocab_size={self.config.vocab_size}")

    def encode_heads(self, seqs: Sequence[Sequence[int]]) -> torch.Tensor:
        """(B, H, D) head vectors; [SNT] is prepended here."""
        self._check_ids(seqs)
        ids = pad_batch(seqs, prefix=SNT_ID).to(self.embed.weight.device)
        hidden = self.encoder(self._embed(ids), src_key_padding_mask=ids.eq(PAD_ID))
        snt = hidden[:, 0]
        h = self.config.sentence_heads
        sub = snt.reshape(snt.shape[0], h, self.config.dim // h)
        return self.head_norm(self.head_proj(sub))

    def decode_logits(self, memory: torch.Tensor, seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
        """Teacher-forced logits over ``[BOS] + seq`` and the ``seq + [EOS]`` targets."""
        inp = pad_batch(seqs, prefix=BOS_ID).to(memory.device)
        tgt = pad_batch(seqs, suffix=EOS_ID).to(memory.device)
        t = inp.shape[1]
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool, device=memory.device), 1)
        hidden = self.decoder(
            self._embed(inp), memory, tgt_mask=causal,
            tgt_key_padding_mask=inp.eq(PAD_ID), tgt_is_causal=True,
        )
        return self.output(hidden), tgt

    def reconstruct_loss(self, memory: torch.Tensor, seqs: Sequence[Sequence[int]]) -> torch.Tensor:
        """Mean token cross entropy of reconstructing ``seqs`` from ``memory`` (B, H, D)."""
        self._check_ids(seqs)
        logits, tgt = self.decode_logits(memory, seqs)
        return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt.reshape(-1),
                               ignore_index=PAD_ID)

    @torch.no_grad()
    def encode(self, seqs: Sequence[Sequence[int]], batch_size: int = 256) -> np.ndarray:
        """Inference-time (N, H, D) encodings as a numpy array."""
        was_training = self.training
        self.eval()
        try:
            order = sorted(range(len(seqs)), key=lambda i: len(seqs[i]))
            out = np.empty((len(seqs), self.config.sentence_heads, self.config.dim),
                           dtype=np.float32 if self.embed.weight.dtype == torch.float32 else np.float64)
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                out[idx] = self.encode_heads([seqs[i] for i in idx]).cpu().numpy()
            return out
        finally:
            self.train(was_training)


def straight_through(x: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Forward value ``q``; gradient flows to ``x`` as if quantization were identity."""
    return x + (q - x).detach()


def commitment_loss(x: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Batch mean of sum_h ||x_h - sg(q_h)||_2."""
    return (x - q.detach()).norm(dim=-1).sum(-1).mean()


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
