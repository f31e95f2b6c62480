"""Single-file checkpoints (format tag ``qt-ckpt-v1``).

Layout::

    b"QTCKPT\\n" | uint64 LE header length | header JSON | payload

The header holds the model config, the tokenizer and its hash, codebook
hyperparameters, training step and a tensor index (name, shape, byte
offset). The payload is every tensor as row-major little-endian float32,
and its SHA-256 is stored in the header so corruption is detected on load.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, QuantizedTransformer
from .quantizer import Codebook
from .tokenizer import Tokenizer
from .training import EpochLog, TrainedModel

MAGIC = b"QTCKPT\n"
FORMAT = "qt-ckpt-v1"


class CheckpointError(ValueError):
    pass


def _tensors(trained: TrainedModel) -> list[tuple[str, np.ndarray]]:
    out = [(f"model.{k}", v.detach().cpu().numpy()) for k, v in trained.model.state_dict().items()]
    cb = trained.codebook
    if cb is not None:
        out += [("codebook.embeddings", cb.embeddings), ("codebook.ema_counts", cb.ema_counts),
                ("codebook.ema_sums", cb.ema_sums)]
    return out


def checkpoint_bytes(trained: TrainedModel) -> bytes:
    payload = io.BytesIO()
    index = []
    for name, arr in _tensors(trained):
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": payload.tell(), "nbytes": len(data)})
        payload.write(data)
    body = payload.getvalue()
    tok = trained.tokenizer
    cb = trained.codebook
    header = {
        "format": FORMAT,
        "config": trained.config.to_dict(),
        "tokenizer": tok.to_dict() if tok is not None else None,
        "tokenizer_hash": tok.digest() if tok is not None else None,
        "codebook": None if cb is None else {"decay": cb.decay, "epsilon": cb.epsilon},
        "step": trained.step,
        "history": [h.as_dict() for h in trained.history],
        "tensors": index,
        "payload_sha256": hashlib.sha256(body).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + body


def save_checkpoint(trained: TrainedModel, path: str | Path) -> str:
    """Write the checkpoint; returns its SHA-256 digest."""
    data = checkpoint_bytes(trained)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_header(path: str | Path) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not raw.startswith(MAGIC) or len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"{path} is not a QT checkpoint")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupted header") from None
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported format {header.get('format')!r}, expected {FORMAT}")
    body = raw[start + hlen:]
    if hashlib.sha256(body).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    return header, body


def load_checkpoint(path: str | Path) -> TrainedModel:
    header, body = read_header(path)
    arrays = {}
    for t in header["tensors"]:
        chunk = body[t["offset"]:t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(t["shape"]).copy()
    try:
        cfg = ModelConfig.from_dict(header["config"])
        net = QuantizedTransformer(cfg)
        state = {k[len("model."):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("model.")}
        net.load_state_dict(state)
    except (KeyError, ValueError, RuntimeError) as exc:
        raise CheckpointError(f"{path}: inconsistent contents ({exc})") from None
    net.eval()
    cb = None
    if header["codebook"] is not None:
        cb = Codebook(arrays["codebook.embeddings"], arrays["codebook.ema_counts"],
                      arrays["codebook.ema_sums"], header["codebook"]["decay"], header["codebook"]["epsilon"])
    tok = Tokenizer.from_dict(header["tokenizer"]) if header["tokenizer"] else None
    history = [EpochLog(**h) for h in header.get("history", [])]
    return TrainedModel(net, cb, tok, header["step"], history)
