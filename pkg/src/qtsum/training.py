"""Training loop and gradient verification for the quantized autoencoder.

The objective per batch is

    reconstruction cross entropy + weight * mean_batch sum_h ||x_h - sg(q_h)||_2

where ``q_h`` averages ``soft_samples`` codes drawn from softmax(-d^2). The
decoder sees ``q_h`` through a straight-through estimator and the codebook
moves only by EMA. During warm-up the decoder attends over the raw head
vectors and neither the commitment term nor the EMA runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .model import ModelConfig, QuantizedTransformer, commitment_loss, straight_through
from .quantizer import (
    Codebook,
    ema_update,
    hard_assign,
    make_rng,
    soft_assign_batch,
    squared_distances,
)

logger = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


@dataclass
class EpochLog:
    epoch: int
    loss: float
    recon: float
    commitment: float
    quantized: bool
    codebook_usage: float
    lr: float
    reseeded: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainedModel:
    """A trained network together with its EMA codebook."""

    model: QuantizedTransformer
    codebook: Codebook | None
    tokenizer: object = None
    step: int = 0
    history: list[EpochLog] = field(default_factory=list)

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    def encode(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        return self.model.encode(seqs)

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        """Encode raw sentences; sentences with no tokens get UNK."""
        seqs = [self.tokenizer.encode(t) or [self.tokenizer.unk_id] for t in texts]
        return self.encode(seqs)


def set_deterministic(seed: int, threads: int = 1) -> None:
    torch.manual_seed(seed)
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def make_batches(lengths: Sequence[int], batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Length-bucketed batches in a shuffled order."""
    order = np.argsort(np.asarray(lengths), kind="stable")
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


def init_codebook(heads: np.ndarray, size: int, rng: np.random.Generator,
                  decay: float, epsilon: float, noise: float = 0.01) -> Codebook:
    """Codes drawn from a batch of head vectors plus small noise."""
    flat = heads.reshape(-1, heads.shape[-1])
    idx = rng.choice(flat.shape[0], size=size, replace=flat.shape[0] < size)
    e = flat[idx] + noise * rng.standard_normal((size, flat.shape[1])).astype(flat.dtype)
    return Codebook.from_embeddings(e.astype(flat.dtype), decay=decay, epsilon=epsilon)


def quantize_batch(x: torch.Tensor, cb: Codebook, m: int,
                   rng: np.random.Generator) -> tuple[torch.Tensor, np.ndarray]:
    """Soft-EM quantization of (B, H, D) heads; returns (q, sampled codes)."""
    xn = x.detach().cpu().numpy()
    codes, q = soft_assign_batch(cb, xn.astype(cb.embeddings.dtype), m, rng)
    return torch.from_numpy(np.ascontiguousarray(q)).to(dtype=x.dtype, device=x.device), codes


def batch_loss(net: QuantizedTransformer, seqs, cb: Codebook | None, m: int,
               rng: np.random.Generator, commit_weight: float = 1.0):
    """Forward pass; returns (loss, recon, commitment, heads, sampled codes)."""
    x = net.encode_heads(seqs)
    if cb is None:
        recon = net.reconstruct_loss(x, seqs)
        zero = recon.new_zeros(())
        return recon, recon, zero, x, None
    q, codes = quantize_batch(x, cb, m, rng)
    recon = net.reconstruct_loss(straight_through(x, q), seqs)
    commit = commitment_loss(x, q)
    return recon + commit_weight * commit, recon, commit, x, codes


def train(model: QuantizedTransformer | TrainedModel, sequences: Sequence[Sequence[int]],
          config: ModelConfig | None = None, seed: int = 0,
          callback=None) -> TrainedModel:
    """Train on token-id sequences; returns a :class:`TrainedModel`.

    ``sequences`` may also be a tokenized :class:`~qtsum.corpus.ReviewCorpus`.
    """
    trained = model if isinstance(model, TrainedModel) else TrainedModel(model, None)
    net = trained.model
    cfg = (config or net.config).validate()
    if hasattr(sequences, "iter_sentences"):
        sequences = [list(s.token_ids) for s in sequences.iter_sentences() if s.token_ids]
    seqs = [list(s) for s in sequences]
    if not seqs:
        raise ValueError("no training sentences")

    torch.manual_seed(seed)
    rng = make_rng(seed, 1)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.lr_decay)
    lengths = [len(s) for s in seqs]
    cb = trained.codebook
    net.train()

    for epoch in range(cfg.epochs):
        quantized = epoch >= cfg.warmup_epochs
        usage = np.zeros(cfg.codebook_size, dtype=np.int64)
        recent: list[np.ndarray] = []
        tot = rec = com = 0.0
        nb = 0
        for bid, idx in enumerate(make_batches(lengths, cfg.batch_size, rng)):
            batch = [seqs[i] for i in idx]
            if quantized and cb is None:
                with torch.no_grad():
                    heads = net.encode_heads(batch).cpu().numpy()
                cb = init_codebook(heads, cfg.codebook_size, rng, cfg.ema_decay, cfg.ema_epsilon)
            loss, recon, commit, x, codes = batch_loss(
                net, batch, cb if quantized else None, cfg.soft_samples, rng, cfg.commitment_weight
            )
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at step {trained.step} (epoch {epoch}, batch {bid}): "
                    f"recon={recon.item()}, commitment={commit.item()}"
                )
            opt.zero_grad()
            loss.backward()
            if cfg.clip_norm:
                torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.clip_norm)
            opt.step()
            trained.step += 1

            if quantized:
                xn = x.detach().cpu().numpy().reshape(-1, cfg.dim).astype(cb.embeddings.dtype)
                hard = squared_distances(xn, cb.embeddings).argmin(1)
                usage += np.bincount(hard, minlength=cfg.codebook_size)
                if cfg.ema_assignment == "hard":
                    ema_update(cb, xn, hard)
                else:
                    m = codes.shape[-1]
                    ema_update(cb, np.repeat(xn, m, axis=0), codes.reshape(-1),
                               np.full(codes.size, 1.0 / m))
                recent.append(xn)
                if len(recent) > 8:
                    recent.pop(0)
            tot += loss.item()
            rec += recon.item()
            com += commit.item()
            nb += 1

        reseeded = 0
        if quantized:
            dead = np.flatnonzero(usage == 0)
            if dead.size:
                pool = np.concatenate(recent)
                cb.reseed(dead, pool[rng.choice(pool.shape[0], size=dead.size)])
                reseeded = int(dead.size)
                logger.info("epoch %d: reseeded %d unused codes", epoch, reseeded)
        entry = EpochLog(epoch, tot / nb, rec / nb, com / nb, quantized,
                         float((usage > 0).mean()) if quantized else 0.0,
                         opt.param_groups[0]["lr"], reseeded)
        trained.history.append(entry)
        logger.info("epoch %d loss=%.4f recon=%.4f commit=%.4f", epoch, entry.loss, entry.recon, entry.commitment)
        if callback is not None:
            callback(entry)
        sched.step()

    trained.codebook = cb
    net.eval()
    return trained


def assignment_table(trained: TrainedModel, seqs) -> "object":
    return hard_assign(trained.codebook, trained.encode(seqs))


def _finite_difference(f, params: list[torch.Tensor], eps: float, max_coords: int,
                       rng: np.random.Generator) -> list[tuple[torch.Tensor, np.ndarray, np.ndarray]]:
    """Central differences of scalar ``f()`` at a sample of coordinates per tensor."""
    out = []
    for p in params:
        flat = p.data.view(-1)
        n = flat.numel()
        coords = np.arange(n) if n <= max_coords else np.sort(rng.choice(n, max_coords, replace=False))
        num = np.empty(coords.size)
        for j, c in enumerate(coords):
            orig = flat[c].item()
            flat[c] = orig + eps
            fp = f()
            flat[c] = orig - eps
            fm = f()
            flat[c] = orig
            num[j] = (fp - fm) / (2 * eps)
        out.append((p, coords, num))
    return out


def gradient_check(config: ModelConfig | None = None, eps: float = 1e-4, seed: int = 0,
                   commitment_only: bool = False, max_coords: int = 24,
                   floor: float = 1e-6) -> dict:
    """Compare autograd gradients of the training loss against finite differences.

    The soft-EM code draws are frozen once, so the forward value is a smooth
    function of the parameters. Straight-through means the analytic gradient
    treats the quantization offset ``q - x`` as constant; the finite-difference
    oracle reproduces exactly that by evaluating ``x + (q - x_0)`` with the
    offset computed once at the base point.

    Returns ``max_rel_error`` over all checked coordinates (relative error
    ``|a - n| / max(|a|, |n|, floor)``), per-group errors, and the largest
    absolute codebook gradient.
    """
    cfg = config or ModelConfig(dim=8, ff_dim=16, layers=1, attn_heads=2, sentence_heads=2,
                                vocab_size=64, codebook_size=4, soft_samples=3,
                                dropout=0.0, max_sentence_len=8)
    torch.manual_seed(seed)
    rng = make_rng(seed, 7)
    net = QuantizedTransformer(cfg).double().eval()
    seqs = [rng.integers(5, cfg.vocab_size, size=n).tolist() for n in (3, 5, 4)]

    with torch.no_grad():
        x0 = net.encode_heads(seqs)
    cb = Codebook.from_embeddings(rng.standard_normal((cfg.codebook_size, cfg.dim)))
    codes, q_np = soft_assign_batch(cb, x0.numpy(), cfg.soft_samples, rng)
    e = torch.tensor(cb.embeddings, dtype=torch.float64, requires_grad=True)
    q = e[torch.from_numpy(codes)].mean(-2)
    offset = (torch.from_numpy(q_np) - x0).detach()

    def analytic_loss():
        x = net.encode_heads(seqs)
        commit = commitment_loss(x, q)
        if commitment_only:
            return commit
        return net.reconstruct_loss(straight_through(x, q), seqs) + cfg.commitment_weight * commit

    def oracle_loss() -> float:
        with torch.no_grad():
            x = net.encode_heads(seqs)
            qc = torch.from_numpy(q_np)
            commit = (x - qc).norm(dim=-1).sum(-1).mean()
            if commitment_only:
                return commit.item()
            return (net.reconstruct_loss(x + offset, seqs) + cfg.commitment_weight * commit).item()

    net.zero_grad()
    loss = analytic_loss()
    loss.backward()
    named = [(n, p) for n, p in net.named_parameters()]
    if commitment_only:
        named = [(n, p) for n, p in named if n.startswith(("embed", "encoder", "head_"))]
    grads = {n: (p.grad.clone() if p.grad is not None else torch.zeros_like(p)) for n, p in named}
    fd = _finite_difference(oracle_loss, [p for _, p in named], eps, max_coords, rng)

    per_group = {}
    worst = 0.0
    for (name, _), (_, coords, num) in zip(named, fd):
        ana = grads[name].view(-1).numpy()[coords]
        rel = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
        per_group[name] = float(rel.max()) if rel.size else 0.0
        worst = max(worst, per_group[name])
    cb_grad = 0.0 if e.grad is None else float(e.grad.abs().max())
    return {"max_rel_error": worst, "per_group": per_group, "codebook_grad_max": cb_grad,
            "loss": float(loss.item())}
