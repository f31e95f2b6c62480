"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run just this file with ``pytest tests/test_acceptance.py -v``; the verdicts
appear under "acceptance criteria" in the terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest
import torch

from qtsum.aspect import (
    AspectSpec,
    aspect_entropy,
    aspect_summarize,
    build_aspect_code_map,
    mean_entropy_per_head,
    select_aspect_head,
)
from qtsum.cli import main
from qtsum.config import load_run_config
from qtsum.corpus import corpus_from_records, load_reviews
from qtsum.extraction import ExtractionConfig, rank_two_step, summarize_entity
from qtsum.model import ModelConfig, QuantizedTransformer
from qtsum.quantizer import (
    Codebook,
    AssignmentTable,
    hard_assign,
    head_purity,
    make_rng,
    soft_assign_batch,
)
from qtsum.rouge import lcs_length, rouge_l, rouge_n
from qtsum.tokenizer import build_tokenizer
from qtsum.toydata import ASPECT_NOUNS, bundled_toy_path, generate_records, sentence_labels
from qtsum.training import TrainedModel, gradient_check, set_deterministic, train

from test_extraction import enumerate_two_step, bridge_fixture
from test_quantizer import brute_argmin, enumerated_softmax, four_gaussian_ok, run_four_gaussians
from test_rouge import brute_lcs

TOY_MODEL = dict(dim=32, ff_dim=64, layers=2, attn_heads=2, sentence_heads=4, soft_samples=10,
                 epochs=20, warmup_epochs=4, batch_size=8, commitment_weight=0.05)


def fit(records_or_corpus, codebook_size, seed=0):
    corpus = records_or_corpus
    if isinstance(corpus, list):
        corpus = corpus_from_records(corpus)
    set_deterministic(0)
    tok = build_tokenizer(corpus, 256)
    seqs = [list(s.token_ids) for s in corpus.with_tokens(tok).iter_sentences()]
    cfg = ModelConfig(vocab_size=tok.vocab_size, codebook_size=codebook_size, **TOY_MODEL)
    torch.manual_seed(seed)
    return train(TrainedModel(QuantizedTransformer(cfg), None, tok), seqs, cfg, seed=seed)


@pytest.fixture(scope="module")
def toy_model():
    start = time.perf_counter()
    tm = fit(load_reviews(bundled_toy_path()), 32)
    return tm, time.perf_counter() - start


def test_c01_quantizer_exactness(report):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 1, 6))
    cb = Codebook.from_embeddings(rng.normal(size=(64, 6)))
    got = hard_assign(cb, x).codes[:, 0]
    elapsed = time.perf_counter() - start
    agree = float((got == brute_argmin(x[:, 0], cb.embeddings)).mean())
    ok = agree == 1.0 and elapsed < 1.0
    report(1, ok, f"argmin agreement {agree:.0%} on 200x64, {elapsed:.3f}s")
    assert ok


def test_c02_soft_em_distribution(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    cb = Codebook.from_embeddings(rng.normal(scale=0.7, size=(8, 4)))
    x = rng.normal(scale=0.5, size=4)
    codes, _ = soft_assign_batch(cb, x, 100_000, make_rng(11))
    freq = np.bincount(codes, minlength=8) / codes.size
    tv = 0.5 * np.abs(freq - enumerated_softmax(x, cb.embeddings)).sum()
    elapsed = time.perf_counter() - start
    ok = tv < 0.01 and elapsed < 5
    report(2, ok, f"TV {tv:.4f} over 1e5 draws, K=8, {elapsed:.2f}s")
    assert ok


def test_c03_ema_convergence(report):
    start = time.perf_counter()
    good = sum(four_gaussian_ok(*run_four_gaussians(seed)) for seed in range(10))
    elapsed = time.perf_counter() - start
    ok = good == 10 and elapsed < 10
    report(3, ok, f"4-Gaussian recovery {good}/10 seeds, {elapsed:.2f}s")
    assert ok


def test_c04_gradient_fidelity(report):
    start = time.perf_counter()
    full = gradient_check()
    commit = gradient_check(commitment_only=True)
    elapsed = time.perf_counter() - start
    err = max(full["max_rel_error"], commit["max_rel_error"])
    ok = err < 1e-3 and full["codebook_grad_max"] == 0.0 and elapsed < 30
    report(4, ok, f"max rel error {err:.2e}, codebook grad {full['codebook_grad_max']}, {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_c05_training_progress(toy_model, report):
    tm, elapsed = toy_model
    recon = [e.recon for e in tm.history]
    ratio = recon[-1] / recon[0]
    warm = [e.commitment for e in tm.history if not e.quantized]
    ok = ratio <= 0.5 and len(warm) == 4 and all(c == 0.0 for c in warm) and elapsed < 600
    report(5, ok, f"L_r {recon[0]:.3f} -> {recon[-1]:.3f} (ratio {ratio:.2f}), "
                  f"warm-up commitment {warm}, {elapsed:.0f}s")
    assert ok


def test_c06_two_step_sampling(report):
    start = time.perf_counter()
    table, enc, cb = bridge_fixture()
    cfg = ExtractionConfig()
    runs = [rank_two_step(table, enc, cb, cfg, make_rng(s)) for s in range(50)]
    wins = sum(r.order[0] == 3 for r in runs)
    conserved = all(int(r.scores.sum()) == 300 * 30 for r in runs)

    rng = np.random.default_rng(9)
    cb6 = Codebook.from_embeddings(rng.normal(scale=0.8, size=(4, 3)))
    enc6 = rng.normal(scale=0.8, size=(6, 2, 3))
    table6 = AssignmentTable(np.array([[0, 1], [1, 2], [3, 3], [0, 0], [2, 1], [1, 1]]),
                             np.zeros((6, 2)), np.array([3, 5, 2, 2]))
    r = rank_two_step(table6, enc6, cb6, ExtractionConfig(cluster_samples=100_000, sentences_per_cluster=1),
                      make_rng(1))
    tv = 0.5 * np.abs(r.scores / r.scores.sum() - enumerate_two_step(table6, enc6, cb6)).sum()
    elapsed = time.perf_counter() - start
    ok = wins >= 48 and tv < 0.01 and conserved and elapsed < 60
    report(6, ok, f"bridge sentence first in {wins}/50, TV {tv:.4f}, conservation {conserved}, {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_c07_popularity_end_to_end(report):
    start = time.perf_counter()
    tm = fit(generate_records(20, 10, 5, seed=11, dominant_share=0.4), 64)
    wins = 0
    for s in range(10):
        recs = generate_records(1, 100, 5, seed=100 + s, dominant_share=0.4, prefix=f"p{s}_")
        ent = corpus_from_records(recs).entities[0]
        labels = sentence_labels(recs, "group")[ent.entity_id]
        summ = summarize_entity(ent.entity_id, ent.texts(), tm.encode_texts(ent.texts()), tm.codebook,
                                ExtractionConfig(seed=s))
        wins += labels[summ.sentence_ids[0]] == "dominant"
    elapsed = time.perf_counter() - start
    ok = wins >= 9 and elapsed < 900
    report(7, ok, f"dominant top sentence {wins}/10 seeds, {elapsed:.0f}s")
    assert ok


def _planted_head_trials():
    hits = 0
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        heads, per_head, n_asp = 4, 6, 3
        truth = int(rng.integers(heads))
        code_head = np.repeat(np.arange(heads), per_head)
        probs = np.empty((heads * per_head, n_asp))
        for k, h in enumerate(code_head):
            if h == truth:
                probs[k] = np.eye(n_asp)[rng.integers(n_asp)] * 0.9 + 0.1 / n_asp
            else:
                probs[k] = rng.dirichlet(np.full(n_asp, 5.0))
        _, means = mean_entropy_per_head(probs, code_head, heads)
        hits += select_aspect_head(means) == truth
    return hits


@pytest.mark.slow
def test_c08_aspect_machinery(toy_model, report):
    start = time.perf_counter()
    entropy_ok = (aspect_entropy([0, 0, 1, 0, 0, 0]) == 0.0
                  and abs(aspect_entropy(np.full(6, 1 / 6)) - math.log(6)) <= 1e-9)
    head_hits = _planted_head_trials()

    names = ["location", "rooms", "service"]
    tm = fit(generate_records(60, 10, 5, seed=1, aspects=names), 32)
    aspects = [AspectSpec(a, tuple(ASPECT_NOUNS[a][:5])) for a in names]
    dev = corpus_from_records(generate_records(5, 10, 5, seed=2, aspects=names, prefix="d")).texts()
    amap = build_aspect_code_map(hard_assign(tm.codebook, tm.encode_texts(dev)), dev, aspects)
    test = generate_records(5, 100, 5, seed=3, aspects=names, prefix="t")
    labels = sentence_labels(test)
    hits = total = 0
    for ent in corpus_from_records(test).entities:
        enc = tm.encode_texts(ent.texts())
        for name in names:
            for s in range(10):
                summ = aspect_summarize(enc, tm.codebook, ent.texts(), amap, name,
                                        ExtractionConfig(seed=s, word_budget=75), ent.entity_id)
                got = [labels[ent.entity_id][i] for i in summ.sentence_ids]
                hits += sum(g == name for g in got)
                total += len(got)
    accuracy = hits / total

    toy, _ = toy_model
    texts = load_reviews(bundled_toy_path()).texts()
    purity, _ = head_purity(hard_assign(toy.codebook, toy.encode_texts(texts)))
    elapsed = time.perf_counter() - start
    ok = entropy_ok and head_hits == 20 and accuracy >= 0.9 and purity >= 0.99 and elapsed < 900
    report(8, ok, f"entropy {entropy_ok}, planted head {head_hits}/20, aspect labels {accuracy:.1%}, "
                  f"head purity {purity:.3f}, {elapsed:.0f}s")
    assert ok


def test_c09_rouge_oracles(report):
    import random

    start = time.perf_counter()
    fixed = (rouge_n("the cat", "the cat sat", 1).f1 == pytest.approx(0.8, abs=1e-12)
             and rouge_l("a c e", "a b c d e").f1 == pytest.approx(0.75, abs=1e-12)
             and rouge_l("x y z", "x y z").f1 == 1.0 and rouge_n("x y z", "x y z", 2).f1 == 1.0)
    rng = random.Random(0)
    agree = 0
    for _ in range(100):
        a = [rng.choice("abcd") for _ in range(rng.randint(0, 10))]
        b = [rng.choice("abcd") for _ in range(rng.randint(0, 10))]
        agree += lcs_length(a, b) == brute_lcs(a, b)
    elapsed = time.perf_counter() - start
    ok = fixed and agree == 100 and elapsed < 5
    report(9, ok, f"hand fixtures {fixed}, LCS brute force {agree}/100, {elapsed:.2f}s")
    assert ok


def _pipeline(root, refs):
    root.mkdir()
    cfg = {"dim": 16, "ff_dim": 32, "layers": 1, "attn_heads": 2, "sentence_heads": 4, "vocab_size": 128,
           "codebook_size": 16, "soft_samples": 4, "epochs": 3, "warmup_epochs": 1, "batch_size": 32,
           "train_path": str(bundled_toy_path()), "checkpoint": str(root / "m.ckpt"), "output_dir": str(root)}
    (root / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", str(root / "cfg.json")]) == 0
    assert main(["summarize", str(root / "m.ckpt"), str(bundled_toy_path()), "-o", str(root / "s.jsonl")]) == 0
    assert main(["eval", str(root / "s.jsonl"), str(refs), "-o", str(root / "metrics.json")]) == 0
    return [(root / n).read_bytes() for n in ("m.ckpt", "s.jsonl", "metrics.json")]


@pytest.mark.slow
def test_c10_determinism(tmp_path, report):
    refs = tmp_path / "refs.jsonl"
    with refs.open("w") as fh:
        for ent in load_reviews(bundled_toy_path()).entities:
            fh.write(json.dumps({"entity_id": ent.entity_id, "references": [" ".join(ent.texts()[:4])]}) + "\n")
    a = _pipeline(tmp_path / "a", refs)
    b = _pipeline(tmp_path / "b", refs)
    same = [x == y for x, y in zip(a, b)]
    ok = all(same)
    report(10, ok, f"identical checkpoint/summaries/metrics across two runs: {same}")
    assert ok


def test_c11_config_fidelity(report):
    eff = load_run_config(None).to_dict()
    expected = {"dim": 320, "ff_dim": 512, "layers": 3, "attn_heads": 4, "sentence_heads": 8,
                "codebook_size": 1024, "soft_samples": 30, "cluster_samples": 300,
                "sentences_per_cluster": 30, "lr": 1e-3, "lr_decay": 0.9, "warmup_epochs": 4, "epochs": 20}
    wrong = {k: eff[k] for k, v in expected.items() if eff[k] != v}
    ok = not wrong
    report(11, ok, "defaults match published setup" if ok else f"mismatched: {wrong}")
    assert ok
