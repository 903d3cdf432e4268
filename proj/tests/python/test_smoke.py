"""Smoke tests for the python module: shapes, invariants, and file round trips."""

import math
import os
import tempfile

import numpy as np
import pytest

import adpipe


def test_softmax_rows_sums_to_one():
    x = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    y = adpipe.softmax_rows(x, 1.0)
    assert y.shape == (2, 3)
    assert np.allclose(y.sum(axis=1), 1.0)
    assert np.allclose(y[1], [1 / 3] * 3)
    with pytest.raises(ValueError):
        adpipe.softmax_rows(x, 0.0)


def test_scaled_attention_single_key():
    q = np.random.default_rng(0).normal(size=(3, 4))
    k = np.array([[0.1, 0.2, 0.3, 0.4]])
    v = np.array([[5.0, 6.0, 7.0, 8.0]])
    out = adpipe.scaled_attention(q, k, v)
    assert np.allclose(out, np.tile(v, (3, 1)))


def test_em_iterate_invariants():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(12, 6))
    m0 = rng.normal(size=(3, 6))
    bases, resp, rescued = adpipe.em_iterate(h, m0, iterations=3, tau=0.2)
    assert bases.shape == (3, 6)
    assert resp.shape == (12, 3)
    assert np.allclose(resp.sum(axis=1), 1.0, atol=1e-6)
    assert np.allclose(np.linalg.norm(bases, axis=1), 1.0, atol=1e-6)
    recon = adpipe.reconstruct(resp, bases)
    assert recon.shape == h.shape
    assert np.linalg.matrix_rank(recon, tol=1e-8) <= 3
    assert rescued >= 0


def test_metrics():
    assert adpipe.rouge_l([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    refs = [[1, 2, 3, 4, 5], [6, 7, 8, 9], [2, 4, 6, 8, 10]]
    assert adpipe.cider(refs, refs) == pytest.approx(10.0, abs=1e-6)

    pairs = [([i, i + 1], [i, i + 1], i, 0) for i in range(8)]
    assert adpipe.recall_at_k_within_n(pairs, 1, 5) == pytest.approx(1.0)


def test_redundancy_contrast_on_blocks():
    blocks = np.zeros((12, 8))
    for i in range(12):
        blocks[i, i // 4] = 1.0
        blocks[i, 4 + i % 4] = 0.2
    assert adpipe.redundancy_contrast([blocks], 2) > 0.2


def test_vocabulary_and_tokenize():
    vocab = adpipe.Vocabulary()
    for w in ("jack", "opens", "the", "door"):
        vocab.add(w)
    ids = adpipe.tokenize("Jack opens the door.", vocab)
    assert len(ids) == 4
    assert adpipe.detokenize(ids, vocab) == "jack opens the door"
    assert adpipe.tokenize("unknownword", vocab) == [3]  # UNK


def test_container_round_trip():
    corpus, vocab_tokens, characters = adpipe.gen_synthetic(
        movies=1, clips_per_movie=10, scene_length=5, channels=6, frames=2, nouns=10, seed=4
    )
    assert len(corpus["records"]) == 10
    assert len(characters) == 10
    assert "<bos>" in vocab_tokens

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "corpus.dadf")
        adpipe.write_container(corpus, path)
        back = adpipe.read_container(path)
        assert back["channels"] == corpus["channels"]
        assert len(back["records"]) == len(corpus["records"])
        for a, b in zip(back["records"], corpus["records"]):
            assert a["ad_text"] == b["ad_text"]
            assert np.array_equal(
                np.asarray(a["frames"], dtype=np.float32),
                np.asarray(b["frames"], dtype=np.float32),
            )


def test_grad_suite_single_instance():
    results = adpipe.grad_suite(seed=0, instances=1)
    assert len(results) == 7
    for name, ok, err in results:
        assert ok, f"{name} failed with max rel err {err}"
        assert err <= 1e-4


def test_synthetic_scene_structure_is_redundant():
    corpus, _, _ = adpipe.gen_synthetic(
        movies=1, clips_per_movie=32, scene_length=8, channels=16, frames=4, nouns=40, seed=2
    )
    pooled = np.stack(
        [np.asarray(r["frames"]).mean(axis=0) for r in corpus["records"]]
    )
    pooled /= np.linalg.norm(pooled, axis=1, keepdims=True)
    assert adpipe.redundancy_contrast([pooled], 3) > 0.2
    assert math.isfinite(adpipe.redundancy_contrast([pooled], 3))
