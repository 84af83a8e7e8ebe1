"""Prompt embedder and FiLM machinery against hand oracles."""

import numpy as np
import pytest

from _helpers import check_grads, leaf
from codecsep import conditioning as cond
from codecsep.numerics import ParameterStore
from codecsep.numerics import tensor as tt


def setup():
    cfg = cond.ConditioningConfig()
    ps = ParameterStore()
    cond.build_embedder(ps, cfg, np.random.default_rng(0))
    return ps, cfg


def test_fnv1a64_known_vectors():
    # published FNV-1a 64-bit test vectors
    assert cond.fnv1a64("") == 0xCBF29CE484222325
    assert cond.fnv1a64("a") == 0xAF63DC4C8601EC8C
    assert cond.fnv1a64("foobar") == 0x85944171F73967E8


def test_tokenize_lowercases_and_splits_on_non_alphanumeric():
    assert cond.tokenize("Dog barking, Animal!") == ["dog", "barking", "animal"]
    assert cond.tokenize("a2b--c") == ["a2b", "c"]
    assert cond.tokenize("  ... ") == []


def test_case_and_punctuation_invariance():
    ps, cfg = setup()
    a = cond.embed_prompt(ps, cfg, "Speech").data
    b = cond.embed_prompt(ps, cfg, "speech!").data
    assert np.array_equal(a, b)


def test_embedding_is_normalized_average_of_token_rows():
    ps, cfg = setup()
    e = cond.embed_prompt(ps, cfg, "dog barking, Animal")
    idx = [cond.fnv1a64(t) % cfg.vocab_buckets for t in ("dog", "barking", "animal")]
    want = ps["cond.table"].data[idx].mean(axis=0)
    want = want / np.linalg.norm(want)
    assert np.allclose(e.data, want, atol=1e-6)
    assert abs(np.linalg.norm(e.data) - 1.0) < 1e-6


def test_comma_list_prompts_are_order_invariant():
    ps, cfg = setup()
    a = cond.embed_prompt(ps, cfg, "chirp, alarm").data
    b = cond.embed_prompt(ps, cfg, "alarm, chirp").data
    assert np.allclose(a, b, atol=1e-7)


def test_empty_prompt_raises():
    ps, cfg = setup()
    with pytest.raises(ValueError):
        cond.embed_prompt(ps, cfg, "  !! ")


def test_cosine_similarity_matches_dot_product_oracle():
    ps, cfg = setup()
    a = cond.embed_prompt(ps, cfg, "speech").data
    b = cond.embed_prompt(ps, cfg, "music").data
    cos = float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    assert abs(float(a @ b) - cos) < 1e-6   # unit vectors: dot == cosine


def test_embedding_gradient_reaches_table():
    ps, cfg = setup()
    e = cond.embed_prompt(ps, cfg, "dog barking")
    tt.sum_all(e).backward()
    g = ps["cond.table"].grad
    assert g is not None
    rows = np.unique(cond.prompt_buckets(cfg, "dog barking"))
    assert np.all(np.any(g[rows] != 0, axis=1))
    untouched = np.setdiff1d(np.arange(cfg.vocab_buckets), rows)
    assert not np.any(g[untouched])


# ------------------------------------------------------------------- querying

def build_query(d_e=16, hidden=8, n_layers=4, d=8, seed=1):
    ps = ParameterStore()
    cond.build_query_mlp(ps, "q", d_e, hidden, (n_layers - 2) * 2 * d,
                         np.random.default_rng(seed))
    return ps


def test_zero_initialized_query_head_yields_identity_film():
    ps = build_query()
    e = tt.tensor(np.random.default_rng(2).standard_normal((3, 16))
                  .astype(np.float32))
    films = cond.film_params(ps, "q", e, 4, 8)
    assert len(films) == 2
    for gamma, beta in films:
        assert np.array_equal(gamma.data, np.ones((3, 8), dtype=np.float32))
        assert np.array_equal(beta.data, np.zeros((3, 8), dtype=np.float32))


def test_film_params_shapes_and_count():
    # L=4, d=8: exactly 2 conditioned layers, 32 scalars total
    ps = build_query()
    assert ps["q.w2"].shape == (8, 32)
    e = tt.tensor(np.zeros(16, dtype=np.float32))
    films = cond.film_params(ps, "q", e, 4, 8)
    assert [(g.shape, b.shape) for g, b in films] == [((1, 8), (1, 8))] * 2
    with pytest.raises(ValueError):
        cond.film_params(ps, "q", e, 2, 8)
    with pytest.raises(ValueError):
        cond.film_params(ps, "q", e, 5, 8)


def test_film_params_deterministic():
    ps = build_query()
    ps["q.w2"].data[:] = np.random.default_rng(3).standard_normal((8, 32)) * 0.1
    e = tt.tensor(np.random.default_rng(4).standard_normal(16).astype(np.float32))
    f1 = cond.film_params(ps, "q", e, 4, 8)
    f2 = cond.film_params(ps, "q", e, 4, 8)
    for (g1, b1), (g2, b2) in zip(f1, f2):
        assert np.array_equal(g1.data, g2.data)
        assert np.array_equal(b1.data, b2.data)


# ----------------------------------------------------------------- film_apply

def test_film_apply_identity_is_exact():
    h = tt.tensor(np.random.default_rng(5).standard_normal((2, 4, 6))
                  .astype(np.float32))
    gamma = tt.tensor(np.ones((2, 4), dtype=np.float32))
    beta = tt.tensor(np.zeros((2, 4), dtype=np.float32))
    out = cond.film_apply(h, gamma, beta)
    assert np.array_equal(out.data, h.data)


def test_film_apply_hand_example():
    h = tt.tensor(np.ones((1, 2, 3), dtype=np.float32))
    gamma = tt.tensor(np.array([[2.0, 3.0]], dtype=np.float32))
    beta = tt.tensor(np.array([[1.0, -1.0]], dtype=np.float32))
    out = cond.film_apply(h, gamma, beta)
    assert np.array_equal(out.data[0, 0], [3.0, 3.0, 3.0])
    assert np.array_equal(out.data[0, 1], [2.0, 2.0, 2.0])
    with pytest.raises(ValueError):
        cond.film_apply(h, tt.tensor(np.ones((1, 3), np.float32)), beta)


def test_film_apply_beta_gradient_is_t_ones():
    T = 5
    h, gamma, beta = leaf(np.random.default_rng(6).standard_normal((1, 3, T))), \
        leaf(np.random.default_rng(7).standard_normal((1, 3))), \
        leaf(np.zeros((1, 3)))
    out = tt.sum_all(cond.film_apply(h, gamma, beta))
    out.backward()
    assert np.array_equal(beta.grad, np.full((1, 3), float(T)))
    check_grads(lambda h, g, b: tt.sum_all(tt.square(cond.film_apply(h, g, b))),
                [h, gamma, beta])
