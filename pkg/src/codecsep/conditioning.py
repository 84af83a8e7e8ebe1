"""Prompt conditioning: hash-bag text embedder plus the query network that
expands an embedding into per-layer FiLM parameters.

The embedder is a deliberately small stand-in for a real text encoder: each
token is FNV-1a hashed into a bucket of a learned table, rows are averaged
and normalized to unit length. It trains jointly with the masker. Averaging
makes comma-joined compositional prompts order-invariant by construction.
"""

from dataclasses import dataclass
import re

import numpy as np

from .numerics import tensor as tt

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


@dataclass
class ConditioningConfig:
    vocab_buckets: int = 4096
    embed_dim: int = 64
    query_hidden: int = 64


def fnv1a64(token: str) -> int:
    """64-bit FNV-1a over the UTF-8 bytes; platform-independent."""
    h = FNV_OFFSET
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def tokenize(text: str):
    return [t for t in re.split(r"[^a-z0-9]+", text.lower()) if t]


def prompt_buckets(cfg: ConditioningConfig, text: str):
    toks = tokenize(text)
    if not toks:
        raise ValueError(f"prompt is empty after normalization: {text!r}")
    return np.array([fnv1a64(t) % cfg.vocab_buckets for t in toks], dtype=np.int64)


def build_embedder(ps, cfg: ConditioningConfig, rng):
    std = 1.0 / np.sqrt(cfg.embed_dim)
    ps.add("cond.table",
           rng.normal(0.0, std, (cfg.vocab_buckets, cfg.embed_dim))
           .astype(np.float32))


def embed_prompt(ps, cfg: ConditioningConfig, text: str):
    """Prompt text -> unit-norm embedding (d_e,), differentiable into the
    table. Pure function of (text, table)."""
    idx = prompt_buckets(cfg, text)
    rows = tt.embedding(ps["cond.table"], idx)          # (n_tokens, d_e)
    return tt.l2_normalize(tt.mean_axis0(rows))


def embed_prompts(ps, cfg: ConditioningConfig, texts):
    return tt.stack_rows([embed_prompt(ps, cfg, t) for t in texts])  # (B, d_e)


def build_query_mlp(ps, prefix, d_in, hidden, d_out, rng):
    """Two-layer MLP with zero-initialized output so FiLM starts at identity."""
    std = 1.0 / np.sqrt(d_in)
    ps.add(f"{prefix}.w1", rng.normal(0.0, std, (d_in, hidden)).astype(np.float32))
    ps.add(f"{prefix}.b1", np.zeros(hidden, dtype=np.float32))
    ps.add(f"{prefix}.w2", np.zeros((hidden, d_out), dtype=np.float32))
    ps.add(f"{prefix}.b2", np.zeros(d_out, dtype=np.float32))


def film_params(ps, prefix, e, n_layers, d):
    """Expand embeddings (B, d_e) or (d_e,) into L-2 per-layer FiLM pairs.

    Returns [(gamma, beta), ...] with shapes (B, d); gamma = 1 + delta so the
    zero-initialized query head yields the identity modulation exactly.
    """
    if n_layers < 3:
        raise ValueError(f"film_params needs n_layers >= 3, got {n_layers}")
    if len(e.shape) == 1:
        e = tt.reshape(e, (1, e.shape[0]))
    h = tt.snake(tt.add(tt.matmul(e, ps[f"{prefix}.w1"], label="query"),
                        ps[f"{prefix}.b1"]))
    out = tt.add(tt.matmul(h, ps[f"{prefix}.w2"], label="query"),
                 ps[f"{prefix}.b2"])
    B = out.shape[0]
    n_cond = n_layers - 2
    if out.shape[1] != n_cond * 2 * d:
        raise ValueError(f"query head emits {out.shape[1]} values, "
                         f"expected {(n_cond, 2, d)}")
    grid = tt.reshape(out, (B, n_cond, 2, d))
    films = []
    for l in range(n_cond):
        layer = tt.narrow(grid, 1, l, 1)
        dg = tt.reshape(tt.narrow(layer, 2, 0, 1), (B, d))
        beta = tt.reshape(tt.narrow(layer, 2, 1, 1), (B, d))
        films.append((tt.add_scalar(dg, 1.0), beta))
    return films


def film_apply(h, gamma, beta):
    """Channel-wise modulation gamma*h + beta over (B, C, T)."""
    B, C, _ = h.shape
    if gamma.shape != (B, C) or beta.shape != (B, C):
        raise ValueError(
            f"film_apply: got gamma {gamma.shape}, beta {beta.shape} for {h.shape}")
    return tt.add(tt.mul(h, tt.reshape(gamma, (B, C, 1))),
                  tt.reshape(beta, (B, C, 1)))
