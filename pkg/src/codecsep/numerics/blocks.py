"""Attention and transformer building blocks, functional style.

Weights arrive as explicit tensors (k=1 conv kernels for the projections) so
the same code serves every masker variant; parameter ownership stays with the
caller's ParameterStore.
"""

import math

from . import tensor as tt


def multi_head_attention(x, wq, bq, wk, bk, wv, bv, wo, bo, n_heads):
    """Scaled dot-product self-attention over (B, C, T)."""
    B, C, T = x.shape
    if C % n_heads:
        raise ValueError(f"width {C} not divisible by {n_heads} heads")
    dh = C // n_heads
    q = tt.conv1d(x, wq, bq, label="attn_qkv")
    k = tt.conv1d(x, wk, bk, label="attn_qkv")
    v = tt.conv1d(x, wv, bv, label="attn_qkv")
    # (B, C, T) -> (B, H, dh, T)
    q = tt.reshape(q, (B, n_heads, dh, T))
    k = tt.reshape(k, (B, n_heads, dh, T))
    v = tt.reshape(v, (B, n_heads, dh, T))
    qt = tt.transpose(q, (0, 1, 3, 2))                       # (B, H, T, dh)
    scores = tt.scale(tt.bmm(qt, k, label="attn_scores"), 1.0 / math.sqrt(dh))
    attn = tt.softmax_lastdim(scores)                        # (B, H, T, T)
    vt = tt.transpose(v, (0, 1, 3, 2))
    ctx = tt.bmm(attn, vt, label="attn_scores")              # (B, H, T, dh)
    ctx = tt.reshape(tt.transpose(ctx, (0, 1, 3, 2)), (B, C, T))
    return tt.conv1d(ctx, wo, bo, label="attn_out")


def transformer_block(x, p, n_heads):
    """Pre-norm residual block: x + MHA(LN(x)), then x + MLP(LN(x)).

    p maps local names (ln1_g, ln1_b, wq, bq, ..., ln2_g, ln2_b, w1, b1,
    w2, b2) to parameter tensors. The MLP hidden nonlinearity is snake.
    """
    h = tt.layernorm(x, p["ln1_g"], p["ln1_b"])
    x = tt.add(x, multi_head_attention(h, p["wq"], p["bq"], p["wk"], p["bk"],
                                       p["wv"], p["bv"], p["wo"], p["bo"], n_heads))
    h = tt.layernorm(x, p["ln2_g"], p["ln2_b"])
    h = tt.conv1d(h, p["w1"], p["b1"], label="mlp")
    h = tt.snake(h)
    h = tt.conv1d(h, p["w2"], p["b2"], label="mlp")
    return tt.add(x, h)
