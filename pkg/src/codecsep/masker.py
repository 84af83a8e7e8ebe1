"""Separation models over codec latents: a FiLM-conditioned transformer
producing soft masks, plus the three ablation variants (unguided fixed-stem
heads, decoder-style generator, FiLM applied straight to the encoder output).

All transformer variants share one trunk implementation; variants differ
only in conditioning and head wiring, which keeps parameter names aligned
for audits. Positional information comes from a learned embedding added
after the input projection; blocks are pre-norm with a final layer norm.
Neither choice comes from the system this mirrors; both are recorded
implementation decisions.
"""

from dataclasses import dataclass

import numpy as np

from . import conditioning as cond
from .numerics import tensor as tt
from .numerics.blocks import transformer_block

VARIANTS = ("text_guided_mask", "unguided_k_mask", "text_guided_generator",
            "film_on_encoder")
STEM_HEADS = ("music", "speech", "sfx")   # unguided head index binding
FILM_ON_ENCODER_HIDDEN = 32


@dataclass
class MaskerConfig:
    variant: str = "text_guided_mask"
    layers: int = 4
    width: int = 64
    heads: int = 4
    latent_dim: int = 64
    k_stems: int = 3
    max_frames: int = 256

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by {self.heads}")
        if self.variant != "film_on_encoder" and self.layers < 3:
            raise ValueError("FiLM trunk needs at least 3 layers")


def _require(cfg, variant):
    if cfg.variant != variant:
        raise ValueError(f"op requires variant {variant!r}, config has "
                         f"{cfg.variant!r}")


def _conv_init(rng, co, ci, k=1):
    std = 1.0 / np.sqrt(ci * k)
    return rng.normal(0.0, std, (co, ci, k)).astype(np.float32)


def build_masker(ps, cfg: MaskerConfig, ccfg: cond.ConditioningConfig, rng):
    d, dm = cfg.latent_dim, cfg.width
    if cfg.variant == "film_on_encoder":
        # no trunk at all: a private query MLP emitting one (gamma, beta)
        cond.build_query_mlp(ps, "masker.query", ccfg.embed_dim,
                             FILM_ON_ENCODER_HIDDEN, 2 * d, rng)
        return

    ps.add("masker.in.w", _conv_init(rng, dm, d))
    ps.add("masker.in.b", np.zeros(dm, dtype=np.float32))
    ps.add("masker.pos", (0.02 * rng.standard_normal((cfg.max_frames, dm)))
           .astype(np.float32))
    for i in range(cfg.layers):
        p = f"masker.blk{i}"
        ps.add(f"{p}.ln1.g", np.ones(dm, dtype=np.float32))
        ps.add(f"{p}.ln1.b", np.zeros(dm, dtype=np.float32))
        for nm in ("wq", "wk", "wv", "wo"):
            ps.add(f"{p}.{nm}", _conv_init(rng, dm, dm))
            ps.add(f"{p}.{nm[1]}b", np.zeros(dm, dtype=np.float32))
        ps.add(f"{p}.ln2.g", np.ones(dm, dtype=np.float32))
        ps.add(f"{p}.ln2.b", np.zeros(dm, dtype=np.float32))
        ps.add(f"{p}.mlp.w1", _conv_init(rng, 2 * dm, dm))
        ps.add(f"{p}.mlp.b1", np.zeros(2 * dm, dtype=np.float32))
        ps.add(f"{p}.mlp.w2", _conv_init(rng, dm, 2 * dm))
        ps.add(f"{p}.mlp.b2", np.zeros(dm, dtype=np.float32))
    ps.add("masker.out_ln.g", np.ones(dm, dtype=np.float32))
    ps.add("masker.out_ln.b", np.zeros(dm, dtype=np.float32))

    if cfg.variant == "unguided_k_mask":
        for k in range(cfg.k_stems):
            ps.add(f"masker.head{k}.w", _conv_init(rng, d, dm))
            ps.add(f"masker.head{k}.b", np.zeros(d, dtype=np.float32))
    else:
        ps.add("masker.head.w", _conv_init(rng, d, dm))
        ps.add("masker.head.b", np.zeros(d, dtype=np.float32))
        cond.build_query_mlp(ps, "masker.query", ccfg.embed_dim,
                             ccfg.query_hidden, (cfg.layers - 2) * 2 * dm, rng)


def _block_params(ps, i):
    p = f"masker.blk{i}"
    return {"ln1_g": ps[f"{p}.ln1.g"], "ln1_b": ps[f"{p}.ln1.b"],
            "wq": ps[f"{p}.wq"], "bq": ps[f"{p}.qb"],
            "wk": ps[f"{p}.wk"], "bk": ps[f"{p}.kb"],
            "wv": ps[f"{p}.wv"], "bv": ps[f"{p}.vb"],
            "wo": ps[f"{p}.wo"], "bo": ps[f"{p}.ob"],
            "ln2_g": ps[f"{p}.ln2.g"], "ln2_b": ps[f"{p}.ln2.b"],
            "w1": ps[f"{p}.mlp.w1"], "b1": ps[f"{p}.mlp.b1"],
            "w2": ps[f"{p}.mlp.w2"], "b2": ps[f"{p}.mlp.b2"]}


def trunk_forward(ps, cfg: MaskerConfig, z, film=None):
    """Shared transformer trunk (B, d, T) -> (B, d_m, T).

    film: list of (gamma, beta) pairs, one per conditioned layer; FiLM is
    applied after blocks 2..L-1 (1-indexed) and nowhere else.
    """
    B, _, T = z.shape
    if T > cfg.max_frames:
        raise ValueError(f"{T} frames exceeds positional table "
                         f"({cfg.max_frames})")
    if film is not None and len(film) != cfg.layers - 2:
        raise ValueError(f"expected {cfg.layers - 2} FiLM pairs, "
                         f"got {len(film)}")
    h = tt.conv1d(z, ps["masker.in.w"], ps["masker.in.b"], label="masker")
    pos = tt.transpose(tt.narrow(ps["masker.pos"], 0, 0, T), (1, 0))
    h = tt.add(h, tt.reshape(pos, (1, cfg.width, T)))
    for i in range(cfg.layers):
        h = transformer_block(h, _block_params(ps, i), cfg.heads)
        if film is not None and 1 <= i <= cfg.layers - 2:
            gamma, beta = film[i - 1]
            h = cond.film_apply(h, gamma, beta)
    return tt.layernorm(h, ps["masker.out_ln.g"], ps["masker.out_ln.b"])


def query_film(ps, cfg: MaskerConfig, e):
    return cond.film_params(ps, "masker.query", e, cfg.layers, cfg.width)


def mask_forward(ps, cfg: MaskerConfig, z, film):
    _require(cfg, "text_guided_mask")
    h = trunk_forward(ps, cfg, z, film)
    return tt.sigmoid(tt.conv1d(h, ps["masker.head.w"], ps["masker.head.b"],
                                label="masker"))


def unguided_forward(ps, cfg: MaskerConfig, z):
    """One trunk pass, k_stems sigmoid heads bound to fixed stems."""
    _require(cfg, "unguided_k_mask")
    h = trunk_forward(ps, cfg, z, film=None)
    return [tt.sigmoid(tt.conv1d(h, ps[f"masker.head{k}.w"],
                                 ps[f"masker.head{k}.b"], label="masker"))
            for k in range(cfg.k_stems)]


def generator_forward(ps, cfg: MaskerConfig, z, film):
    """Same trunk, but the head emits the separated latent directly."""
    _require(cfg, "text_guided_generator")
    h = trunk_forward(ps, cfg, z, film)
    return tt.conv1d(h, ps["masker.head.w"], ps["masker.head.b"],
                     label="masker")


def film_on_encoder_forward(ps, cfg: MaskerConfig, z, e):
    """No transformer: one (gamma, beta) from the private query MLP, applied
    to the latent itself. Can push entries outside the masking range."""
    _require(cfg, "film_on_encoder")
    gamma, beta = cond.film_params(ps, "masker.query", e, 3, cfg.latent_dim)[0]
    B = z.shape[0]
    if gamma.shape[0] == 1 and B > 1:
        raise ValueError("one embedding per example required")
    return cond.film_apply(z, gamma, beta)


def apply_mask(m, z):
    if m.shape != z.shape:
        raise ValueError(f"apply_mask: {m.shape} vs {z.shape}")
    return tt.mul(m, z)


def masker_num_params(ps):
    return sum(ps[n].data.size for n in ps.names() if n.startswith("masker."))
