"""Miniature neural audio codec: strided snake-conv encoder, residual vector
quantizer with factorized unit-norm codebooks, transposed-conv decoder.

Layout conventions: audio is (B, 1, N) float32 in [-1, 1]; latents are
(B, d, T) with T = N / M where M is the product of the encoder strides.

The quantizer factorizes each stage through a low-rank projection: the
residual is projected d -> d_code, matched against a codebook of unit rows
by inner product (nearest entry in projected space), and the chosen entry is
projected back with the transpose of the same matrix times a learned scalar
gain. Tying the output projection to the input one keeps the subtracted
vector aligned with the residual, which is what makes per-frame residual
norms non-increasing across stages; the gain starts small (0.25) so the
property holds with wide margin from the first step.

Dequantization arithmetic is canonicalized in one helper so that the E
returned by rvq() and the E rebuilt by lookup() from the codes alone are
bit-identical; the training graph rides along via a straight-through node.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

from .numerics import ParameterStore
from .numerics import tensor as tt

ENTRY_KERNEL = 7
UNIT_KERNEL = 5
EXIT_KERNEL = 3
SPECTRAL_WINDOWS = (64, 128, 256, 512)
GAIN_INIT = 0.25


@dataclass
class CodecConfig:
    sample_rate: int = 8000
    strides: tuple = (2, 2, 4, 4)
    channels: tuple = (12, 16, 24, 32)   # per encoder block input; last maps to latent_dim
    latent_dim: int = 64
    code_dim: int = 8
    n_stages: int = 4
    codebook_size: int = 256
    # loss weights; tunable
    spectral_weight: float = 1.0
    time_weight: float = 10.0
    vq_weight: float = 1.0
    commitment_beta: float = 0.25

    @property
    def total_stride(self):
        out = 1
        for s in self.strides:
            out *= s
        return out

    def frames(self, n_samples):
        return n_samples // self.total_stride

    def block_channels(self):
        # (in, out) per encoder block; decoder runs them reversed
        outs = self.channels[1:] + (self.latent_dim,)
        return list(zip(self.channels, outs))


def _conv_init(rng, co, ci, k):
    std = 1.0 / math.sqrt(ci * k)
    return rng.normal(0.0, std, size=(co, ci, k)).astype(np.float32)


def build_codec(ps: ParameterStore, cfg: CodecConfig, rng):
    c0 = cfg.channels[0]
    ps.add("enc.in.w", _conv_init(rng, c0, 1, ENTRY_KERNEL))
    ps.add("enc.in.b", np.zeros(c0, dtype=np.float32))
    for i, ((ci, co), s) in enumerate(zip(cfg.block_channels(), cfg.strides)):
        p = f"enc.b{i}"
        ps.add(f"{p}.ru.w1", _conv_init(rng, ci, ci, UNIT_KERNEL))
        ps.add(f"{p}.ru.b1", np.zeros(ci, dtype=np.float32))
        ps.add(f"{p}.ru.w2", _conv_init(rng, ci, ci, 1))
        ps.add(f"{p}.ru.b2", np.zeros(ci, dtype=np.float32))
        ps.add(f"{p}.down.w", _conv_init(rng, co, ci, 2 * s))
        ps.add(f"{p}.down.b", np.zeros(co, dtype=np.float32))
    d = cfg.latent_dim
    ps.add("enc.out.w", _conv_init(rng, d, d, EXIT_KERNEL))
    ps.add("enc.out.b", np.zeros(d, dtype=np.float32))

    for i in range(cfg.n_stages):
        p = f"rvq.s{i}"
        # orthonormal rows: QR of a random (d, d_code) slab, transposed
        a = rng.standard_normal((d, cfg.code_dim))
        q, _ = np.linalg.qr(a)
        ps.add(f"{p}.proj", np.ascontiguousarray(q.T[:, :, None]).astype(np.float32))
        cb = rng.standard_normal((cfg.codebook_size, cfg.code_dim))
        cb /= np.linalg.norm(cb, axis=1, keepdims=True)
        ps.add(f"{p}.codebook", cb.astype(np.float32))
        g = ps.add(f"{p}.gain", np.full((1, 1, 1), GAIN_INIT, dtype=np.float32))
        g.requires_grad = False        # fit in closed form, never by gradient

    ps.add("dec.in.w", _conv_init(rng, d, d, EXIT_KERNEL))
    ps.add("dec.in.b", np.zeros(d, dtype=np.float32))
    pairs = list(reversed([(co, ci) for (ci, co) in cfg.block_channels()]))
    for i, ((ci, co), s) in enumerate(zip(pairs, reversed(cfg.strides))):
        p = f"dec.b{i}"
        # transposed-conv weight layout is (C_in, C_out, K)
        ps.add(f"{p}.up.w", np.ascontiguousarray(
            _conv_init(rng, co, ci, 2 * s).transpose(1, 0, 2)))
        ps.add(f"{p}.up.b", np.zeros(co, dtype=np.float32))
        ps.add(f"{p}.ru.w1", _conv_init(rng, co, co, UNIT_KERNEL))
        ps.add(f"{p}.ru.b1", np.zeros(co, dtype=np.float32))
        ps.add(f"{p}.ru.w2", _conv_init(rng, co, co, 1))
        ps.add(f"{p}.ru.b2", np.zeros(co, dtype=np.float32))
    ps.add("dec.out.w", _conv_init(rng, 1, c0, ENTRY_KERNEL))
    ps.add("dec.out.b", np.zeros(1, dtype=np.float32))


def _residual_unit(ps, prefix, h):
    y = tt.conv1d(tt.snake(h), ps[f"{prefix}.w1"], ps[f"{prefix}.b1"],
                  stride=1, pad=(UNIT_KERNEL - 1) // 2, label="codec")
    y = tt.conv1d(tt.snake(y), ps[f"{prefix}.w2"], ps[f"{prefix}.b2"],
                  stride=1, pad=0, label="codec")
    return tt.add(h, y)


def encode(ps, cfg: CodecConfig, x):
    """(B, 1, N) -> latent (B, d, N/M). N must be a multiple of M."""
    if x.shape[2] % cfg.total_stride:
        raise ValueError(
            f"encode: length {x.shape[2]} not a multiple of M={cfg.total_stride}")
    h = tt.conv1d(x, ps["enc.in.w"], ps["enc.in.b"],
                  stride=1, pad=(ENTRY_KERNEL - 1) // 2, label="codec")
    for i, s in enumerate(cfg.strides):
        p = f"enc.b{i}"
        h = _residual_unit(ps, f"{p}.ru", h)
        h = tt.conv1d(tt.snake(h), ps[f"{p}.down.w"], ps[f"{p}.down.b"],
                      stride=s, pad=s // 2, label="codec")
    h = tt.conv1d(tt.snake(h), ps["enc.out.w"], ps["enc.out.b"],
                  stride=1, pad=(EXIT_KERNEL - 1) // 2, label="codec")
    return h


def decode(ps, cfg: CodecConfig, z):
    """Latent or quantized latent (B, d, T) -> audio (B, 1, T*M) in [-1, 1]."""
    h = tt.conv1d(z, ps["dec.in.w"], ps["dec.in.b"],
                  stride=1, pad=(EXIT_KERNEL - 1) // 2, label="codec")
    for i, s in enumerate(reversed(cfg.strides)):
        p = f"dec.b{i}"
        h = tt.conv_transpose1d(tt.snake(h), ps[f"{p}.up.w"], ps[f"{p}.up.b"],
                                stride=s, pad=s // 2, label="codec")
        h = _residual_unit(ps, f"{p}.ru", h)
    h = tt.conv1d(tt.snake(h), ps["dec.out.w"], ps["dec.out.b"],
                  stride=1, pad=(ENTRY_KERNEL - 1) // 2, label="codec")
    return tt.tanh(h)


# ------------------------------------------------------------------ quantizer

@dataclass
class QuantizationResult:
    codes: np.ndarray           # (B, N_q, T) int64, all stages
    e: object                   # Tensor (B, d, T): quantized sum, identity grad to z
    residual_norms: np.ndarray  # (B, N_q + 1, T) float64; [**, 0, **] is pre-quant
    codebook_loss: object       # Tensor scalar
    commitment_loss: object     # Tensor scalar
    n_active: np.ndarray        # (B,) stages summed into e, per example
    projected: list             # per-stage projected residuals, (B, d_code, T) data


def _dequant_stage(ps, cfg, stage, codes_st):
    """Canonical dequantization arithmetic for one stage; value route only.

    codes_st is (B, T) int64. Returns (B, d, T) float32. Every consumer of
    dequantized values goes through here so results match bit for bit.
    """
    cb = ps[f"rvq.s{stage}.codebook"].data
    pmat = ps[f"rvq.s{stage}.proj"].data[:, :, 0]          # (d_code, d)
    g = ps[f"rvq.s{stage}.gain"].data
    c = cb[codes_st]                                       # (B, T, d_code)
    y = np.ascontiguousarray(np.matmul(c, pmat).transpose(0, 2, 1))
    return y * g


def rvq(ps, cfg: CodecConfig, z, n_active=None, rng=None):
    """Residual VQ over latent frames.

    n_active: int for a uniform stage count (inference; default all stages),
    or None with rng set to sample per-example counts from {1..N_q}
    (quantizer dropout during training). Codes come back for every stage
    regardless; only the first n_active contribute to e and to the losses.

    Gradients: e passes straight through to z (identity), so reconstruction
    losses train encoder and decoder only. The auxiliary losses live in the
    factorized space. The codebook term turns rows toward the normalized
    projected residual (direction only; rows are unit-norm by invariant);
    the commitment term pulls the projection and the encoder toward the
    dequantized stage, magnitude included. Scale lives solely in the
    per-stage gains, which are fit in closed form outside the graph
    (fit_gains), not by gradient: letting two gradient-trained sides chase
    each other's magnitude is what blew training up in earlier variants.
    """
    B, d, T = z.shape
    nq = cfg.n_stages
    if n_active is None and rng is None:
        n_active = nq
    if n_active is not None:
        if not 1 <= n_active <= nq:
            raise ValueError(f"n_active must be in 1..{nq}, got {n_active}")
        stages_per_ex = np.full(B, n_active, dtype=np.int64)
        uniform = True
    else:
        stages_per_ex = rng.integers(1, nq + 1, size=B).astype(np.int64)
        uniform = False

    r = z
    e_data = None
    codes = np.empty((B, nq, T), dtype=np.int64)
    norms = np.empty((B, nq + 1, T), dtype=np.float64)
    norms[:, 0, :] = np.linalg.norm(z.data.astype(np.float64), axis=1)
    cb_terms, cm_terms = [], []
    projected = []

    for i in range(nq):
        proj = ps[f"rvq.s{i}.proj"]
        cbook = ps[f"rvq.s{i}.codebook"]

        pmat = proj.data[:, :, 0]                               # (d_code, d)
        rp = np.matmul(pmat, r.data)                            # (B, d_code, T)
        projected.append(rp)
        scores = np.matmul(rp.transpose(0, 2, 1), cbook.data.T)
        codes_i = np.argmax(scores, axis=2).astype(np.int64)    # (B, T)
        codes[:, i, :] = codes_i

        stage_data = _dequant_stage(ps, cfg, i, codes_i)

        # projected space, (B, T, d_code) layout. The codebook term compares
        # directions on the unit sphere (rows are pinned to unit norm, they
        # cannot carry magnitude); the commitment term compares the raw
        # projection against the dequantized stage so the encoder commits to
        # scale as well. The scale target routes through the gains, which
        # are fit in closed form, so there is no gradient-vs-gradient tug
        # over magnitudes; that tug is what made earlier variants diverge.
        rp_g = tt.transpose(tt.conv1d(r, proj, stride=1, pad=0, label="rvq"),
                            (0, 2, 1))
        inv = tt.reshape(tt.sqrt(tt.add_scalar(
            tt.sum_lastdim(tt.square(rp_g)), 1e-12)), (B, T, 1))
        u = tt.div(rp_g, inv)
        rows_g = tt.embedding(cbook, codes_i)
        pq = np.ascontiguousarray(
            np.matmul(pmat, stage_data).transpose(0, 2, 1))
        cb_diff = tt.square(tt.sub(rows_g, tt.stop_grad(u)))
        cm_diff = tt.square(tt.sub(rp_g, tt.tensor(pq)))

        active = stages_per_ex > i
        if uniform:
            if i < stages_per_ex[0]:
                e_data = stage_data if e_data is None else e_data + stage_data
                cb_terms.append(tt.mean_all(cb_diff))
                cm_terms.append(tt.mean_all(cm_diff))
        else:
            m_arr = active.astype(np.float32)[:, None, None]
            masked = stage_data * m_arr
            e_data = masked if e_data is None else e_data + masked
            m = tt.tensor(m_arr)
            cb_terms.append(tt.mean_all(tt.mul(cb_diff, m)))
            cm_terms.append(tt.mean_all(tt.mul(cm_diff, m)))

        # the recursion subtracts values only; quantizer parameters never
        # see gradients through later stages
        r = tt.sub(r, tt.tensor(stage_data))
        norms[:, i + 1, :] = np.linalg.norm(r.data.astype(np.float64), axis=1)

    cb_loss = cb_terms[0]
    for t in cb_terms[1:]:
        cb_loss = tt.add(cb_loss, t)
    cm_loss = cm_terms[0]
    for t in cm_terms[1:]:
        cm_loss = tt.add(cm_loss, t)

    e = tt.straight_through(e_data, z)
    return QuantizationResult(codes, e, norms, cb_loss, cm_loss,
                              stages_per_ex, projected)


def lookup(ps, cfg: CodecConfig, codes, n_active=None):
    """Rebuild quantized latents from codes alone: E = sum of dequantized
    stages. Matches rvq(...).e bit for bit at the same stage count."""
    B, nq, T = codes.shape
    n = nq if n_active is None else n_active
    e = _dequant_stage(ps, cfg, 0, codes[:, 0, :])
    for i in range(1, n):
        e = e + _dequant_stage(ps, cfg, i, codes[:, i, :])
    return e


def normalize_codebooks(ps, cfg: CodecConfig):
    """Restore unit rows after an optimizer step (invariant: within 1e-6)."""
    for i in range(cfg.n_stages):
        cb = ps[f"rvq.s{i}.codebook"].data
        cb /= np.linalg.norm(cb, axis=1, keepdims=True)


def reseed_code(ps, cfg: CodecConfig, stage, index, residual_vec):
    """Replace a dead codebook entry with a recent projected residual."""
    v = np.asarray(residual_vec, dtype=np.float32)
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        return
    ps[f"rvq.s{stage}.codebook"].data[index] = v / n


def fit_gains(ps, cfg: CodecConfig, q: QuantizationResult, eta=0.05):
    """Track the per-stage scalar gains by closed-form least squares.

    The aux losses are direction-only, so the gains carry all of the
    magnitude of a dequantized stage. Each call nudges them toward the
    batch-optimal scalar for the observed residuals: with w = projT(row),
    the inner products <r, w> reduce to <rp, row>, so everything needed is
    already in the quantization result. Same maintenance family as the
    per-step codebook re-normalization; nothing here touches the graph.
    """
    for i in range(cfg.n_stages):
        pmat = ps[f"rvq.s{i}.proj"].data[:, :, 0]
        cb = ps[f"rvq.s{i}.codebook"].data
        ki = q.codes[:, i, :]
        rows = cb[ki]                                   # (B, T, d_code)
        num = float(np.sum(rows.transpose(0, 2, 1) * q.projected[i]))
        wn2 = np.sum(np.matmul(cb, pmat) ** 2, axis=1)  # (K,) d-space norms
        den = float(np.sum(wn2[ki])) + 1e-12
        g = ps[f"rvq.s{i}.gain"]
        g.data[...] = (1.0 - eta) * g.data + eta * max(num / den, 1e-4)


# ------------------------------------------------------------------- losses

@lru_cache(maxsize=None)
def _dft_basis(win):
    # hann window folded into a real DFT basis: (win, 2 * n_bins)
    t = np.arange(win)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * t / win)
    k = np.arange(win // 2 + 1)
    ang = 2.0 * np.pi * np.outer(t, k) / win
    basis = np.concatenate([hann[:, None] * np.cos(ang),
                            -hann[:, None] * np.sin(ang)], axis=1)
    return basis.astype(np.float32)


def _log_mag(x, win):
    B = x.shape[0]
    hop = win // 4
    fr = tt.frame(tt.reshape(x, (B, x.shape[2])), win, hop)     # (B, F, win)
    F = fr.shape[1]
    spec = tt.matmul(tt.reshape(fr, (B * F, win)),
                     tt.tensor(_dft_basis(win)), label="spectral")
    nb = win // 2 + 1
    power = tt.add(tt.square(tt.narrow(spec, 1, 0, nb)),
                   tt.square(tt.narrow(spec, 1, nb, nb)))
    mag = tt.sqrt(tt.add_scalar(power, 1e-12))
    return tt.log(tt.add_scalar(mag, 1e-5))


def spectral_loss(x, x_hat, windows=SPECTRAL_WINDOWS):
    """Sum over window sizes of L1 between log-magnitude spectra."""
    total = None
    for w in windows:
        term = tt.mean_all(tt.abs_(tt.sub(_log_mag(x, w), _log_mag(x_hat, w))))
        total = term if total is None else tt.add(total, term)
    return total


def codec_loss(cfg: CodecConfig, x, x_hat, q: QuantizationResult, z=None):
    """Weighted non-adversarial codec objective. Returns (total, parts).

    Pass the pre-quantization latent z during training to enable the scale
    penalty: identity straight-through leaves the latent magnitude as a pure
    gauge freedom, and without an anchor it drifts without bound while the
    gains chase it. Pulling mean(z^2) toward 1 pins the gauge; inference
    never sees the term.
    """
    if x.shape != x_hat.shape:
        raise ValueError(f"codec_loss: shapes {x.shape} vs {x_hat.shape}")
    spec = spectral_loss(x, x_hat)
    time_l1 = tt.mean_all(tt.abs_(tt.sub(x, x_hat)))
    vq = tt.add(q.codebook_loss, tt.scale(q.commitment_loss, cfg.commitment_beta))
    total = tt.add(tt.add(tt.scale(spec, cfg.spectral_weight),
                          tt.scale(time_l1, cfg.time_weight)),
                   tt.scale(vq, cfg.vq_weight))
    parts = {"spectral": float(spec.data), "time_l1": float(time_l1.data),
             "codebook": float(q.codebook_loss.data),
             "commitment": float(q.commitment_loss.data)}
    if z is not None and cfg.scale_weight:
        sc = tt.square(tt.add_scalar(tt.mean_all(tt.square(z)), -1.0))
        total = tt.add(total, tt.scale(sc, cfg.scale_weight))
        parts["scale"] = float(sc.data)
    return total, parts
