"""Codec oracles: brute-force RVQ enumeration, residual-norm structure,
lookup round trips, loss closed forms."""

import numpy as np
import pytest

from codecsep import codec
from codecsep.numerics import ParameterStore
from codecsep.numerics import tensor as tt


def small_cfg(**kw):
    base = dict(sample_rate=8000, strides=(2, 2, 4, 4),
                channels=(12, 16, 24, 32), latent_dim=64, code_dim=8,
                n_stages=4, codebook_size=256)
    base.update(kw)
    return codec.CodecConfig(**base)


def build(cfg, seed=0):
    ps = ParameterStore()
    codec.build_codec(ps, cfg, np.random.default_rng(seed))
    return ps


def test_config_stride_and_frames():
    cfg = small_cfg()
    assert cfg.total_stride == 64
    assert cfg.frames(16000) == 250


def test_encode_decode_shapes_and_range():
    cfg = small_cfg()
    ps = build(cfg)
    x = tt.tensor(np.random.default_rng(0).uniform(-0.5, 0.5, (2, 1, 1024))
                  .astype(np.float32))
    z = codec.encode(ps, cfg, x)
    assert z.shape == (2, 64, 16)
    y = codec.decode(ps, cfg, z)
    assert y.shape == (2, 1, 1024)
    assert np.all(np.abs(y.data) <= 1.0)
    with pytest.raises(ValueError):
        codec.encode(ps, cfg, tt.tensor(np.zeros((1, 1, 1000), dtype=np.float32)))


def test_two_stage_1d_greedy_matches_brute_force():
    # coarse-to-fine scalar codec: stage gains 1.0 and 0.4, codebooks {+1,-1};
    # greedy stage selection must achieve the jointly optimal reconstruction
    cfg = small_cfg(latent_dim=1, code_dim=1, n_stages=2, codebook_size=2)
    ps = ParameterStore()
    codec.build_codec(ps, cfg, np.random.default_rng(0))
    for i, g in enumerate((1.0, 0.4)):
        ps[f"rvq.s{i}.proj"].data[:] = 1.0
        ps[f"rvq.s{i}.codebook"].data[:] = np.array([[1.0], [-1.0]])
        ps[f"rvq.s{i}.gain"].data[:] = g

    zs = np.linspace(-2.0, 2.0, 41, dtype=np.float32)
    z = tt.tensor(zs.reshape(1, 1, -1))
    q = codec.rvq(ps, cfg, z, n_active=2)
    e = q.e.data[0, 0]
    for t, zval in enumerate(zs):
        best = min(abs(zval - (1.0 * c1 + 0.4 * c2))
                   for c1 in (1.0, -1.0) for c2 in (1.0, -1.0))
        got = abs(float(zval) - float(e[t]))
        assert abs(got - best) < 1e-6, f"z={zval}: greedy {got} vs joint {best}"


def test_exact_codeword_gives_zero_residual():
    cfg = small_cfg()
    ps = build(cfg, seed=3)
    # frames built from stage-0 entries dequantize exactly at stage 0
    idx = np.arange(7) * 31 % cfg.codebook_size
    z_data = codec._dequant_stage(ps, cfg, 0, idx[None, :])      # (1, d, 7)
    q = codec.rvq(ps, cfg, tt.tensor(z_data), n_active=1)
    assert np.array_equal(q.codes[0, 0], idx)
    assert np.all(q.residual_norms[:, 1, :] == 0.0)


def test_residual_norms_non_increasing_on_random_frames():
    cfg = small_cfg()
    ps = build(cfg, seed=4)
    rng = np.random.default_rng(5)
    z = tt.tensor(rng.standard_normal((50, 64, 20)).astype(np.float32))
    q = codec.rvq(ps, cfg, z, n_active=4)
    n = q.residual_norms                                  # (50, 5, 20)
    violations = int(np.sum(np.diff(n, axis=1) > 1e-9))
    assert violations == 0


def test_reconstruction_error_non_increasing_in_stage_count():
    cfg = small_cfg()
    ps = build(cfg, seed=6)
    rng = np.random.default_rng(7)
    z = rng.standard_normal((4, 64, 64)).astype(np.float32)
    q = codec.rvq(ps, cfg, tt.tensor(z), n_active=4)
    errs = []
    for n in range(1, 5):
        e = codec.lookup(ps, cfg, q.codes, n_active=n)
        errs.append(float(np.mean((z - e) ** 2)))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:])), errs


@pytest.mark.parametrize("n_active", [1, 2, 4])
def test_lookup_reproduces_e_bit_identically(n_active):
    cfg = small_cfg()
    ps = build(cfg, seed=8)
    z = tt.tensor(np.random.default_rng(9).standard_normal((3, 64, 30))
                  .astype(np.float32))
    q = codec.rvq(ps, cfg, z, n_active=n_active)
    e2 = codec.lookup(ps, cfg, q.codes, n_active=n_active)
    assert np.array_equal(q.e.data, e2)


def test_quantizer_dropout_masks_per_example():
    cfg = small_cfg()
    ps = build(cfg, seed=10)
    rng = np.random.default_rng(11)
    z = tt.tensor(rng.standard_normal((16, 64, 10)).astype(np.float32))
    q = codec.rvq(ps, cfg, z, rng=rng)
    assert q.n_active.min() >= 1 and q.n_active.max() <= 4
    assert len(set(q.n_active.tolist())) > 1
    for b in range(16):
        eb = codec.lookup(ps, cfg, q.codes[b:b + 1], n_active=int(q.n_active[b]))
        assert np.array_equal(q.e.data[b:b + 1], eb)


def test_rvq_codes_deterministic_without_rng():
    cfg = small_cfg()
    ps = build(cfg, seed=12)
    z = tt.tensor(np.random.default_rng(13).standard_normal((2, 64, 9))
                  .astype(np.float32))
    a = codec.rvq(ps, cfg, z)
    b = codec.rvq(ps, cfg, z)
    assert np.array_equal(a.codes, b.codes)
    assert a.n_active.tolist() == [4, 4]


def test_straight_through_gradient_reaches_encoder_input():
    cfg = small_cfg()
    ps = build(cfg, seed=14)
    z = tt.tensor(np.random.default_rng(15).standard_normal((1, 64, 8))
                  .astype(np.float32))
    z.requires_grad = True
    q = codec.rvq(ps, cfg, z, n_active=4)
    tt.mean_all(tt.square(q.e)).backward()
    # identity pass-through: grad of mean(e^2) wrt z is 2e/numel exactly
    want = 2.0 * q.e.data / q.e.data.size
    assert np.allclose(z.grad, want, atol=1e-7)


def test_aux_losses_train_quantizer_parameters():
    cfg = small_cfg()
    ps = build(cfg, seed=16)
    z = tt.tensor(np.random.default_rng(17).standard_normal((2, 64, 12))
                  .astype(np.float32))
    z.requires_grad = True
    q = codec.rvq(ps, cfg, z, n_active=4)
    loss = tt.add(q.codebook_loss, tt.scale(q.commitment_loss, 0.25))
    loss.backward()
    for name in ("rvq.s0.codebook", "rvq.s0.proj",
                 "rvq.s3.codebook", "rvq.s3.proj"):
        g = ps[name].grad
        assert g is not None and np.all(np.isfinite(g)) and np.any(g != 0), name
    # scale is fit out of graph, never trained
    assert ps["rvq.s0.gain"].grad is None
    assert not ps["rvq.s0.gain"].requires_grad
    assert z.grad is not None and np.all(np.isfinite(z.grad))


def test_fit_gains_matches_batch_least_squares():
    cfg = small_cfg()
    ps = build(cfg, seed=20)
    z = tt.tensor(np.random.default_rng(21).standard_normal((2, 64, 16))
                  .astype(np.float32))
    q = codec.rvq(ps, cfg, z, n_active=4)

    # stage 0 by hand: optimal scalar for r ~ g * projT(row)
    pmat = ps["rvq.s0.proj"].data[:, :, 0]
    cb = ps["rvq.s0.codebook"].data
    w = cb[q.codes[:, 0, :]] @ pmat                  # (B, T, d)
    r = z.data.transpose(0, 2, 1)
    want = np.sum(w * r) / np.sum(w * w)

    codec.fit_gains(ps, cfg, q, eta=1.0)
    got = float(ps["rvq.s0.gain"].data.ravel()[0])
    assert abs(got - want) < 1e-5 * max(1.0, abs(want))
    for i in range(cfg.n_stages):
        assert float(ps[f"rvq.s{i}.gain"].data.ravel()[0]) >= 1e-4


def test_normalize_codebooks_restores_unit_rows():
    cfg = small_cfg()
    ps = build(cfg, seed=18)
    cb = ps["rvq.s1.codebook"].data
    cb *= 1.7
    codec.normalize_codebooks(ps, cfg)
    for i in range(cfg.n_stages):
        rows = np.linalg.norm(ps[f"rvq.s{i}.codebook"].data, axis=1)
        assert np.max(np.abs(rows - 1.0)) < 1e-6


def test_reseed_code_writes_normalized_entry():
    cfg = small_cfg()
    ps = build(cfg, seed=19)
    v = np.full(cfg.code_dim, 2.0, dtype=np.float32)
    codec.reseed_code(ps, cfg, 2, 5, v)
    row = ps["rvq.s2.codebook"].data[5]
    assert abs(np.linalg.norm(row) - 1.0) < 1e-6
    assert np.allclose(row, v / np.linalg.norm(v))


# ------------------------------------------------------------------- losses

def test_spectral_and_time_terms_zero_for_identical_signals():
    x = tt.tensor(np.random.default_rng(20).uniform(-0.9, 0.9, (1, 1, 1024))
                  .astype(np.float32))
    assert float(codec.spectral_loss(x, x).data) == 0.0


def test_time_term_closed_form_for_sine_vs_zero():
    cfg = small_cfg()
    n = 2048
    t = np.arange(n) / cfg.sample_rate
    x_np = np.sin(2 * np.pi * 440.0 * t).astype(np.float32)
    x = tt.tensor(x_np.reshape(1, 1, -1))
    zero = tt.tensor(np.zeros_like(x_np).reshape(1, 1, -1))
    time_l1 = float(tt.mean_all(tt.abs_(tt.sub(x, zero))).data)
    assert abs(time_l1 - np.mean(np.abs(x_np))) < 1e-7


def test_codec_loss_time_weight_is_linear():
    cfg1 = small_cfg()
    cfg2 = small_cfg(time_weight=2 * cfg1.time_weight)
    rng = np.random.default_rng(21)
    x = tt.tensor(rng.uniform(-0.5, 0.5, (1, 1, 1024)).astype(np.float32))
    xh = tt.tensor(rng.uniform(-0.5, 0.5, (1, 1, 1024)).astype(np.float32))
    ps = build(cfg1, seed=22)
    z = codec.encode(ps, cfg1, x)
    q = codec.rvq(ps, cfg1, z, n_active=4)
    t1, p1 = codec.codec_loss(cfg1, x, xh, q)
    t2, p2 = codec.codec_loss(cfg2, x, xh, q)
    assert p1["time_l1"] == p2["time_l1"]
    got = float(t2.data) - float(t1.data)
    want = cfg1.time_weight * p1["time_l1"]
    assert abs(got - want) < 1e-5
    with pytest.raises(ValueError):
        codec.codec_loss(cfg1, x, tt.tensor(np.zeros((1, 1, 512), np.float32)), q)


def test_codec_loss_backward_touches_all_trainables():
    cfg = small_cfg()
    ps = build(cfg, seed=23)
    x = tt.tensor(np.random.default_rng(24).uniform(-0.5, 0.5, (2, 1, 512))
                  .astype(np.float32))
    z = codec.encode(ps, cfg, x)
    q = codec.rvq(ps, cfg, z, rng=np.random.default_rng(25))
    xh = codec.decode(ps, cfg, q.e)
    total, _ = codec.codec_loss(cfg, x, xh, q)
    total.backward()
    missing = [n for n in ps.trainable_names() if ps[n].grad is None]
    assert missing == [], missing


def test_build_is_deterministic():
    cfg = small_cfg()
    ps1 = build(cfg, seed=30)
    ps2 = build(cfg, seed=30)
    assert ps1.content_hash() == ps2.content_hash()
    ps3 = build(cfg, seed=31)
    assert ps1.content_hash() != ps3.content_hash()
