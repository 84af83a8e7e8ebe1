"""End-to-end separation paths and the bitstream wire format.

Two inference routes share the same trained masker: the continuous path
encodes audio, masks the unquantized latent, and decodes; the codes path
starts (and can end) at the discrete bitstream, rebuilding embeddings by
codebook lookup. Streams are self-describing: the header carries the codec
geometry so decoders can refuse incompatible input before touching payload.
"""

import binascii
from dataclasses import asdict, dataclass
import struct
import wave

import numpy as np

from . import codec, conditioning as cond, masker
from .numerics import ParameterStore, load_checkpoint, save_checkpoint
from .numerics import tensor as tt

MAGIC = b"CSEP"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sBIHHHBBI")
CODEC_PREFIXES = ("enc.", "dec.", "rvq.")
MASKER_PREFIXES = ("masker.", "cond.")


class CorruptStream(ValueError):
    pass


class IncompatibleStream(ValueError):
    pass


@dataclass
class StreamHeader:
    sample_rate: int
    total_stride: int
    latent_dim: int
    code_dim: int
    n_q_present: int
    bits: int
    n_frames: int
    version: int = STREAM_VERSION


def serialize_codes(codes, cfg: codec.CodecConfig, bits=None):
    """Pack (N_q, T) indices into a framed byte stream.

    Payload is frame-major then stage-major, each index in `bits` bits
    MSB-first, zero-padded to a byte boundary, followed by CRC-32 of the
    payload bytes.
    """
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValueError(f"serialize_codes wants (N_q, T), got {codes.shape}")
    nq, T = codes.shape
    if bits is None:
        bits = max(1, int(np.ceil(np.log2(cfg.codebook_size))))
    if codes.min() < 0 or codes.max() >= (1 << bits):
        raise ValueError(f"codes out of range for {bits}-bit packing")
    header = _HEADER.pack(MAGIC, STREAM_VERSION, cfg.sample_rate,
                          cfg.total_stride, cfg.latent_dim, cfg.code_dim,
                          nq, bits, T)
    flat = codes.T.reshape(-1).astype(np.uint64)         # frame-major outer
    bit_mat = (flat[:, None] >> np.arange(bits - 1, -1, -1, dtype=np.uint64)) & 1
    payload = np.packbits(bit_mat.astype(np.uint8).reshape(-1)).tobytes()
    crc = binascii.crc32(payload) & 0xFFFFFFFF
    return header + payload + struct.pack("<I", crc)


def deserialize_codes(data):
    """Bytes -> (StreamHeader, codes (N_q, T)). Validates magic, version,
    and payload CRC, naming the failing field."""
    if len(data) < _HEADER.size + 4:
        raise CorruptStream("stream truncated before header")
    magic, ver, fs, m, d, dc, nq, bits, T = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptStream(f"bad magic {magic!r}")
    if ver != STREAM_VERSION:
        raise CorruptStream(f"unsupported version {ver}")
    n_payload = (T * nq * bits + 7) // 8
    end = _HEADER.size + n_payload
    if len(data) < end + 4:
        raise CorruptStream("stream truncated before CRC")
    payload = data[_HEADER.size:end]
    (crc_stored,) = struct.unpack_from("<I", data, end)
    crc = binascii.crc32(payload) & 0xFFFFFFFF
    if crc != crc_stored:
        raise CorruptStream(f"CRC mismatch: stored {crc_stored:#x}, "
                            f"computed {crc:#x}")
    bits_arr = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    bits_arr = bits_arr[:T * nq * bits].reshape(-1, bits)
    weights = (1 << np.arange(bits - 1, -1, -1)).astype(np.int64)
    codes = (bits_arr.astype(np.int64) @ weights).reshape(T, nq).T
    hdr = StreamHeader(fs, m, d, dc, nq, bits, T)
    return hdr, np.ascontiguousarray(codes)


def check_stream_compatible(hdr: StreamHeader, cfg: codec.CodecConfig):
    checks = [("sample_rate", hdr.sample_rate, cfg.sample_rate),
              ("total_stride", hdr.total_stride, cfg.total_stride),
              ("latent_dim", hdr.latent_dim, cfg.latent_dim),
              ("code_dim", hdr.code_dim, cfg.code_dim)]
    for name, got, want in checks:
        if got != want:
            raise IncompatibleStream(f"{name}: stream has {got}, codec {want}")
    if hdr.n_q_present > cfg.n_stages:
        raise IncompatibleStream(
            f"stream carries {hdr.n_q_present} stages, codec has {cfg.n_stages}")


# -------------------------------------------------------------------- wav io

def write_wav(path, samples, sample_rate):
    # scale by 32768 (clipping the one unreachable code) so that float
    # samples of the form k/32768 survive a write/read round trip exactly
    x = np.asarray(samples, dtype=np.float32).reshape(-1)
    pcm = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(pcm.tobytes())


def read_wav(path):
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        rate = f.getframerate()
        pcm = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    return pcm.astype(np.float32) / 32768.0, rate


# ------------------------------------------------------------- model bundles

def save_codec_checkpoint(path, ps, cfg: codec.CodecConfig, meta=None):
    arrays = {n: ps[n].data for n in ps.names() if n.startswith(CODEC_PREFIXES)}
    full = {"kind": "codec", "config": asdict(cfg),
            "content_hash": ps.content_hash(CODEC_PREFIXES)}
    full.update(meta or {})
    save_checkpoint(path, arrays, full)


def save_masker_checkpoint(path, ps, mcfg: masker.MaskerConfig,
                           ccfg: cond.ConditioningConfig, codec_hash, meta=None):
    arrays = {n: ps[n].data for n in ps.names() if n.startswith(MASKER_PREFIXES)}
    full = {"kind": "masker", "variant": mcfg.variant,
            "masker_config": asdict(mcfg), "cond_config": asdict(ccfg),
            "codec_hash": codec_hash}
    full.update(meta or {})
    save_checkpoint(path, arrays, full)


def _tupled(cfg_dict, keys):
    out = dict(cfg_dict)
    for k in keys:
        if k in out:
            out[k] = tuple(out[k])
    return out


def load_codec(path, ps=None):
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "codec":
        raise ValueError(f"{path} is not a codec checkpoint")
    cfg = codec.CodecConfig(**_tupled(meta["config"], ("strides", "channels")))
    if ps is None:
        ps = ParameterStore()
    codec.build_codec(ps, cfg, np.random.default_rng(0))
    ps.load_state_arrays(arrays, prefix=CODEC_PREFIXES)
    got = ps.content_hash(CODEC_PREFIXES)
    if got != meta["content_hash"]:
        raise ValueError(f"{path}: parameter hash mismatch after load")
    return ps, cfg, meta


def load_separator(codec_path, masker_path):
    """Load codec + masker into one store, checking that the masker was
    trained against exactly this codec (content hash equality)."""
    ps, ccfg, _ = load_codec(codec_path)
    arrays, meta = load_checkpoint(masker_path)
    if meta.get("kind") != "masker":
        raise ValueError(f"{masker_path} is not a masker checkpoint")
    mcfg = masker.MaskerConfig(**meta["masker_config"])
    condcfg = cond.ConditioningConfig(**meta["cond_config"])
    cond.build_embedder(ps, condcfg, np.random.default_rng(0))
    masker.build_masker(ps, mcfg, condcfg, np.random.default_rng(0))
    ps.load_state_arrays(arrays, prefix=MASKER_PREFIXES)
    codec_hash = ps.content_hash(CODEC_PREFIXES)
    if meta["codec_hash"] != codec_hash:
        raise ValueError("masker was trained against a different codec "
                         f"(hash {meta['codec_hash'][:12]} != {codec_hash[:12]})")
    return ps, ccfg, mcfg, condcfg, meta


# ---------------------------------------------------------------- separation

def _pad_to_stride(x_np, m):
    n = x_np.shape[-1]
    rem = (-n) % m
    if rem:
        x_np = np.pad(x_np, [(0, 0)] * (x_np.ndim - 1) + [(0, rem)])
    return x_np, n


def separated_latents(ps, mcfg: masker.MaskerConfig,
                      condcfg: cond.ConditioningConfig, z, prompts,
                      mask_override=None):
    """Variant dispatch: latent (B, d, T) + per-example prompts -> Z_tilde.

    mask_override replaces the computed mask for the masking variants (test
    hook for forced all-ones / all-zeros paths).
    """
    v = mcfg.variant
    if v == "unguided_k_mask":
        heads = [masker.STEM_HEADS.index(p) for p in prompts]
        masks = masker.unguided_forward(ps, mcfg, z)
        if mask_override is not None:
            masks = [mask_override] * mcfg.k_stems
        pick = None
        for k, m in enumerate(masks):
            sel = np.asarray([1.0 if h == k else 0.0 for h in heads],
                             dtype=np.float32)[:, None, None]
            term = tt.mul(m, tt.tensor(sel))
            pick = term if pick is None else tt.add(pick, term)
        return masker.apply_mask(pick, z)
    e = cond.embed_prompts(ps, condcfg, prompts)
    if v == "text_guided_mask":
        m = mask_forward_batch(ps, mcfg, z, e)
        if mask_override is not None:
            m = mask_override
        return masker.apply_mask(m, z)
    if v == "text_guided_generator":
        film = masker.query_film(ps, mcfg, e)
        return masker.generator_forward(ps, mcfg, z, film)
    if v == "film_on_encoder":
        return masker.film_on_encoder_forward(ps, mcfg, z, e)
    raise ValueError(f"unknown variant {v!r}")


def mask_forward_batch(ps, mcfg, z, e):
    film = masker.query_film(ps, mcfg, e)
    return masker.mask_forward(ps, mcfg, z, film)


def separate_continuous(ps, ccfg, mcfg, condcfg, x_np, prompt,
                        mask_override=None):
    """Waveform (N,) + prompt -> separated waveform (N,), continuous path:
    the masked latent goes straight to the decoder, no quantization."""
    padded, n = _pad_to_stride(np.asarray(x_np, dtype=np.float32)[None, None, :],
                               ccfg.total_stride)
    z = codec.encode(ps, ccfg, tt.tensor(padded))
    zt = separated_latents(ps, mcfg, condcfg, z, [prompt],
                           mask_override=mask_override)
    y = codec.decode(ps, ccfg, zt)
    return y.data[0, 0, :n].copy()


def separate_codes(ps, ccfg, mcfg, condcfg, stream, prompt, mode="waveform"):
    """Codes-in separation: rebuild E by lookup, mask, then either decode
    (mode=waveform) or re-quantize and emit a new stream (mode=codes)."""
    if mode not in ("waveform", "codes"):
        raise ValueError(f"mode must be waveform or codes, got {mode!r}")
    hdr, codes = deserialize_codes(stream)
    check_stream_compatible(hdr, ccfg)
    e = codec.lookup(ps, ccfg, codes[None], n_active=hdr.n_q_present)
    zt = separated_latents(ps, mcfg, condcfg, tt.tensor(e), [prompt])
    if mode == "waveform":
        return codec.decode(ps, ccfg, zt).data[0, 0].copy()
    q = codec.rvq(ps, ccfg, zt, n_active=ccfg.n_stages)
    return serialize_codes(q.codes[0], ccfg, bits=hdr.bits)


def encode_to_stream(ps, ccfg, x_np, n_active=None):
    padded, _ = _pad_to_stride(np.asarray(x_np, dtype=np.float32)[None, None, :],
                               ccfg.total_stride)
    z = codec.encode(ps, ccfg, tt.tensor(padded))
    n = ccfg.n_stages if n_active is None else n_active
    q = codec.rvq(ps, ccfg, z, n_active=n)
    return serialize_codes(q.codes[0, :n], ccfg)


def decode_from_stream(ps, ccfg, stream):
    hdr, codes = deserialize_codes(stream)
    check_stream_compatible(hdr, ccfg)
    e = codec.lookup(ps, ccfg, codes[None], n_active=hdr.n_q_present)
    return codec.decode(ps, ccfg, tt.tensor(e)).data[0, 0].copy()


# ------------------------------------------------------------------- losses

def embedding_consistency_loss(e_tilde, z_ref):
    """Sum over sources of the (unreduced) L1 between masked embeddings and
    the encodings of the true stems."""
    if len(e_tilde) != len(z_ref):
        raise ValueError(f"{len(e_tilde)} estimates vs {len(z_ref)} references")
    total = None
    for et, zr in zip(e_tilde, z_ref):
        if et.shape != zr.shape:
            raise ValueError(f"shape mismatch {et.shape} vs {zr.shape}")
        term = tt.sum_all(tt.abs_(tt.sub(et, zr)))
        total = term if total is None else tt.add(total, term)
    return total


def mixture_reconstruct(ps, ccfg, mcfg, condcfg, x_np, prompts,
                        mask_override=None):
    """Sum the per-prompt separated latents and decode: the reconstruction
    diagnostic (and the training-loss mixture term)."""
    if not prompts:
        raise ValueError("mixture_reconstruct needs at least one prompt")
    padded, n = _pad_to_stride(np.asarray(x_np, dtype=np.float32)[None, None, :],
                               ccfg.total_stride)
    z = codec.encode(ps, ccfg, tt.tensor(padded))
    zsum = None
    for p in prompts:
        zt = separated_latents(ps, mcfg, condcfg, z, [p],
                               mask_override=mask_override)
        zsum = zt if zsum is None else tt.add(zsum, zt)
    return codec.decode(ps, ccfg, zsum).data[0, 0, :n].copy()
