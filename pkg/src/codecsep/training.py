"""SI-SDR objective, Adam with a plateau schedule, the two training stages
(codec, then frozen-codec masker), and the evaluation harness."""

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import codec, mixtures, pipeline
from . import conditioning as cond
from . import masker as mask_mod
from .numerics import ParameterStore
from .numerics import tensor as tt

CLAMP_DB = 60.0
LOSS_EPS = 1e-8
DEAD_CODE_STEPS = 100

# the text tower is trained jointly with the masker here, not frozen
REPORT_NOTE = "conditioning embedder trained jointly with the masker"


@dataclass
class TrainConfig:
    stage: str = "masker"
    total_steps: int = 2000
    batch_size: int = 4
    crop_s: float = 2.0
    lr: float = 1.5e-4
    val_interval: int = 500
    sched_factor: float = 0.5
    sched_patience: int = 2
    seed: int = 0
    granularity: str = "generic"

    def __post_init__(self):
        if self.stage not in ("codec", "masker"):
            raise ValueError(f"unknown training stage {self.stage!r}")
        if self.granularity not in mixtures.GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        if self.total_steps and self.total_steps % self.val_interval:
            raise ValueError("validation interval must divide total steps")
        if self.sched_patience < 1:
            raise ValueError("scheduler patience must be at least 1")


# ------------------------------------------------------------------- metric

def si_sdr(ref, est):
    """Scale-invariant SDR in dB, clamped to +-60."""
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    est = np.asarray(est, dtype=np.float64).reshape(-1)
    if ref.shape != est.shape or ref.size < 2:
        raise ValueError("signals must share a length of at least 2")
    ref = ref - ref.mean()
    est = est - est.mean()
    p_ref = float(np.dot(ref, ref))
    if p_ref == 0.0:
        raise ValueError("reference signal is constant")
    alpha = float(np.dot(est, ref)) / p_ref
    target = alpha * ref
    err = target - est
    p_t = float(np.dot(target, target))
    p_e = float(np.dot(err, err))
    if p_t == 0.0:
        return -CLAMP_DB        # estimate has no component along the reference
    if p_e == 0.0 or p_t / p_e >= 10.0 ** (CLAMP_DB / 10.0):
        return CLAMP_DB
    if p_t / p_e <= 10.0 ** (-CLAMP_DB / 10.0):
        return -CLAMP_DB
    return 10.0 * math.log10(p_t / p_e)


def smooth_neg_si_sdr(ref_np, est):
    """Differentiable -SI-SDR of a graph estimate against a fixed reference.

    Unclamped; epsilon in both power terms keeps the gradient defined when
    the error underflows."""
    ref = np.asarray(ref_np, dtype=np.float64).reshape(-1)
    ref = ref - ref.mean()
    p_ref = float(np.dot(ref, ref)) + LOSS_EPS
    ref_t = tt.tensor(ref.astype(est.data.dtype))
    est0 = tt.sub_mean_lastdim(est)
    alpha = tt.scale(tt.sum_all(tt.mul(est0, ref_t)), 1.0 / p_ref)
    target = tt.mul(alpha, ref_t)
    err = tt.sub(target, est0)
    num = tt.add_scalar(tt.sum_all(tt.square(target)), LOSS_EPS)
    den = tt.add_scalar(tt.sum_all(tt.square(err)), LOSS_EPS)
    return tt.scale(tt.log(tt.div(den, num)), 10.0 / math.log(10.0))


# --------------------------------------------------------------------- loss

def _row(y, b, n):
    return tt.reshape(tt.narrow(tt.narrow(y, 0, b, 1), 2, 0, n), (n,))


def separation_loss(ps, ccfg, mcfg, condcfg, batch, z=None,
                    mask_override=None):
    """Mean over examples of -sum_s SI-SDR(y_s, y~_s) - SI-SDR(x, x~),
    with x~ decoded from the summed masked latents.

    The codec is frozen: latents enter the graph as constants, so no
    gradient reaches the encoder; the decoder is traversed but not updated.
    """
    for ex in batch:
        missing = [s for s in mixtures.STEMS if s not in ex["stems"]]
        if missing:
            raise ValueError(f"batch example missing stems: {missing}")
    n = batch[0]["mixture"].size
    if z is None:
        xs = np.stack([ex["mixture"] for ex in batch]).astype(np.float32)
        padded, _ = pipeline._pad_to_stride(xs[:, None, :], ccfg.total_stride)
        z = codec.encode(ps, ccfg, tt.tensor(padded)).data
    zc = tt.tensor(np.asarray(z))
    total, z_sum = None, None
    for stem in mixtures.STEMS:
        if mcfg.variant == "unguided_k_mask":
            prompts = [stem] * len(batch)
        else:
            prompts = [ex["prompts"][stem] for ex in batch]
        zt = pipeline.separated_latents(ps, mcfg, condcfg, zc, prompts,
                                        mask_override=mask_override)
        z_sum = zt if z_sum is None else tt.add(z_sum, zt)
        y = codec.decode(ps, ccfg, zt)
        for b, ex in enumerate(batch):
            term = smooth_neg_si_sdr(ex["stems"][stem], _row(y, b, n))
            total = term if total is None else tt.add(total, term)
    x_hat = codec.decode(ps, ccfg, z_sum)
    for b, ex in enumerate(batch):
        total = tt.add(total,
                       smooth_neg_si_sdr(ex["mixture"], _row(x_hat, b, n)))
    return tt.scale(total, 1.0 / len(batch))


# ---------------------------------------------------------------- optimizer

def adam_step(ps, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    ps.step_count += 1
    t = ps.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in ps.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise RuntimeError(f"trainable parameter {name} has no gradient")
        m, v = ps.adam_state(name)
        m *= beta1
        m += (1.0 - beta1) * p.grad
        v *= beta2
        v += (1.0 - beta2) * np.square(p.grad)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def plateau_schedule(history, factor=0.5, patience=2, min_delta=1e-6):
    """Replay validation losses; return the cumulative lr multiplier."""
    mult, best, bad = 1.0, math.inf, 0
    for loss in history:
        if loss <= best - min_delta:
            best, bad = loss, 0
        else:
            bad += 1
            if bad >= patience:
                mult *= factor
                bad = 0
    return mult


# -------------------------------------------------------------------- data

def load_examples(manifest_path, split=None):
    root = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for rec in mixtures.load_manifest(manifest_path):
        if split is not None and rec["split"] != split:
            continue
        waves = {}
        for name, rel in rec["paths"].items():
            waves[name], _ = pipeline.read_wav(os.path.join(root, rel))
        out.append({"id": rec["id"], "seed": rec["seed"],
                    "mixture": waves["mixture"],
                    "stems": {k: waves[k] for k in mixtures.STEMS},
                    "prompts": rec["prompts"]})
    if not out:
        raise ValueError(f"no examples for split {split!r}")
    return out


def _crop(wave, n, rng):
    if wave.size < n:
        raise ValueError("example shorter than the training crop")
    if wave.size == n:
        return wave
    off = int(rng.integers(0, wave.size - n + 1))
    return wave[off:off + n]


# ----------------------------------------------------------- codec training

def _codec_eval_loss(ps, ccfg, waves):
    total = 0.0
    for x_np in waves:
        x = tt.tensor(x_np[None, None, :])
        z = codec.encode(ps, ccfg, x)
        q = codec.rvq(ps, ccfg, z)
        x_hat = codec.decode(ps, ccfg, q.e)
        loss, _ = codec.codec_loss(ccfg, x, x_hat, q)
        total += float(loss.data)
    return total / len(waves)


def train_codec(train_examples, val_examples, ccfg, tcfg, log_path=None):
    if tcfg.stage != "codec":
        raise ValueError("config stage must be 'codec'")
    rng = np.random.default_rng(tcfg.seed)
    ps = ParameterStore()
    codec.build_codec(ps, ccfg, rng)

    crop = int(round(tcfg.crop_s * ccfg.sample_rate))
    crop -= crop % ccfg.total_stride
    pool = [w for ex in train_examples
            for w in [ex["mixture"]] + [ex["stems"][s] for s in mixtures.STEMS]]
    val_waves = [_crop(ex["mixture"], crop, np.random.default_rng(ex["seed"]))
                 for ex in val_examples[:8]]

    idle = np.zeros((ccfg.n_stages, ccfg.codebook_size), dtype=np.int64)
    val_hist, log = [], []
    for step in range(1, tcfg.total_steps + 1):
        idx = rng.integers(0, len(pool), size=tcfg.batch_size)
        xb = np.stack([_crop(pool[i], crop, rng) for i in idx])[:, None, :]
        x = tt.tensor(xb)
        z = codec.encode(ps, ccfg, x)
        q = codec.rvq(ps, ccfg, z, rng=rng)
        x_hat = codec.decode(ps, ccfg, q.e)
        loss, _ = codec.codec_loss(ccfg, x, x_hat, q)
        ps.zero_grad()
        loss.backward()
        lr = tcfg.lr * plateau_schedule(val_hist, tcfg.sched_factor,
                                        tcfg.sched_patience)
        adam_step(ps, lr)
        codec.normalize_codebooks(ps, ccfg)
        codec.fit_gains(ps, ccfg, q)

        idle += 1
        for s in range(ccfg.n_stages):
            idle[s, np.unique(q.codes[:, s, :])] = 0
        for s, k in np.argwhere(idle >= DEAD_CODE_STEPS):
            proj = q.projected[s]
            b = int(rng.integers(0, proj.shape[0]))
            t = int(rng.integers(0, proj.shape[2]))
            codec.reseed_code(ps, ccfg, int(s), int(k), proj[b, :, t])
            idle[s, k] = 0

        row = {"step": step, "loss": float(loss.data), "lr": lr, "val": ""}
        if step % tcfg.val_interval == 0:
            val_hist.append(_codec_eval_loss(ps, ccfg, val_waves))
            row["val"] = val_hist[-1]
        log.append(row)
    if log_path:
        save_log(log_path, log)
    return ps, log


# ---------------------------------------------------------- masker training

def _cached_latents(ps, ccfg, examples, crop):
    z = {}
    for ex in examples:
        if ex["mixture"].size == crop:
            padded, _ = pipeline._pad_to_stride(
                ex["mixture"][None, None, :], ccfg.total_stride)
            z[ex["id"]] = codec.encode(ps, ccfg, tt.tensor(padded)).data[0]
    return z


def _batch_loss(ps, ccfg, mcfg, condcfg, batch, zcache, granularity):
    exb = [{"mixture": ex["mixture"], "stems": ex["stems"],
            "prompts": ex["prompts"][granularity]} for ex in batch]
    z = None
    if all(ex["id"] in zcache for ex in batch):
        z = np.stack([zcache[ex["id"]] for ex in batch])
    return separation_loss(ps, ccfg, mcfg, condcfg, exb, z=z)


def train_masker(ps, ccfg, mcfg, condcfg, train_examples, val_examples, tcfg,
                 log_path=None):
    """Frozen-codec stage: only masker.* and cond.* parameters move."""
    if tcfg.stage != "masker":
        raise ValueError("config stage must be 'masker'")
    if mcfg.latent_dim != ccfg.latent_dim:
        raise ValueError("masker latent width does not match the codec")
    rng = np.random.default_rng(tcfg.seed)
    codec_hash = ps.content_hash(pipeline.CODEC_PREFIXES)
    ps.set_trainable(False)
    ps.set_trainable(True, pipeline.MASKER_PREFIXES)
    if mcfg.variant == "unguided_k_mask":
        # fixed-stem heads never read prompts; a trainable but unreached
        # embedder would trip the missing-gradient check
        ps.set_trainable(False, ("cond.",))

    crop = int(round(tcfg.crop_s * ccfg.sample_rate))
    crop -= crop % ccfg.total_stride
    zcache = _cached_latents(ps, ccfg, train_examples, crop)
    val_batch = val_examples[:min(8, len(val_examples))]
    zval = _cached_latents(ps, ccfg, val_batch, crop)

    val_hist, log = [], []
    best, snapshot = math.inf, None
    for step in range(1, tcfg.total_steps + 1):
        idx = rng.integers(0, len(train_examples), size=tcfg.batch_size)
        batch = [train_examples[int(i)] for i in idx]
        loss = _batch_loss(ps, ccfg, mcfg, condcfg, batch, zcache,
                           tcfg.granularity)
        ps.zero_grad()
        loss.backward()
        lr = tcfg.lr * plateau_schedule(val_hist, tcfg.sched_factor,
                                        tcfg.sched_patience)
        adam_step(ps, lr)

        row = {"step": step, "loss": float(loss.data), "lr": lr, "val": ""}
        if step % tcfg.val_interval == 0:
            vloss = float(_batch_loss(ps, ccfg, mcfg, condcfg, val_batch,
                                      zval, tcfg.granularity).data)
            val_hist.append(vloss)
            row["val"] = vloss
            if vloss < best:
                best = vloss
                snapshot = {k: v.copy() for k, v in ps.state_arrays().items()
                            if k.startswith(pipeline.MASKER_PREFIXES)}
        log.append(row)
    if snapshot is not None:
        ps.load_state_arrays(snapshot, pipeline.MASKER_PREFIXES)
    if ps.content_hash(pipeline.CODEC_PREFIXES) != codec_hash:
        raise RuntimeError("codec parameters moved during masker training")
    if log_path:
        save_log(log_path, log)
    return ps, log


def save_log(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["step", "loss", "lr", "val"])
        w.writeheader()
        w.writerows(rows)


# --------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    per_stem: dict
    mixture_si_sdr: float
    count: int
    config_hash: str
    note: str = REPORT_NOTE

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("report needs at least one example")
        for stats in self.per_stem.values():
            if stats["si_sdr_std"] < 0 or stats["si_sdri_std"] < 0:
                raise ValueError("negative standard deviation")


def _stats(values):
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())


def config_digest(ccfg, mcfg, condcfg, granularity):
    blob = json.dumps([asdict(ccfg), asdict(mcfg), asdict(condcfg),
                       granularity], sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def evaluate(ps, ccfg, mcfg, condcfg, examples, granularity,
             mask_override=None, single_source=False, codes_path=False,
             stems=None):
    """Per-stem SI-SDR / SI-SDRi over a split, plus mixture reconstruction.

    single_source feeds each stem alone as the input (reconstruction
    diagnostic); codes_path routes separation through the bitstream; stems
    restricts the scored rows (the paraphrase protocol covers speech and
    music only) while mixture reconstruction always sums all three."""
    if not examples:
        raise ValueError("empty evaluation split")
    if stems is None:
        stems = mixtures.STEMS
    if any(s not in mixtures.STEMS for s in stems):
        raise ValueError(f"unknown stems in {stems}")
    per = {s: {"si_sdr": [], "si_sdri": []} for s in stems}
    mix_scores = []
    for ex in examples:
        prompts = ex["prompts"][granularity]
        for stem in stems:
            prompt = stem if mcfg.variant == "unguided_k_mask" \
                else prompts[stem]
            x_in = ex["stems"][stem] if single_source else ex["mixture"]
            if codes_path:
                stream = pipeline.encode_to_stream(ps, ccfg, x_in)
                y = pipeline.separate_codes(ps, ccfg, mcfg, condcfg, stream,
                                            prompt)
            else:
                y = pipeline.separate_continuous(ps, ccfg, mcfg, condcfg,
                                                 x_in, prompt,
                                                 mask_override=mask_override)
            ref = ex["stems"][stem]
            score = si_sdr(ref, y)
            per[stem]["si_sdr"].append(score)
            per[stem]["si_sdri"].append(score - si_sdr(ref, x_in))
        plist = [stem if mcfg.variant == "unguided_k_mask" else prompts[stem]
                 for stem in mixtures.STEMS]
        x_hat = pipeline.mixture_reconstruct(ps, ccfg, mcfg, condcfg,
                                             ex["mixture"], plist,
                                             mask_override=mask_override)
        mix_scores.append(si_sdr(ex["mixture"], x_hat))
    per_stem = {}
    for stem, cols in per.items():
        m1, s1 = _stats(cols["si_sdr"])
        m2, s2 = _stats(cols["si_sdri"])
        per_stem[stem] = {"si_sdr_mean": m1, "si_sdr_std": s1,
                          "si_sdri_mean": m2, "si_sdri_std": s2}
    return EvalReport(per_stem=per_stem, mixture_si_sdr=_stats(mix_scores)[0],
                      count=len(examples),
                      config_hash=config_digest(ccfg, mcfg, condcfg,
                                                granularity))


def report_json(report):
    return json.dumps({"note": report.note, "count": report.count,
                       "config_hash": report.config_hash,
                       "mixture_si_sdr": report.mixture_si_sdr,
                       "per_stem": report.per_stem}, indent=2)


def report_table(report):
    lines = [f"# {report.note}",
             f"examples: {report.count}   config: {report.config_hash}",
             f"{'stem':<8}{'SI-SDR':>12}{'SI-SDRi':>12}"]
    for stem, s in report.per_stem.items():
        lines.append(f"{stem:<8}{s['si_sdr_mean']:>7.2f} ± {s['si_sdr_std']:<4.2f}"
                     f"{s['si_sdri_mean']:>7.2f} ± {s['si_sdri_std']:<4.2f}")
    lines.append(f"mixture reconstruction SI-SDR: "
                 f"{report.mixture_si_sdr:.2f} dB")
    return "\n".join(lines)
