"""Synthetic 3-stem mixture benchmark.

Speech-like, music-like, and SFX stems with per-stem loudness targets,
mixture-level normalization, and prompts at three granularities.  Every
example is a pure function of its seed, so the whole dataset regenerates
bit-exact from the manifest.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import pipeline

STEMS = ("music", "speech", "sfx")

# class label -> parent category
SFX_TAXONOMY = {
    "burst": "Noise",
    "chirp": "Alarm",
    "clicks": "Impact",
    "rumble": "Engine",
}

SPEECH_PARAPHRASES = ("spoken voice", "human conversation", "people talking")
MUSIC_PARAPHRASES = ("instrumental music", "band playing",
                     "melody with instruments")
GRANULARITIES = ("generic", "universal", "paraphrase")

TARGETS_DB = {"speech": -17.0, "music": -24.0, "sfx": -21.0}
MIX_DB = -27.0
JITTER_DB = 2.0

_KIND_ID = {"music": 1, "speech": 2, "sfx": 3}
_SPLIT_OFFSETS = {"train": 0, "val": 1_000_000, "test": 2_000_000}


def _rms_db(x):
    rms = math.sqrt(float(np.mean(np.square(x))))
    if rms <= 0.0:
        return -math.inf
    return 20.0 * math.log10(rms)


def _stem_rng(kind, seed, attempt=0):
    return np.random.default_rng([seed, _KIND_ID[kind], attempt])


def _ramped_gate(n, start, stop, fs):
    """Multiplicative mask that is exactly zero on [start, stop) with 5 ms
    cosine ramps just outside."""
    gate = np.ones(n)
    ramp = max(1, int(0.005 * fs))
    a, b = int(start * fs), int(stop * fs)
    lo, hi = max(0, a - ramp), min(n, b + ramp)
    gate[a:b] = 0.0
    t = np.arange(a - lo)
    gate[lo:a] = 0.5 * (1.0 + np.cos(np.pi * t / max(1, a - lo)))
    t = np.arange(hi - b)
    gate[b:hi] = 0.5 * (1.0 - np.cos(np.pi * t / max(1, hi - b)))
    return gate


def _synth_speech(rng, n, fs):
    # f0 random walk in 10 ms blocks, clipped to a speech-like range
    block = max(1, fs // 100)
    n_blocks = n // block + 2
    f0 = np.empty(n_blocks)
    f0[0] = rng.uniform(100.0, 200.0)
    steps = rng.normal(0.0, 3.0, n_blocks - 1)
    for i in range(1, n_blocks):
        f0[i] = min(250.0, max(80.0, f0[i - 1] + steps[i - 1]))
    f0_s = np.interp(np.arange(n), np.arange(n_blocks) * block, f0)
    phase = np.cumsum(2.0 * np.pi * f0_s / fs)
    x = np.zeros(n)
    for h in range(1, 6):
        x += (1.0 / h) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    t = np.arange(n) / fs
    rate = rng.uniform(3.0, 6.0)
    env = 0.5 * (1.0 + np.sin(2.0 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    x *= 0.15 + 0.85 * env

    # force one clean pause (>100 ms of exact silence) per started 5 s span
    dur = n / fs
    for k in range(max(1, math.ceil(dur / 5.0))):
        span_lo, span_hi = 5.0 * k, min(dur, 5.0 * (k + 1))
        width = rng.uniform(0.15, 0.25)
        margin = 0.1
        lo = span_lo + margin
        hi = max(lo, span_hi - margin - width)
        start = rng.uniform(lo, hi)
        x *= _ramped_gate(n, start, start + width, fs)
    return x


def _synth_music(rng, n, fs):
    t = np.arange(n) / fs
    root = rng.uniform(110.0, 220.0)
    x = np.zeros(n)
    for ratio in (1.0, 1.25, 1.5):                      # major triad
        f = root * ratio
        vib = 1.0 + rng.uniform(0.003, 0.008) * np.sin(
            2.0 * np.pi * rng.uniform(4.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
        phase = np.cumsum(2.0 * np.pi * f * vib / fs)
        for h in (1, 2, 3):
            x += (0.6 / h) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    attack = min(n, int(0.15 * fs))
    release = min(n, int(0.2 * fs))
    env = np.ones(n)
    env[:attack] = 0.5 * (1.0 - np.cos(np.pi * np.arange(attack) / attack))
    env[n - release:] *= 0.5 * (1.0 + np.cos(
        np.pi * np.arange(release) / release))
    sway = 1.0 + 0.2 * np.sin(2.0 * np.pi * rng.uniform(0.2, 0.5) * t
                              + rng.uniform(0, 2 * np.pi))
    return x * env * sway


def _sfx_event(rng, cls, fs, max_len_s):
    if cls == "burst":
        m = int(min(rng.uniform(0.08, 0.3), max_len_s) * fs)
        w = rng.standard_normal(m) * np.hanning(m)
    elif cls == "chirp":
        m = int(min(rng.uniform(0.2, 0.6), max_len_s) * fs)
        f = np.linspace(rng.uniform(300.0, 800.0),
                        rng.uniform(1200.0, 3000.0), m)
        w = np.sin(np.cumsum(2.0 * np.pi * f / fs)) * np.hanning(m)
    elif cls == "clicks":
        m = int(min(rng.uniform(0.3, 0.8), max_len_s) * fs)
        w = np.zeros(m)
        step = int(fs / rng.uniform(8.0, 15.0))
        click = rng.standard_normal(int(0.003 * fs))
        click *= np.exp(-np.arange(click.size) / (0.001 * fs))
        for pos in range(0, m - click.size, step):
            w[pos:pos + click.size] += click
    else:                                               # rumble
        m = int(min(rng.uniform(0.3, 0.9), max_len_s) * fs)
        noise = rng.standard_normal(m)
        alpha = math.exp(-2.0 * np.pi * rng.uniform(60.0, 120.0) / fs)
        w = np.empty(m)
        acc = 0.0
        for i in range(m):
            acc = alpha * acc + (1.0 - alpha) * noise[i]
            w[i] = acc
        w *= 40.0 * np.hanning(m)                       # lowpass loses energy
    return w


def _synth_sfx(rng, n, fs):
    dur = n / fs
    x = np.zeros(n)
    events = []
    classes = sorted(SFX_TAXONOMY)
    for _ in range(int(rng.integers(1, 5))):
        cls = classes[int(rng.integers(0, len(classes)))]
        w = _sfx_event(rng, cls, fs, 0.6 * dur) * rng.uniform(0.4, 1.0)
        onset = int(rng.uniform(0.0, dur - w.size / fs - 0.01) * fs)
        x[onset:onset + w.size] += w
        events.append((cls, SFX_TAXONOMY[cls]))
    return x, events


def _synth(kind, rng, n, fs):
    if kind == "speech":
        return _synth_speech(rng, n, fs), None
    if kind == "music":
        return _synth_music(rng, n, fs), None
    return _synth_sfx(rng, n, fs)


def synth_stem(kind, seed, duration_s=2.0, sample_rate=8000):
    if kind not in STEMS:
        raise ValueError(f"unknown stem kind {kind!r}")
    if duration_s < 0.5:
        raise ValueError("duration must be at least 0.5 s")
    n = int(round(duration_s * sample_rate))
    wave, _ = _synth(kind, _stem_rng(kind, seed), n, sample_rate)
    return wave


@dataclass
class MixtureExample:
    seed: int
    sample_rate: int
    mixture: np.ndarray
    stems: dict
    events: list
    gains_db: dict
    prompts: dict


def make_mixture(seed, duration_s=2.0, sample_rate=8000):
    """Mixture = exact int16 sum of int16-quantized stems, so additivity
    survives WAV storage bit-for-bit."""
    if duration_s < 0.5:
        raise ValueError("duration must be at least 0.5 s")
    n = int(round(duration_s * sample_rate))
    jrng = np.random.default_rng([seed, 7])
    jitter = {s: float(jrng.uniform(-JITTER_DB, JITTER_DB)) for s in STEMS}
    mix_jitter = float(jrng.uniform(-JITTER_DB, JITTER_DB))

    raw, events = {}, []
    for kind in STEMS:
        for attempt in range(5):
            wave, ev = _synth(kind, _stem_rng(kind, seed, attempt),
                              n, sample_rate)
            if _rms_db(wave) > -math.inf:
                break
        else:
            raise RuntimeError(f"silent {kind} stem after 5 attempts")
        raw[kind] = wave
        if ev is not None:
            events = ev

    scaled = {}
    for kind in STEMS:
        tgt = TARGETS_DB[kind] + jitter[kind]
        scaled[kind] = raw[kind] * 10.0 ** ((tgt - _rms_db(raw[kind])) / 20.0)
    premix = sum(scaled.values())
    delta_db = (MIX_DB + mix_jitter) - _rms_db(premix)
    gain = 10.0 ** (delta_db / 20.0)

    # headroom guard: the int16 stem sum must not overflow
    peak = float(np.max(np.abs(premix))) * gain
    if peak * 32768.0 > 32000.0:
        extra = 32000.0 / (peak * 32768.0)
        gain *= extra
        delta_db += 20.0 * math.log10(extra)

    stems_q, gains_db = {}, {}
    for kind in STEMS:
        y = scaled[kind] * gain
        q = np.clip(np.rint(y * 32768.0), -32768, 32767).astype(np.int64)
        stems_q[kind] = q
        gains_db[kind] = TARGETS_DB[kind] + jitter[kind] + delta_db
    mix_q = stems_q["music"] + stems_q["speech"] + stems_q["sfx"]
    if np.max(np.abs(mix_q)) > 32767:
        raise RuntimeError("mixture overflow despite headroom guard")

    stems = {k: (q / 32768.0).astype(np.float32) for k, q in stems_q.items()}
    mixture = (mix_q / 32768.0).astype(np.float32)
    for kind in STEMS:
        if abs(_rms_db(stems[kind]) - gains_db[kind]) > 0.1:
            raise RuntimeError(f"{kind} stem missed its loudness target")

    ex = MixtureExample(seed=seed, sample_rate=sample_rate, mixture=mixture,
                        stems=stems, events=events, gains_db=gains_db,
                        prompts={})
    ex.prompts = {g: make_prompts(ex, g) for g in GRANULARITIES}
    return ex


def make_prompts(ex, granularity):
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown granularity {granularity!r}")
    if granularity == "generic":
        return {"music": "music", "speech": "speech", "sfx": "sfx"}
    sfx = ", ".join(f"{cls}, {parent}" for cls, parent in ex.events)
    if granularity == "universal":
        return {"music": "music", "speech": "speech", "sfx": sfx}
    prng = np.random.default_rng([ex.seed, 11])
    return {"music": MUSIC_PARAPHRASES[int(prng.integers(0, 3))],
            "speech": SPEECH_PARAPHRASES[int(prng.integers(0, 3))],
            "sfx": sfx}


def _write_example(ex, out_dir, split, idx):
    eid = f"{split}_{idx:05d}"
    paths = {}
    for name, wave in [("mixture", ex.mixture)] + sorted(ex.stems.items()):
        rel = os.path.join(split, f"{eid}_{name}.wav")
        pipeline.write_wav(os.path.join(out_dir, rel), wave, ex.sample_rate)
        paths[name] = rel
    return {"id": eid, "split": split, "seed": ex.seed,
            "sample_rate": ex.sample_rate,
            "n_samples": int(ex.mixture.size),
            "paths": paths, "gains_db": ex.gains_db,
            "events": [list(e) for e in ex.events], "prompts": ex.prompts}


def make_dataset(out_dir, n_train, n_val, n_test, base_seed=0,
                 duration_s=2.0, sample_rate=8000, overwrite=False):
    counts = {"train": n_train, "val": n_val, "test": n_test}
    if min(counts.values()) < 1:
        raise ValueError("each split needs at least one example")
    if max(counts.values()) > 1_000_000:
        raise ValueError("split too large for disjoint seed ranges")
    manifest = os.path.join(out_dir, "manifest.jsonl")
    if os.path.exists(manifest) and not overwrite:
        raise FileExistsError(f"{manifest} exists (pass overwrite to replace)")
    os.makedirs(out_dir, exist_ok=True)
    for split in counts:
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
    records = []
    for split, count in counts.items():
        for i in range(count):
            seed = base_seed + _SPLIT_OFFSETS[split] + i
            ex = make_mixture(seed, duration_s, sample_rate)
            records.append(_write_example(ex, out_dir, split, i))
    with open(manifest, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return manifest


def load_manifest(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def regenerate_example(record):
    """Rebuild an example from its manifest record alone."""
    dur = record["n_samples"] / record["sample_rate"]
    return make_mixture(record["seed"], dur, record["sample_rate"])
