"""Command-line entry point: dataset generation, two-stage training,
separation over both inference paths, evaluation, and compute profiling.

Every command resolves one RunConfig (defaults <- --config file <- flags or
--set key=value <- CODECSEP_SEED) and writes the resolved snapshot next to
its outputs, so any artifact can be reproduced from the files beside it.

Exit statuses: 0 success; 2 usage or configuration error; 3 missing input or
refusing to overwrite; 4 corrupt or incompatible code stream; 5 unexpected
runtime failure.
"""

import argparse
import os
import sys

import numpy as np

from . import conditioning as cond
from . import config as cfgmod
from . import masker as mk
from . import mixtures, pipeline, profiler, training

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_STREAM = 4
EXIT_FAILURE = 5


def _resolve(args, mapping):
    """Config from file + generic --set overrides + per-command shortcuts."""
    overrides = list(getattr(args, "set", None) or [])
    for attr, key in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    return cfgmod.load_config(getattr(args, "config", None), overrides)


def _require_file(path, hint):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path} not found ({hint})")
    return path


# ------------------------------------------------------------------ commands

def cmd_gen_data(args):
    cfg = _resolve(args, {"out": "data.dir", "n_train": "data.n_train",
                          "n_val": "data.n_val", "n_test": "data.n_test",
                          "seed": "seed", "duration": "data.duration_s",
                          "rate": "data.sample_rate"})
    d = cfg.data
    manifest = mixtures.make_dataset(
        d.dir, d.n_train, d.n_val, d.n_test, base_seed=cfg.seed,
        duration_s=d.duration_s, sample_rate=d.sample_rate,
        overwrite=args.overwrite)
    cfgmod.write_snapshot(cfg, os.path.join(d.dir, "run.cfg"))
    total = d.n_train + d.n_val + d.n_test
    print(f"wrote {total} examples ({d.n_train} train / {d.n_val} val / "
          f"{d.n_test} test) to {d.dir}")
    print(f"manifest sha256 {mixtures.file_sha256(manifest)}")
    return EXIT_OK


def _manifest_path(cfg):
    return _require_file(os.path.join(cfg.data.dir, "manifest.jsonl"),
                         "run gen-data first")


def cmd_train(args):
    cfg = _resolve(args, {
        "data": "data.dir", "seed": "seed", "steps": f"train.{args.stage}_steps",
        "lr": f"train.{args.stage}_lr", "batch_size": "train.batch_size",
        "granularity": "train.granularity", "variant": "masker.variant"})
    manifest = _manifest_path(cfg)
    train_ex = training.load_examples(manifest, "train")
    val_ex = training.load_examples(manifest, "val")
    tcfg = cfg.train.stage_config(args.stage, cfg.seed)

    os.makedirs(args.out, exist_ok=True)
    ckpt = args.ckpt or os.path.join(args.out, f"{args.stage}.ckpt")
    stem = os.path.splitext(ckpt)[0]

    if args.stage == "codec":
        ps, log = training.train_codec(train_ex, val_ex, cfg.codec, tcfg,
                                       log_path=stem + "_log.csv")
        pipeline.save_codec_checkpoint(
            ckpt, ps, cfg.codec,
            meta={"steps": tcfg.total_steps, "seed": cfg.seed})
    else:
        codec_ckpt = args.codec_ckpt or os.path.join(args.out, "codec.ckpt")
        _require_file(codec_ckpt, "train the codec stage first")
        ps, ccfg, _ = pipeline.load_codec(codec_ckpt)
        cond.build_embedder(ps, cfg.cond, np.random.default_rng(cfg.seed))
        mk.build_masker(ps, cfg.masker, cfg.cond,
                        np.random.default_rng(cfg.seed + 1))
        ps, log = training.train_masker(ps, ccfg, cfg.masker, cfg.cond,
                                        train_ex, val_ex, tcfg,
                                        log_path=stem + "_log.csv")
        pipeline.save_masker_checkpoint(
            ckpt, ps, cfg.masker, cfg.cond,
            codec_hash=ps.content_hash(pipeline.CODEC_PREFIXES),
            meta={"steps": tcfg.total_steps, "seed": cfg.seed,
                  "granularity": tcfg.granularity})
    cfgmod.write_snapshot(cfg, stem + ".cfg")
    final = log[-1]["loss"] if log else float("nan")
    print(f"trained {args.stage} for {tcfg.total_steps} steps "
          f"(final loss {final:.4f})")
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def _load_separator(args):
    codec_ckpt = _require_file(args.codec_ckpt, "train codec first")
    masker_ckpt = _require_file(args.masker_ckpt, "train masker first")
    return pipeline.load_separator(codec_ckpt, masker_ckpt)


def cmd_separate(args):
    cfg = _resolve(args, {})
    path = _require_file(args.input, "input file")
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == b"RIFF":
        kind = "wav"
    elif magic == pipeline.MAGIC:
        kind = "stream"
    else:
        raise ValueError(f"{path}: neither a WAV (RIFF) nor a code stream "
                         f"({pipeline.MAGIC.decode()})")
    ps, ccfg, mcfg, condcfg, _ = _load_separator(args)

    ext = ".wav" if args.out == "wav" else ".csep"
    out_path = args.output or os.path.splitext(path)[0] + ".sep" + ext
    if kind == "wav":
        x, rate = pipeline.read_wav(path)
        if rate != ccfg.sample_rate:
            raise pipeline.IncompatibleStream(
                f"{path}: {rate} Hz input, codec expects {ccfg.sample_rate}")
        if args.out == "wav":
            y = pipeline.separate_continuous(ps, ccfg, mcfg, condcfg, x,
                                             args.prompt)
            pipeline.write_wav(out_path, y, ccfg.sample_rate)
        else:
            stream = pipeline.encode_to_stream(ps, ccfg, x)
            out = pipeline.separate_codes(ps, ccfg, mcfg, condcfg, stream,
                                          args.prompt, mode="codes")
            with open(out_path, "wb") as f:
                f.write(out)
    else:
        with open(path, "rb") as f:
            stream = f.read()
        mode = "waveform" if args.out == "wav" else "codes"
        out = pipeline.separate_codes(ps, ccfg, mcfg, condcfg, stream,
                                      args.prompt, mode=mode)
        if args.out == "wav":
            pipeline.write_wav(out_path, out, ccfg.sample_rate)
        else:
            with open(out_path, "wb") as f:
                f.write(out)
    cfgmod.write_snapshot(cfg, out_path + ".cfg")
    print(f"separated {kind} input -> {out_path} (prompt {args.prompt!r})")
    return EXIT_OK


def cmd_eval(args):
    cfg = _resolve(args, {"data": "data.dir",
                          "granularity": "train.granularity"})
    manifest = _manifest_path(cfg)
    examples = training.load_examples(manifest, args.split)
    ps, ccfg, mcfg, condcfg, _ = _load_separator(args)
    gran = cfg.train.granularity
    stems = None
    if gran == "paraphrase":
        # the paraphrase protocol swaps speech/music prompts only
        stems = tuple(s for s in mixtures.STEMS if s != "sfx")
    report = training.evaluate(ps, ccfg, mcfg, condcfg, examples, gran,
                               single_source=(args.mode == "reconstruction"),
                               codes_path=(args.path == "codes"), stems=stems)
    os.makedirs(args.out, exist_ok=True)
    tag = f"{args.mode}_{gran}_{args.path}"
    base = os.path.join(args.out, f"eval_{tag}")
    with open(base + ".json", "w") as f:
        f.write(training.report_json(report))
    table = training.report_table(report)
    with open(base + ".txt", "w") as f:
        f.write(table + "\n")
    cfgmod.write_snapshot(cfg, base + ".cfg")
    print(table)
    print(f"reports written to {base}.json / {base}.txt")
    return EXIT_OK


def cmd_profile(args):
    cfg = _resolve(args, {"duration": "profiler.duration_s"})
    out = []
    if args.repr_size:
        stft = profiler.repr_size("stft_complex", n_fft=1024,
                                  sample_rate=32000, hop=320, duration_s=1.0)
        latent = profiler.repr_size("nac_latent", latent_dim=64,
                                    sample_rate=16000, stride=320,
                                    duration_s=1.0)
        out.append("# working representation, 1 s of audio")
        out.append(f"stft_complex (N=1024, 32 kHz, hop 320): {stft}")
        out.append(f"nac_latent   (d=64, 16 kHz, stride 320): {latent}")
        out.append(f"ratio: {stft // latent}")
        print("\n".join(out))
        return EXIT_OK

    if args.paper_components:
        g = profiler.PUBLISHED_GMACS
        entries = [
            profiler.scenario_cost("code_stream", g["spectrogram"],
                                   enc=g["enc"], dec=g["dec"],
                                   domain="spectrogram"),
            profiler.scenario_cost("code_stream", g["codec"], domain="codec"),
            profiler.scenario_cost("audio_stream", g["codec"], enc=g["enc"],
                                   dec=g["dec"], domain="codec"),
            profiler.scenario_cost("audio_stream", g["spectrogram"],
                                   domain="spectrogram"),
            profiler.scenario_cost("architecture_only", g["codec"],
                                   domain="codec"),
            profiler.scenario_cost("architecture_only", g["spectrogram"],
                                   domain="spectrogram"),
        ]
        print("# published component GMACs")
        print(profiler.report_table(entries))
        if args.json:
            with open(args.json, "w") as f:
                f.write(profiler.report_json(entries))
            cfgmod.write_snapshot(cfg, args.json + ".cfg")
        return EXIT_OK

    mcfg, condcfg, ccfg = cfg.masker, cfg.cond, cfg.codec
    if args.checkpoint:
        _, meta = pipeline.load_checkpoint(_require_file(args.checkpoint,
                                                         "masker checkpoint"))
        if meta.get("kind") != "masker":
            raise ValueError(f"{args.checkpoint} is not a masker checkpoint")
        mcfg = mk.MaskerConfig(**meta["masker_config"])
        condcfg = cond.ConditioningConfig(**meta["cond_config"])
    n = int(round(cfg.profiler.duration_s * ccfg.sample_rate))
    n -= n % ccfg.total_stride
    frames = ccfg.frames(n)
    models = [profiler.macs_model("codec_encoder", n, codec=ccfg),
              profiler.macs_model("masker", frames, masker=mcfg),
              profiler.macs_model("codec_decoder", frames, codec=ccfg)]
    if mcfg.variant != "unguided_k_mask":
        models.append(profiler.macs_model("query", 1, masker=mcfg,
                                          conditioning=condcfg))
    enc, sep, dec = (m.total for m in models[:3])
    entries = [profiler.scenario_cost("code_stream", sep, domain="codec"),
               profiler.scenario_cost("audio_stream", sep, enc=enc, dec=dec,
                                      domain="codec"),
               profiler.scenario_cost("architecture_only", sep,
                                      domain="codec")]
    print(f"# desk models, {cfg.profiler.duration_s} s at "
          f"{ccfg.sample_rate} Hz (MACs)")
    print(profiler.report_table(entries, models=models))
    if args.json:
        with open(args.json, "w") as f:
            f.write(profiler.report_json(entries, models=models))
        cfgmod.write_snapshot(cfg, args.json + ".cfg")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _common(sub):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one config key (repeatable)")


def build_parser():
    p = argparse.ArgumentParser(
        prog="codecsep",
        description="text-conditioned source separation in codec latent space")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a mixture dataset")
    _common(g)
    g.add_argument("--out")
    g.add_argument("--n-train", type=int, dest="n_train")
    g.add_argument("--n-val", type=int, dest="n_val")
    g.add_argument("--n-test", type=int, dest="n_test")
    g.add_argument("--seed", type=int)
    g.add_argument("--duration", type=float)
    g.add_argument("--rate", type=int)
    g.add_argument("--overwrite", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one stage")
    _common(t)
    t.add_argument("stage", choices=("codec", "masker"))
    t.add_argument("--data")
    t.add_argument("--out", default="runs")
    t.add_argument("--ckpt", help="checkpoint path (default <out>/<stage>.ckpt)")
    t.add_argument("--codec-ckpt", dest="codec_ckpt",
                   help="frozen codec for the masker stage")
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--seed", type=int)
    t.add_argument("--granularity", choices=mixtures.GRANULARITIES)
    t.add_argument("--variant", choices=mk.VARIANTS)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("separate", help="separate one input file")
    _common(s)
    s.add_argument("input", help="WAV or .csep code stream (auto-detected)")
    s.add_argument("--prompt", required=True)
    s.add_argument("--out", choices=("wav", "codes"), default="wav")
    s.add_argument("--output", help="output path")
    s.add_argument("--codec-ckpt", dest="codec_ckpt",
                   default="runs/codec.ckpt")
    s.add_argument("--masker-ckpt", dest="masker_ckpt",
                   default="runs/masker.ckpt")
    s.set_defaults(func=cmd_separate)

    e = sub.add_parser("eval", help="score a split")
    _common(e)
    e.add_argument("--data")
    e.add_argument("--split", default="test")
    e.add_argument("--granularity", choices=mixtures.GRANULARITIES)
    e.add_argument("--mode", choices=("separation", "reconstruction"),
                   default="separation")
    e.add_argument("--path", choices=("continuous", "codes"),
                   default="continuous")
    e.add_argument("--codec-ckpt", dest="codec_ckpt",
                   default="runs/codec.ckpt")
    e.add_argument("--masker-ckpt", dest="masker_ckpt",
                   default="runs/masker.ckpt")
    e.add_argument("--out", default="runs")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("profile", help="analytic MAC counts and scenarios")
    _common(f)
    f.add_argument("--paper-components", action="store_true",
                   dest="paper_components",
                   help="scenario table from the published component GMACs")
    f.add_argument("--repr-size", action="store_true", dest="repr_size",
                   help="working-representation sizes")
    f.add_argument("--checkpoint", help="profile a trained masker checkpoint")
    f.add_argument("--duration", type=float)
    f.add_argument("--json", help="also write the report as JSON here")
    f.set_defaults(func=cmd_profile)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if not e.code else EXIT_USAGE
    try:
        return args.func(args)
    except (pipeline.CorruptStream, pipeline.IncompatibleStream) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STREAM
    except (FileNotFoundError, FileExistsError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:   # anything else is a real failure, named
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
