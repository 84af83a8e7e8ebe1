"""Analytic compute model: closed-form MAC counts per layer, per model, and
per deployment scenario, plus working-representation sizes.

Convention: MACs count multiplies only. Additions, activations, normalization,
softmax, and masking contribute zero; this matches the multiplication counter
instrumented into the dense kernels, so analytic totals can be checked against
instrumented runs exactly. Published component costs for the reference systems
are accepted as external inputs to the scenario arithmetic; our own models
report their actual desk-scale counts alongside.

The conditioning query network is itemized as its own model rather than folded
into the masker total, since it runs once per prompt, not per frame.
"""

from dataclasses import dataclass, field
from fractions import Fraction
import json
import math

from . import masker as mk

CONVENTION = ("MACs count multiplies only; additions, activations, and "
              "normalization are excluded")

# published reference component costs in GMACs: codec encode/decode, the
# spectrogram-domain separator, and the codec-latent masker
PUBLISHED_GMACS = {"enc": 12.28, "dec": 27.82, "spectrogram": 33.5,
                   "codec": 1.35}

SCENARIOS = ("audio_stream", "code_stream", "architecture_only")
DOMAINS = ("codec", "spectrogram")
REPR_DOMAINS = ("stft_complex", "nac_latent")


@dataclass
class LayerCost:
    name: str
    kind: str
    shape: dict
    macs: int
    activations: int


@dataclass
class ModelCost:
    model: str
    length: int
    layers: list
    total: int = field(init=False)

    def __post_init__(self):
        self.total = sum(l.macs for l in self.layers)


@dataclass
class ScenarioCost:
    scenario: str
    domain: str
    enc: float
    dec: float
    separator: float
    total: float

    @property
    def components(self):
        return {"enc": self.enc, "dec": self.dec, "separator": self.separator}


def _need(desc, *keys):
    vals = []
    for k in keys:
        if k not in desc:
            raise ValueError(f"layer descriptor missing {k!r}: {desc}")
        v = desc[k]
        if not isinstance(v, int) or v <= 0:
            raise ValueError(f"layer field {k!r} must be a positive int, "
                             f"got {v!r}")
        vals.append(v)
    return vals


def macs_layer(desc) -> int:
    """Exact multiply count for one layer invocation at batch 1.

    Descriptor kinds: conv1d (c_in, c_out, k, t_out), conv_transpose1d
    (c_in, c_out, k, t_in), linear (d_in, d_out, t), attention
    (d, heads, t, mlp_hidden; one full pre-norm block including its MLP),
    elementwise (always 0).
    """
    kind = desc.get("kind")
    if kind == "conv1d":
        ci, co, k, t = _need(desc, "c_in", "c_out", "k", "t_out")
        return ci * co * k * t
    if kind == "conv_transpose1d":
        # the column-gather GEMM runs over input frames, not output frames
        ci, co, k, t = _need(desc, "c_in", "c_out", "k", "t_in")
        return ci * co * k * t
    if kind == "linear":
        di, do, t = _need(desc, "d_in", "d_out", "t")
        return di * do * t
    if kind == "attention":
        d, heads, t = _need(desc, "d", "heads", "t")
        if d % heads:
            raise ValueError(f"attention width {d} not divisible by {heads}")
        hidden = desc.get("mlp_hidden", 2 * d)
        qkv = 3 * d * d * t
        out = d * d * t
        scores = 2 * heads * (d // heads) * t * t
        mlp = d * hidden * t + hidden * d * t
        return qkv + out + scores + mlp
    if kind == "elementwise":
        return 0
    raise ValueError(f"unsupported layer kind {kind!r}")


def _conv_row(name, ci, co, k, t_out):
    desc = {"kind": "conv1d", "c_in": ci, "c_out": co, "k": k, "t_out": t_out}
    return LayerCost(name, "conv1d", desc, macs_layer(desc), co * t_out)


def _tconv_row(name, ci, co, k, t_in, t_out):
    desc = {"kind": "conv_transpose1d", "c_in": ci, "c_out": co, "k": k,
            "t_in": t_in}
    return LayerCost(name, "conv_transpose1d", desc, macs_layer(desc),
                     co * t_out)


def _encoder_rows(ccfg, n_samples):
    if n_samples % ccfg.total_stride:
        raise ValueError(f"length {n_samples} not a multiple of the stride "
                         f"product {ccfg.total_stride}")
    rows = [_conv_row("enc.in", 1, ccfg.channels[0], 7, n_samples)]
    t = n_samples
    for i, ((ci, co), s) in enumerate(zip(ccfg.block_channels(), ccfg.strides)):
        rows.append(_conv_row(f"enc.b{i}.ru1", ci, ci, 5, t))
        rows.append(_conv_row(f"enc.b{i}.ru2", ci, ci, 1, t))
        t //= s
        rows.append(_conv_row(f"enc.b{i}.down", ci, co, 2 * s, t))
    d = ccfg.latent_dim
    rows.append(_conv_row("enc.out", d, d, 3, t))
    return rows


def _decoder_rows(ccfg, frames):
    d = ccfg.latent_dim
    rows = [_conv_row("dec.in", d, d, 3, frames)]
    t = frames
    pairs = list(reversed([(co, ci) for (ci, co) in ccfg.block_channels()]))
    for i, ((ci, co), s) in enumerate(zip(pairs, reversed(ccfg.strides))):
        rows.append(_tconv_row(f"dec.b{i}.up", ci, co, 2 * s, t, t * s))
        t *= s
        rows.append(_conv_row(f"dec.b{i}.ru1", co, co, 5, t))
        rows.append(_conv_row(f"dec.b{i}.ru2", co, co, 1, t))
    rows.append(_conv_row("dec.out", ccfg.channels[0], 1, 7, t))
    return rows


def _masker_rows(mcfg, frames):
    if mcfg.variant == "film_on_encoder":
        # no trunk: one FiLM applied straight to the latent
        return [LayerCost("film", "elementwise", {"kind": "elementwise"}, 0,
                          mcfg.latent_dim * frames)]
    d, dm = mcfg.latent_dim, mcfg.width
    rows = [_conv_row("in_proj", d, dm, 1, frames)]
    for i in range(mcfg.layers):
        desc = {"kind": "attention", "d": dm, "heads": mcfg.heads, "t": frames,
                "mlp_hidden": 2 * dm}
        rows.append(LayerCost(f"blk{i}", "attention", desc, macs_layer(desc),
                              dm * frames))
    if mcfg.variant == "unguided_k_mask":
        for k in range(mcfg.k_stems):
            rows.append(_conv_row(f"head{k}", dm, d, 1, frames))
    else:
        rows.append(_conv_row("head", dm, d, 1, frames))
        rows.append(LayerCost("film", "elementwise", {"kind": "elementwise"},
                              0, (mcfg.layers - 2) * dm * frames))
    return rows


def _query_rows(mcfg, condcfg):
    if mcfg.variant == "unguided_k_mask":
        raise ValueError("variant 'unguided_k_mask' has no query network")
    if mcfg.variant == "film_on_encoder":
        hidden, out = mk.FILM_ON_ENCODER_HIDDEN, 2 * mcfg.latent_dim
    else:
        hidden, out = condcfg.query_hidden, (mcfg.layers - 2) * 2 * mcfg.width
    rows = []
    for name, di, do in (("w1", condcfg.embed_dim, hidden),
                         ("w2", hidden, out)):
        desc = {"kind": "linear", "d_in": di, "d_out": do, "t": 1}
        rows.append(LayerCost(f"query.{name}", "linear", desc,
                              macs_layer(desc), do))
    return rows


def macs_model(model, length, codec=None, masker=None,
               conditioning=None) -> ModelCost:
    """Per-layer breakdown for one forward pass; the breakdown sums to the
    total exactly in integer arithmetic.

    model: codec_encoder (length = samples), codec_decoder (length = frames),
    masker (length = frames), query (per prompt; length ignored).
    """
    if model == "codec_encoder":
        rows = _encoder_rows(codec, length)
    elif model == "codec_decoder":
        rows = _decoder_rows(codec, length)
    elif model == "masker":
        rows = _masker_rows(masker, length)
    elif model == "query":
        rows = _query_rows(masker, conditioning)
        length = 1
    else:
        raise ValueError(f"unknown model {model!r}")
    return ModelCost(model, length, rows)


def scenario_cost(scenario, separator, enc=0.0, dec=0.0,
                  domain="codec") -> ScenarioCost:
    """Compose component costs for a deployment scenario.

    code_stream: a codec-domain separator masks the incoming codes directly
    (enc/dec never run); a spectrogram separator must decode, separate, and
    re-encode. audio_stream: the codec-domain path pays enc + separator + dec;
    the spectrogram path is just the separator. architecture_only: separator.
    Decimal inputs compose exactly (no float drift).
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    for label, v in (("separator", separator), ("enc", enc), ("dec", dec)):
        if v < 0:
            raise ValueError(f"negative {label} cost: {v}")
    f_enc, f_dec, f_sep = (Fraction(str(v)) for v in (enc, dec, separator))
    if scenario == "code_stream":
        total = f_sep if domain == "codec" else f_dec + f_sep + f_enc
    elif scenario == "audio_stream":
        total = f_enc + f_sep + f_dec if domain == "codec" else f_sep
    else:
        total = f_sep
    if all(isinstance(v, int) for v in (enc, dec, separator)):
        total = int(total)     # raw MAC counts stay integers
    else:
        total = float(total)
    return ScenarioCost(scenario, domain, enc, dec, separator, total)


def repr_size(domain, **params) -> int:
    """Scalar count of the working representation for `duration_s` of audio.

    stft_complex: 2*n_fft real scalars per frame (Re+Im) over
    round(sample_rate*duration_s/hop) frames. nac_latent: latent_dim per
    frame over ceil(sample_rate*duration_s/stride) frames.
    """
    if domain not in REPR_DOMAINS:
        raise ValueError(f"unknown representation domain {domain!r}")
    for k, v in params.items():
        if v <= 0:
            raise ValueError(f"repr_size parameter {k!r} must be positive, "
                             f"got {v!r}")
    dur = params["duration_s"]
    rate = params["sample_rate"]
    if domain == "stft_complex":
        t_spec = int(round(rate * dur / params["hop"]))
        return 2 * params["n_fft"] * t_spec
    t = math.ceil(rate * dur / params["stride"])
    return params["latent_dim"] * t


# ------------------------------------------------------------------- reports

def _entry_pair(entry):
    if isinstance(entry, ScenarioCost):
        return entry, None
    sc, model = entry
    return sc, model


def report_dict(entries, models=()):
    """entries: ScenarioCost or (ScenarioCost, ModelCost) pairs; models:
    extra ModelCost breakdowns to append (e.g. the query network)."""
    scenarios = []
    for entry in entries:
        sc, model = _entry_pair(entry)
        scenarios.append({
            "scenario": sc.scenario,
            "domain": sc.domain,
            "components": sc.components,
            "total": sc.total,
            "breakdown": [] if model is None else _model_dict(model)["layers"],
        })
    doc = {"convention": CONVENTION, "scenarios": scenarios}
    if models:
        doc["models"] = [_model_dict(m) for m in models]
    return doc


def _model_dict(mc: ModelCost):
    return {"model": mc.model, "length": mc.length, "total": mc.total,
            "layers": [{"name": l.name, "kind": l.kind, "macs": l.macs,
                        "activations": l.activations} for l in mc.layers]}


def report_json(entries, models=()) -> str:
    return json.dumps(report_dict(entries, models), indent=2)


def _table(header, rows):
    widths = [max(len(str(r[i])) for r in [header] + rows)
              for i in range(len(header))]
    # text columns read left-aligned, numeric ones right-aligned
    left = [all(isinstance(r[i], str) for r in rows)
            for i in range(len(header))]
    def fmt(row):
        return "  ".join(str(c).ljust(w) if lj else str(c).rjust(w)
                         for c, w, lj in zip(row, widths, left)).rstrip()
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), rule] + [fmt(r) for r in rows])


def report_table(entries, models=()) -> str:
    lines = [f"# {CONVENTION}", ""]
    rows = []
    for entry in entries:
        sc, _ = _entry_pair(entry)
        rows.append([f"{sc.scenario}/{sc.domain}", sc.enc, sc.dec,
                     sc.separator, sc.total])
    lines.append(_table(["scenario", "enc", "dec", "separator", "total"],
                        rows))
    for mc in models:
        lines += ["", f"## {mc.model} (length {mc.length})"]
        lrows = [[l.name, l.kind, l.macs, l.activations] for l in mc.layers]
        lrows.append(["total", "", mc.total, ""])
        lines.append(_table(["layer", "kind", "macs", "activations"], lrows))
    return "\n".join(lines)
