"""Run configuration: typed sections resolved from defaults, then an optional
config file, then command-line overrides, then the CODECSEP_SEED environment
variable. Files are line-based `section.key=value` so a snapshot can be
parsed back with no dependencies; every command writes its resolved snapshot
next to its outputs, and rebuilding from that snapshot reproduces the run.
"""

from dataclasses import dataclass, field, fields
import os

from . import training
from .codec import CodecConfig
from .conditioning import ConditioningConfig
from .masker import MaskerConfig

SEED_ENV = "CODECSEP_SEED"


@dataclass
class DataConfig:
    dir: str = "data"
    n_train: int = 60
    n_val: int = 12
    n_test: int = 12
    duration_s: float = 2.0
    sample_rate: int = 8000


@dataclass
class TrainSection:
    codec_steps: int = 3000
    masker_steps: int = 2500
    batch_size: int = 4
    crop_s: float = 2.0
    codec_lr: float = 5e-4
    masker_lr: float = 1.5e-4
    val_interval: int = 250
    sched_factor: float = 0.5
    sched_patience: int = 2
    granularity: str = "generic"

    def stage_config(self, stage, seed):
        steps = self.codec_steps if stage == "codec" else self.masker_steps
        lr = self.codec_lr if stage == "codec" else self.masker_lr
        return training.TrainConfig(
            stage=stage, total_steps=steps, batch_size=self.batch_size,
            crop_s=self.crop_s, lr=lr,
            val_interval=min(self.val_interval, steps) if steps else
            self.val_interval, sched_factor=self.sched_factor,
            sched_patience=self.sched_patience, seed=seed,
            granularity=self.granularity)


@dataclass
class ProfilerSection:
    duration_s: float = 2.0


_SECTIONS = (("data", DataConfig), ("codec", CodecConfig),
             ("cond", ConditioningConfig), ("masker", MaskerConfig),
             ("train", TrainSection), ("profiler", ProfilerSection))


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    cond: ConditioningConfig = field(default_factory=ConditioningConfig)
    masker: MaskerConfig = field(default_factory=MaskerConfig)
    train: TrainSection = field(default_factory=TrainSection)
    profiler: ProfilerSection = field(default_factory=ProfilerSection)


def _to_text(v):
    if isinstance(v, tuple):
        return ",".join(str(p) for p in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _from_text(text, template):
    if isinstance(template, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(template, tuple):
        return tuple(int(p) for p in text.split(",") if p.strip())
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    return text


def flatten(cfg: RunConfig):
    """RunConfig -> ordered {dotted key: text value}."""
    out = {"seed": _to_text(cfg.seed)}
    for name, _ in _SECTIONS:
        section = getattr(cfg, name)
        for f in fields(section):
            out[f"{name}.{f.name}"] = _to_text(getattr(section, f.name))
    return out


_TEMPLATES = flatten(RunConfig())


def build(flat) -> RunConfig:
    """Typed construction from a flat mapping; section constructors revalidate
    every field, so an inconsistent snapshot fails here, not mid-run."""
    kwargs = {"seed": int(flat["seed"])}
    for name, cls in _SECTIONS:
        defaults = cls()   # typed templates for coercion
        vals = {f.name: _from_text(flat[f"{name}.{f.name}"],
                                   getattr(defaults, f.name))
                for f in fields(cls)}
        kwargs[name] = cls(**vals)
    return RunConfig(**kwargs)


def parse_assignments(text, origin="<config>"):
    """Parse `key=value` lines; '#' lines and blanks are skipped."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{origin}:{lineno}: expected key=value, "
                             f"got {line!r}")
        key, _, value = line.partition("=")
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path=None, overrides=(), env=None) -> RunConfig:
    """defaults <- config file <- overrides <- CODECSEP_SEED, then build."""
    flat = dict(_TEMPLATES)

    def apply(key, value, origin):
        if key not in flat:
            raise ValueError(f"{origin}: unknown config key {key!r}")
        flat[key] = value

    if path is not None:
        with open(path) as f:
            for key, value in parse_assignments(f.read(), origin=str(path)):
                apply(key, value, str(path))
    for item in overrides:
        key, _, value = item.partition("=")
        if not _ or not key:
            raise ValueError(f"override must be key=value, got {item!r}")
        apply(key.strip(), value.strip(), "command line")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        flat["seed"] = env[SEED_ENV]
    return build(flat)


def serialize(cfg: RunConfig) -> str:
    lines = ["# resolved run configuration"]
    for key, value in flatten(cfg).items():
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def write_snapshot(cfg: RunConfig, path):
    with open(path, "w") as f:
        f.write(serialize(cfg))
    return path
