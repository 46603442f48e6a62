"""Training configuration: INI file with sections, env-var overrides.

Every key maps to one :class:`TrainConfig` field; the section a key appears
in must be the field's section.  ``GUIDEDFLOW_<KEY>`` environment variables
override file values (e.g. ``GUIDEDFLOW_LR=3e-4``).
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional

from guidedflow.losses import LossConfig, LossWeights, PYRAMID_MODES
from guidedflow.model import ModelConfig, SGU_MODES

ENV_PREFIX = "GUIDEDFLOW_"


class ConfigError(ValueError):
    pass


def _meta(section):
    return {"section": section}


@dataclass
class TrainConfig:
    # model
    depth: int = field(default=4, metadata=_meta("model"))
    feat_channels: int = field(default=32, metadata=_meta("model"))
    max_disp: int = field(default=4, metadata=_meta("model"))
    sgu_mode: str = field(default="sgu", metadata=_meta("model"))
    finest_scale: int = field(default=2, metadata=_meta("model"))
    # loss
    loss_mode: str = field(default="pdl", metadata=_meta("loss"))
    lambda_d: float = field(default=0.01, metadata=_meta("loss"))
    lambda_s: float = field(default=0.05, metadata=_meta("loss"))
    lambda_c: float = field(default=1.0, metadata=_meta("loss"))
    lambda_a: float = field(default=0.5, metadata=_meta("loss"))
    lambda_b: float = field(default=1.0, metadata=_meta("loss"))
    q: float = field(default=0.4, metadata=_meta("loss"))
    eps: float = field(default=0.01, metadata=_meta("loss"))
    alpha1: float = field(default=0.01, metadata=_meta("loss"))
    alpha2: float = field(default=0.5, metadata=_meta("loss"))
    pdl_normalize: bool = field(default=True, metadata=_meta("loss"))
    pdl_use_occ: bool = field(default=True, metadata=_meta("loss"))
    pul_weight: float = field(default=0.01, metadata=_meta("loss"))
    smooth_order: int = field(default=1, metadata=_meta("loss"))
    smooth_beta: float = field(default=10.0, metadata=_meta("loss"))
    dilation: int = field(default=6, metadata=_meta("loss"))
    use_occlusion: bool = field(default=True, metadata=_meta("loss"))
    occ_warmup: int = field(default=500, metadata=_meta("loss"))     # iterations with an all-ones mask
    # train
    optimizer: str = field(default="adam", metadata=_meta("train"))
    lr: float = field(default=5e-4, metadata=_meta("train"))
    batch_size: int = field(default=4, metadata=_meta("train"))
    iterations: int = field(default=2000, metadata=_meta("train"))
    seed: int = field(default=0, metadata=_meta("train"))
    data: str = field(default="", metadata=_meta("train"))
    checkpoint: str = field(default="checkpoint.gfck", metadata=_meta("train"))
    resume: str = field(default="", metadata=_meta("train"))
    log: str = field(default="", metadata=_meta("train"))
    log_every: int = field(default=50, metadata=_meta("train"))
    checkpoint_every: int = field(default=0, metadata=_meta("train"))
    deterministic: bool = field(default=True, metadata=_meta("train"))

    def __post_init__(self):
        if self.sgu_mode not in SGU_MODES:
            raise ConfigError(f"sgu_mode must be one of {SGU_MODES}, got {self.sgu_mode!r}")
        if self.loss_mode not in PYRAMID_MODES:
            raise ConfigError(f"loss_mode must be one of {PYRAMID_MODES}, got {self.loss_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.depth < 0 or self.batch_size < 1 or self.iterations < 0 or self.lr <= 0:
            raise ConfigError("depth >= 0, batch_size >= 1, iterations >= 0 and lr > 0 required")

    def model(self) -> ModelConfig:
        return ModelConfig(depth=self.depth, feat_channels=self.feat_channels, max_disp=self.max_disp,
                           sgu_mode=self.sgu_mode, finest_scale=self.finest_scale)

    def weights(self) -> LossWeights:
        return LossWeights(lambda_d=self.lambda_d, lambda_s=self.lambda_s, lambda_c=self.lambda_c,
                           lambda_a=self.lambda_a, lambda_b=self.lambda_b, q=self.q, eps=self.eps)

    def loss(self) -> LossConfig:
        return LossConfig(pyramid=self.loss_mode, pdl_normalize=self.pdl_normalize,
                          pdl_use_occ=self.pdl_use_occ, pul_weight=self.pul_weight,
                          smooth_beta=self.smooth_beta, smooth_order=self.smooth_order,
                          dilation=self.dilation)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
SECTIONS = sorted({f.metadata["section"] for f in FIELDS.values()})


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce(name: str, text: str):
    f = FIELDS.get(name)
    if f is None:
        raise ConfigError(f"unknown config key {name!r}")
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            return _parse_bool(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text.strip()
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: {e}") from None


def parse_ini(text: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in FIELDS:
                raise ConfigError(f"unknown config key {key!r} in [{section}]")
            want = FIELDS[key].metadata["section"]
            if want != section:
                raise ConfigError(f"key {key!r} belongs in [{want}], not [{section}]")
            values[key] = coerce(key, raw)
    return values


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX):
            name = k[len(ENV_PREFIX):].lower()
            if name not in FIELDS:
                raise ConfigError(f"unknown config key {name!r} from environment variable {k}")
            out[name] = coerce(name, v)
    return out


def load_config(path=None, environ: Optional[Mapping[str, str]] = None, **overrides) -> TrainConfig:
    values = {}
    if path:
        if not os.path.isfile(path):
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path) as fh:
            values.update(parse_ini(fh.read()))
        base = os.path.dirname(os.path.abspath(path))
        for key in ("data", "checkpoint", "resume", "log"):
            if values.get(key) and not os.path.isabs(values[key]):
                values[key] = os.path.join(base, values[key])
    values.update(env_overrides(environ))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def to_ini(cfg: TrainConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for s in SECTIONS:
        cp.add_section(s)
    for name, f in FIELDS.items():
        v = getattr(cfg, name)
        cp.set(f.metadata["section"], name, str(v).lower() if isinstance(v, bool) else str(v))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
