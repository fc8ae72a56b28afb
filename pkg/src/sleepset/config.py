"""Configuration dataclasses plus strict JSON loading.

Unknown keys are rejected so a typo in a hyper-parameter name fails loudly
instead of silently training with defaults.
"""

import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .signals import ALL_KINDS, AasmStage, SignalKind

AASM_NAMES = ("Wake", "N1", "N2", "N3", "REM")


def _default_samples_per_epoch():
    return {k: k.default_samples_per_epoch for k in ALL_KINDS}


def _default_encoder_channels():
    return {256: (16, 32, 64, 64, 128, 128),
            1024: (16, 16, 32, 32, 64, 64, 128, 128)}


@dataclass
class ModelConfig:
    feature_dim: int = 128
    dropout: float = 0.1
    encoder_kernel: int = 3
    samples_per_epoch: dict = field(default_factory=_default_samples_per_epoch)
    encoder_channels: dict = field(default_factory=_default_encoder_channels)
    mixer_layers: int = 2
    mixer_hidden: int = 512
    mixer_heads: int = 8
    seq_blocks: int = 2
    seq_kernel: int = 7
    seq_dilations: tuple = (1, 2, 4, 8, 16, 32)
    classes: int = 4
    epochs_t: int = 1200

    def validate(self):
        if self.classes != 4:
            raise ConfigError(f"classes must be 4, got {self.classes}")
        if self.feature_dim % self.mixer_heads:
            raise ConfigError(f"feature_dim {self.feature_dim} not divisible "
                              f"by mixer_heads {self.mixer_heads}")
        if self.encoder_kernel % 2 == 0 or self.seq_kernel % 2 == 0:
            raise ConfigError("convolution kernels must be odd")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.epochs_t < 1:
            raise ConfigError("epochs_t must be positive")
        if set(self.samples_per_epoch) != set(ALL_KINDS):
            raise ConfigError("samples_per_epoch must cover exactly "
                              "ECG, PPG, ABD, THX")
        for kind, k in self.samples_per_epoch.items():
            depth = math.log2(k / 4)
            if k < 8 or depth != int(depth):
                raise ConfigError(f"samples_per_epoch[{kind}] must be a "
                                  f"power of two >= 8, got {k}")
            if k not in self.encoder_channels:
                raise ConfigError(f"no encoder channel list for k={k}")
            if len(self.encoder_channels[k]) != int(depth):
                raise ConfigError(
                    f"encoder channel list for k={k} must have "
                    f"log2(k/4)={int(depth)} entries, got "
                    f"{len(self.encoder_channels[k])}")
        return self

    def k_of(self, kind):
        return self.samples_per_epoch[kind]

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        if "samples_per_epoch" in raw:
            raw["samples_per_epoch"] = {
                _parse_kind_key(k): int(v)
                for k, v in raw["samples_per_epoch"].items()}
        if "encoder_channels" in raw:
            raw["encoder_channels"] = {
                int(k): tuple(v) for k, v in raw["encoder_channels"].items()}
        if "seq_dilations" in raw:
            raw["seq_dilations"] = tuple(raw["seq_dilations"])
        return _build(cls, raw).validate()


@dataclass
class TrainConfig:
    max_lr: float = 1e-3
    warmup_steps: int = 2000
    decay_half_life_steps: int = 6000
    weight_decay: float = 1e-2
    effective_batch: int = 16
    micro_batch: int = 4
    patience_epochs: int = 5
    max_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def validate(self):
        if self.micro_batch < 1 or self.micro_batch > self.effective_batch:
            raise ConfigError("micro_batch must be in [1, effective_batch]")
        if self.effective_batch % self.micro_batch:
            raise ConfigError(f"effective_batch {self.effective_batch} not "
                              f"divisible by micro_batch {self.micro_batch}")
        if self.warmup_steps < 1 or self.decay_half_life_steps < 1:
            raise ConfigError("schedule step counts must be positive")
        return self

    @classmethod
    def from_dict(cls, raw):
        return _build(cls, raw).validate()


def _default_drop_probabilities():
    return {SignalKind.ABD: 0.7, SignalKind.THX: 0.7,
            SignalKind.ECG: 0.5, SignalKind.PPG: 0.1}


@dataclass
class MaskingConfig:
    drop_probabilities: dict = field(default_factory=_default_drop_probabilities)
    max_retries: int = 8
    invert_probability: float = 0.5

    def validate(self):
        for kind, p in self.drop_probabilities.items():
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"drop probability for {kind} must be in "
                                  f"[0, 1), got {p}")
        if not 0.0 <= self.invert_probability <= 1.0:
            raise ConfigError("invert_probability must be in [0, 1]")
        return self

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        if "drop_probabilities" in raw:
            raw["drop_probabilities"] = {
                _parse_kind_key(k): float(v)
                for k, v in raw["drop_probabilities"].items()}
        return _build(cls, raw).validate()


def _default_transition():
    # next-stage distribution of the hypnogram chain, rows = current stage
    # in AASM order (Wake, N1, N2, N3, REM); diagonal handled by dwell times
    return ((0.00, 0.70, 0.20, 0.05, 0.05),
            (0.30, 0.00, 0.60, 0.00, 0.10),
            (0.10, 0.15, 0.00, 0.45, 0.30),
            (0.15, 0.10, 0.75, 0.00, 0.00),
            (0.30, 0.20, 0.50, 0.00, 0.00))


def _per_stage(wake, n1, n2, n3, rem):
    return {AasmStage.WAKE: wake, AasmStage.N1: n1, AasmStage.N2: n2,
            AasmStage.N3: n3, AasmStage.REM: rem}


@dataclass
class SynthConfig:
    transition: tuple = field(default_factory=_default_transition)
    dwell_epochs: dict = field(default_factory=lambda: _per_stage(10, 4, 20, 25, 18))
    heart_rate_hz: dict = field(default_factory=lambda: _per_stage(1.35, 1.10, 1.00, 0.92, 1.15))
    heart_rate_jitter: dict = field(default_factory=lambda: _per_stage(0.03, 0.05, 0.04, 0.012, 0.12))
    resp_rate_hz: dict = field(default_factory=lambda: _per_stage(0.30, 0.26, 0.24, 0.21, 0.29))
    resp_rate_jitter: dict = field(default_factory=lambda: _per_stage(0.04, 0.045, 0.025, 0.008, 0.14))
    noise: dict = field(default_factory=lambda: {
        SignalKind.ECG: 0.08, SignalKind.PPG: 0.30,
        SignalKind.ABD: 0.05, SignalKind.THX: 0.05})
    sample_rates_hz: dict = field(default_factory=lambda: {
        SignalKind.ECG: 64.0, SignalKind.PPG: 32.0,
        SignalKind.ABD: 16.0, SignalKind.THX: 16.0})
    availability: dict = field(default_factory=lambda: {
        SignalKind.ECG: 1.0, SignalKind.PPG: 1.0,
        SignalKind.ABD: 1.0, SignalKind.THX: 1.0})
    duration_epochs: int = 240
    epoch_seconds: float = 30.0
    seed: int = 0

    def validate(self):
        import numpy as np
        mat = np.asarray(self.transition, dtype=float)
        if mat.shape != (5, 5):
            raise ConfigError("transition matrix must be 5x5 over AASM stages")
        if (mat < 0).any() or not np.allclose(mat.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigError("transition rows must be non-negative and sum to 1")
        for name in ("dwell_epochs", "heart_rate_hz", "resp_rate_hz"):
            if any(v <= 0 for v in getattr(self, name).values()):
                raise ConfigError(f"{name} values must be positive")
        if self.duration_epochs < 1:
            raise ConfigError("duration_epochs must be positive")
        return self

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        for name in ("dwell_epochs", "heart_rate_hz", "heart_rate_jitter",
                     "resp_rate_hz", "resp_rate_jitter"):
            if name in raw:
                raw[name] = {_parse_stage_key(k): float(v)
                             for k, v in raw[name].items()}
        for name in ("noise", "sample_rates_hz", "availability"):
            if name in raw:
                raw[name] = {_parse_kind_key(k): float(v)
                             for k, v in raw[name].items()}
        if "transition" in raw:
            raw["transition"] = tuple(tuple(row) for row in raw["transition"])
        return _build(cls, raw).validate()


@dataclass
class DataConfig:
    n_recordings: int = 10
    split: tuple = (0.8, 0.1, 0.1)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self):
        if self.n_recordings < 1:
            raise ConfigError("n_recordings must be positive")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError("split must be three ratios summing to 1")
        self.synth.validate()
        return self

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        if "synth" in raw:
            raw["synth"] = SynthConfig.from_dict(raw["synth"])
        if "split" in raw:
            raw["split"] = tuple(raw["split"])
        return _build(cls, raw).validate()


@dataclass
class EvalConfig:
    modalities: tuple = tuple(k.value for k in ALL_KINDS)
    group_by: str = None

    def validate(self):
        from .signals import parse_kind
        for name in self.modalities:
            parse_kind(name)
        return self

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        if "modalities" in raw:
            raw["modalities"] = tuple(raw["modalities"])
        return _build(cls, raw).validate()


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    masking: MaskingConfig = field(default_factory=MaskingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        self.model.validate()
        self.train.validate()
        self.masking.validate()
        self.data.validate()
        self.eval.validate()
        return self

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        sections = {"model": ModelConfig, "train": TrainConfig,
                    "masking": MaskingConfig, "data": DataConfig,
                    "eval": EvalConfig}
        for name, section_cls in sections.items():
            if name in raw:
                if not isinstance(raw[name], dict):
                    raise ConfigError(f"config section {name!r} must be an "
                                      "object")
                raw[name] = section_cls.from_dict(raw[name])
        return _build(cls, raw).validate()


def _parse_kind_key(key):
    try:
        return SignalKind(str(key).upper())
    except ValueError:
        raise ConfigError(f"unknown signal kind {key!r} in config")


def _parse_stage_key(key):
    name = str(key).upper()
    if name in AasmStage.__members__:
        return AasmStage[name]
    try:
        return AasmStage(int(key))
    except (ValueError, TypeError):
        raise ConfigError(f"unknown AASM stage {key!r} in config "
                          f"(expected one of {AASM_NAMES})")


def _build(cls, raw):
    """Construct a dataclass from a dict, rejecting unknown keys."""
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: "
                          f"{', '.join(sorted(unknown))}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc))


def load_run_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return RunConfig.from_dict(raw)


def to_jsonable(obj):
    """Recursively convert a config tree to plain JSON-serializable types."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(to_jsonable(k)): to_jsonable(v) for k, v in sorted(
            obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (tuple, list)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def config_digest(config):
    """Stable short hash of a config tree, for report provenance."""
    import hashlib
    blob = json.dumps(to_jsonable(config), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
