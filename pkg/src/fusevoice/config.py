"""Flat run configuration.

One dataclass holds every tunable used by the CLI commands.  Config files are
flat YAML (JSON is a subset) mapping key -> scalar; unknown keys are an error
so typos fail loudly instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

FUSION_VARIANTS = ("hctscm", "tscm", "concat")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # -- model dimensions
    d_model: int = 96          # hidden width of every fusion block
    d_style: int = 64          # style embedding width
    d_spk: int = 64            # speaker embedding width
    latent_channels: int = 16  # acoustic latent channels (even; coupling splits in half)
    text_blocks: int = 4       # fusion blocks in the text encoder
    flow_layers: int = 4       # affine coupling layers in the acoustic flow
    dur_flow_layers: int = 2   # coupling layers in the duration flow
    attn_heads: int = 2
    conv_kernel: int = 5
    ffn_mult: int = 2
    enc_hidden: int = 96       # hidden width of the front-end encoders
    fusion: str = "hctscm"     # hctscm | tscm | concat
    grl_lambda: float = 1.0    # gradient reversal strength
    gate_prob: float = 0.5     # P(style gate = 1) during training
    prompt_drop: float = 0.5   # P(mute prompt | gate = 1): trains the audio-only mode
    logstd_min: float = -7.0   # posterior log-std clamp
    logstd_max: float = 5.0
    temperature: float = 0.667
    max_text_len: int = 128
    max_prompt_len: int = 64

    # -- corpus
    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 256
    frames_per_char: int = 3
    speakers: int = 6
    styles: int = 4
    utterances_per_cell: int = 10

    # -- optimisation
    lr: float = 2e-3
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0

    @property
    def bins(self) -> int:
        return self.n_fft // 2 + 1

    def validate(self) -> "RunConfig":
        if self.fusion not in FUSION_VARIANTS:
            raise ConfigError(
                f"fusion must be one of {list(FUSION_VARIANTS)}, got {self.fusion!r}"
            )
        if self.latent_channels % 2 != 0:
            raise ConfigError(f"latent_channels must be even, got {self.latent_channels}")
        if self.logstd_min >= self.logstd_max:
            raise ConfigError("logstd_min must be below logstd_max")
        if not 0.0 <= self.gate_prob <= 1.0:
            raise ConfigError(f"gate_prob must lie in [0, 1], got {self.gate_prob}")
        if self.temperature < 0.0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        positive = (
            "d_model d_style d_spk latent_channels text_blocks flow_layers "
            "dur_flow_layers attn_heads conv_kernel ffn_mult enc_hidden "
            "max_text_len max_prompt_len sample_rate n_fft hop frames_per_char "
            "speakers styles utterances_per_cell batch_size"
        )
        for key in positive.split():
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.d_model % self.attn_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by attn_heads ({self.attn_heads})"
            )
        if self.conv_kernel % 2 != 1:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value):
    want = _FIELDS[key].type
    if want in ("int", int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} expects an integer, got {value!r}")
        return value
    if want in ("float", float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} expects a number, got {value!r}")
        return float(value)
    if want in ("str", str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} expects a string, got {value!r}")
        return value
    raise ConfigError(f"config key {key!r} has unsupported type {want!r}")


def from_mapping(mapping: dict) -> RunConfig:
    unknown = sorted(set(mapping) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {k: _coerce(k, v) for k, v in mapping.items()}
    return RunConfig(**kwargs).validate()


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Load a flat YAML/JSON config file and apply CLI overrides on top."""
    mapping: dict = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text())
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must contain a flat mapping")
        mapping.update(raw)
    if overrides:
        mapping.update({k: v for k, v in overrides.items() if v is not None})
    return from_mapping(mapping)


def config_hash(cfg: RunConfig) -> str:
    """Stable short hash of the full configuration (for artifact headers)."""
    canon = json.dumps(dataclasses.asdict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]
