"""fusevoice: controllable zero-shot speech synthesis on a synthetic corpus.

The package is organised around a conditional-VAE synthesis backbone whose
conformer-style blocks accept external speaker and style control vectors.
Control embeddings come from a multimodal front-end (text prompts and/or
reference audio); everything trains end to end on a parametric corpus whose
ground-truth factors make the pipeline verifiable without human listeners.
"""

from .config import RunConfig, load_config, config_hash, ConfigError
from .text import CHARSET, encode_chars, decode_ids, UnknownCharacterError

__all__ = [
    "RunConfig",
    "load_config",
    "config_hash",
    "ConfigError",
    "CHARSET",
    "encode_chars",
    "decode_ids",
    "UnknownCharacterError",
]

__version__ = "0.1.0"
