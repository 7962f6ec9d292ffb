"""Synthetic parametric corpus with known ground-truth factors.

Utterances are spectrograms synthesised directly in the frequency domain:
a harmonic stack at a speaker-specific fundamental, shaped by a
speaker-specific formant envelope and spectral tilt, modulated by
style-specific rate / energy-envelope / f0-wobble factors, with a
deterministic per-character timbre so the text is visible in the features.
Because every factor is known, downstream metrics can be verified against
ground truth instead of human listeners.

All randomness flows through numpy Generators seeded per utterance from
(master seed, record index), so corpora are bit-reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .text import CHARSET, encode_chars

_SEED_MASK = (1 << 63) - 1

# ---------------------------------------------------------------------------
# audio feature geometry


@dataclass(frozen=True)
class AudioParams:
    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 256
    frames_per_char: int = 3

    @property
    def bins(self) -> int:
        return self.n_fft // 2 + 1


# ---------------------------------------------------------------------------
# factor specs

F0_RANGE = (80.0, 400.0)
FORMANT_RANGE = (150.0, 7600.0)
TILT_RANGE = (-1.5, 0.0)
RATE_RANGE = (0.5, 2.0)
ENV_GAIN_RANGE = (0.2, 2.0)
F0_MOD_DEPTH_RANGE = (0.0, 0.4)
F0_MOD_RATE_RANGE = (0.0, 10.0)


@dataclass(frozen=True)
class SpeakerSpec:
    """Identity factors: pitch base, vocal-tract resonances, spectral tilt."""

    speaker_id: int
    f0_base: float
    formant_pattern: tuple[float, float, float]
    timbre_tilt: float


@dataclass(frozen=True)
class StyleSpec:
    """Prosodic factors: speaking rate, energy contour, pitch modulation."""

    style_id: int
    style_name: str
    rate_factor: float
    energy_envelope: tuple[float, ...]
    f0_mod_depth: float
    f0_mod_rate: float


def _clip(value: float, lo: float, hi: float, label: str, warnings: list[str]) -> float:
    if value < lo or value > hi:
        warnings.append(f"{label}={value:g} clamped to [{lo:g}, {hi:g}]")
        return float(min(max(value, lo), hi))
    return float(value)


def clamp_speaker(spec: SpeakerSpec) -> tuple[SpeakerSpec, list[str]]:
    """Force a speaker spec into the documented parameter ranges.

    Returns the (possibly adjusted) spec plus one warning string per clamp.
    """
    warnings: list[str] = []
    f0 = _clip(spec.f0_base, *F0_RANGE, f"speaker {spec.speaker_id} f0_base", warnings)
    formants = sorted(spec.formant_pattern)
    if tuple(formants) != tuple(spec.formant_pattern):
        warnings.append(f"speaker {spec.speaker_id} formant_pattern reordered ascending")
    formants = [
        _clip(f, *FORMANT_RANGE, f"speaker {spec.speaker_id} formant {i}", warnings)
        for i, f in enumerate(formants)
    ]
    # clipping can collapse neighbours onto a bound; keep the pattern strictly
    # increasing since the envelope code assumes distinct resonances
    for i in range(1, len(formants)):
        if formants[i] <= formants[i - 1]:
            formants[i] = formants[i - 1] + 1.0
            warnings.append(f"speaker {spec.speaker_id} formant {i} bumped to keep centers increasing")
    tilt = _clip(spec.timbre_tilt, *TILT_RANGE, f"speaker {spec.speaker_id} timbre_tilt", warnings)
    out = SpeakerSpec(spec.speaker_id, f0, tuple(formants), tilt)
    return out, warnings


def clamp_style(spec: StyleSpec) -> tuple[StyleSpec, list[str]]:
    """Force a style spec into the documented parameter ranges."""
    warnings: list[str] = []
    rate = _clip(spec.rate_factor, *RATE_RANGE, f"style {spec.style_name} rate_factor", warnings)
    env = tuple(
        _clip(g, *ENV_GAIN_RANGE, f"style {spec.style_name} envelope gain {i}", warnings)
        for i, g in enumerate(spec.energy_envelope)
    )
    if len(env) < 2:
        raise ValueError(f"style {spec.style_name}: energy_envelope needs >= 2 control points")
    depth = _clip(
        spec.f0_mod_depth, *F0_MOD_DEPTH_RANGE, f"style {spec.style_name} f0_mod_depth", warnings
    )
    rate_hz = _clip(
        spec.f0_mod_rate, *F0_MOD_RATE_RANGE, f"style {spec.style_name} f0_mod_rate", warnings
    )
    out = StyleSpec(spec.style_id, spec.style_name, rate, env, depth, rate_hz)
    return out, warnings


STYLE_PRESETS = (
    StyleSpec(0, "neutral", 1.0, (1.0, 1.0, 1.0, 1.0), 0.02, 1.0),
    StyleSpec(1, "happy", 0.8, (0.9, 1.1, 1.2, 1.3), 0.25, 5.0),
    StyleSpec(2, "sad", 1.45, (1.15, 0.95, 0.78, 0.62), 0.08, 0.8),
    StyleSpec(3, "angry", 0.9, (1.3, 0.8, 1.35, 0.9), 0.18, 7.5),
)

# emotional valence of the presets, used by the cross-modal consistency study
# to build agreeing vs. contradicting prompt/audio pairs
STYLE_VALENCE = {"neutral": "neutral", "happy": "positive", "sad": "negative", "angry": "negative"}


def style_valence(spec: StyleSpec) -> str:
    """Valence bucket of a style; procedural extras alternate by parity."""
    try:
        return STYLE_VALENCE[spec.style_name]
    except KeyError:
        return "positive" if spec.style_id % 2 == 0 else "negative"


def generate_speakers(count: int, seed: int) -> list[SpeakerSpec]:
    """Evenly spread f0 bases with randomised formants/tilt, all in range."""
    if count < 1:
        raise ValueError(f"speaker count must be >= 1, got {count}")
    rng = np.random.default_rng(np.random.SeedSequence([seed & _SEED_MASK, 0xA5]))
    bases = np.linspace(115.0, 310.0, count) if count > 1 else np.array([180.0])
    out = []
    for i in range(count):
        f0 = float(bases[i] + rng.uniform(-5.0, 5.0))
        f1 = rng.uniform(420.0, 780.0)
        f2 = f1 * rng.uniform(1.9, 2.6)
        f3 = f2 * rng.uniform(1.35, 1.7)
        tilt = rng.uniform(-0.9, -0.3)
        spec, warnings = clamp_speaker(SpeakerSpec(i, f0, (f1, f2, f3), tilt))
        if warnings:  # generator ranges sit inside the clamp bounds
            raise AssertionError(f"generated speaker left range: {warnings}")
        out.append(spec)
    return out


def generate_styles(count: int, seed: int) -> list[StyleSpec]:
    """The four named presets, then procedurally sampled extras if asked."""
    if count < 1:
        raise ValueError(f"style count must be >= 1, got {count}")
    out = list(STYLE_PRESETS[:count])
    rng = np.random.default_rng(np.random.SeedSequence([seed & _SEED_MASK, 0x51]))
    for i in range(len(out), count):
        spec = StyleSpec(
            style_id=i,
            style_name=f"style{i}",
            rate_factor=float(rng.uniform(0.6, 1.8)),
            energy_envelope=tuple(float(g) for g in rng.uniform(0.5, 1.5, size=4)),
            f0_mod_depth=float(rng.uniform(0.0, 0.3)),
            f0_mod_rate=float(rng.uniform(0.5, 8.0)),
        )
        out.append(clamp_style(spec)[0])
    return out


# ---------------------------------------------------------------------------
# prompt lexicon

PROMPT_STRATEGIES = ("keyword", "template", "full_sentence")
MAX_PROMPT_CHARS = 64


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class LexiconEntry:
    keywords: tuple[str, ...]
    templates: tuple[str, ...]
    full_sentences: tuple[str, ...]


@dataclass(frozen=True)
class PromptLexicon:
    entries: dict[str, LexiconEntry]

    def validate(self) -> "PromptLexicon":
        seen: dict[str, str] = {}
        for name, entry in self.entries.items():
            for kind in ("keywords", "templates", "full_sentences"):
                items = getattr(entry, kind)
                if len(items) < 3:
                    raise LexiconError(f"style {name!r} needs >= 3 {kind}, has {len(items)}")
            for kw in entry.keywords:
                if " " in kw:
                    raise LexiconError(f"style {name!r} keyword {kw!r} must be a single token")
                if kw in seen:
                    raise LexiconError(
                        f"keyword {kw!r} appears in both {seen[kw]!r} and {name!r}"
                    )
                seen[kw] = name
            for tpl in entry.templates:
                if tpl.count("{}") != 1:
                    raise LexiconError(f"style {name!r} template {tpl!r} needs one {{}} slot")
            # every renderable surface must tokenise and fit the prompt budget
            for kw in entry.keywords:
                for tpl in entry.templates:
                    _check_prompt(name, tpl.format(kw))
                _check_prompt(name, kw)
            for sent in entry.full_sentences:
                _check_prompt(name, sent)
        return self


def _check_prompt(style_name: str, prompt: str) -> None:
    encode_chars(prompt)  # raises on out-of-charset characters
    if len(prompt) > MAX_PROMPT_CHARS:
        raise LexiconError(
            f"style {style_name!r} prompt {prompt!r} exceeds {MAX_PROMPT_CHARS} characters"
        )


_NAMED_LEXICON = {
    "neutral": LexiconEntry(
        keywords=("plain", "even", "steady"),
        templates=(
            "speak in a {} voice",
            "keep the tone {}",
            "read this in a {} way",
        ),
        full_sentences=(
            "keep the voice level and unhurried",
            "read it as if stating a fact",
            "no color just clear speech",
        ),
    ),
    "happy": LexiconEntry(
        keywords=("cheerful", "joyful", "upbeat", "merry"),
        templates=(
            "speak in a {} voice",
            "say it with a {} tone",
            "sound {} while reading",
        ),
        full_sentences=(
            "sound bright and full of joy",
            "speak as if smiling widely",
            "use a light and lively voice",
        ),
    ),
    "sad": LexiconEntry(
        keywords=("gloomy", "sorrowful", "mournful", "downcast"),
        templates=(
            "speak in a {} voice",
            "let the words sound {}",
            "read this in a {} tone",
        ),
        full_sentences=(
            "sound heavy with quiet sorrow",
            "speak as if holding back tears",
            "let the voice sink and slow",
        ),
    ),
    "angry": LexiconEntry(
        keywords=("furious", "irate", "heated", "fierce"),
        templates=(
            "speak in a {} voice",
            "snap the words out {}",
            "read this with a {} edge",
        ),
        full_sentences=(
            "sound sharp and ready to shout",
            "bite off each word with force",
            "let the voice burn with temper",
        ),
    ),
}


def default_lexicon(styles: list[StyleSpec]) -> PromptLexicon:
    """Lexicon covering the given styles; procedural entries beyond the presets."""
    entries: dict[str, LexiconEntry] = {}
    for spec in styles:
        if spec.style_name in _NAMED_LEXICON:
            entries[spec.style_name] = _NAMED_LEXICON[spec.style_name]
        else:
            tag = f"tone{spec.style_id}"
            entries[spec.style_name] = LexiconEntry(
                keywords=(f"{tag}a", f"{tag}b", f"{tag}c"),
                templates=(
                    "speak in a {} voice",
                    "use a {} delivery",
                    "read this in a {} way",
                ),
                full_sentences=(
                    f"use the {tag} manner of speech",
                    f"deliver it in the {tag} register",
                    f"keep to the {tag} style throughout",
                ),
            )
    return PromptLexicon(entries).validate()


def augment_prompt(style: StyleSpec | str, lexicon: PromptLexicon, strategy: str, seed: int) -> str:
    """Render one natural-language style prompt for the given style.

    Strategies: "keyword" emits a bare synonym, "template" fills a sentence
    skeleton with a synonym, "full_sentence" picks a canned description.
    Deterministic given (style, strategy, seed).
    """
    name = style.style_name if isinstance(style, StyleSpec) else style
    if name not in lexicon.entries:
        known = ", ".join(sorted(lexicon.entries))
        raise LexiconError(f"unknown style {name!r}; lexicon covers: {known}")
    if strategy not in PROMPT_STRATEGIES:
        raise LexiconError(
            f"unknown prompt strategy {strategy!r}; expected one of {list(PROMPT_STRATEGIES)}"
        )
    entry = lexicon.entries[name]
    rng = np.random.default_rng(seed & _SEED_MASK)
    if strategy == "keyword":
        return entry.keywords[int(rng.integers(len(entry.keywords)))]
    if strategy == "template":
        tpl = entry.templates[int(rng.integers(len(entry.templates)))]
        kw = entry.keywords[int(rng.integers(len(entry.keywords)))]
        return tpl.format(kw)
    return entry.full_sentences[int(rng.integers(len(entry.full_sentences)))]


# ---------------------------------------------------------------------------
# phrase bank (lowercase letters + space only)

PHRASES = (
    "the wind moved the grass",
    "rain fell all night",
    "a bird sang at dawn",
    "the river runs cold",
    "light spills on the floor",
    "dust settles slowly",
    "the door swings open",
    "waves break on stone",
    "a fox crossed the road",
    "smoke rose from the hill",
    "the kettle hums softly",
    "leaves drift past the gate",
    "a clock ticks in the hall",
    "the moon hangs low",
    "frost covers the glass",
    "a dog barks far away",
    "the train left early",
    "coals glow in the dark",
    "the path bends north",
    "snow fell without sound",
    "a candle gutters out",
    "the tide pulls back",
    "thunder rolls overhead",
    "the old gate creaks",
    "a kite climbs the sky",
    "the well ran dry",
    "bees hum in the clover",
    "the lamp flickers twice",
    "a stone skips the pond",
    "the road turns to mud",
    "morning mist lifts slow",
    "the owl calls at dusk",
    "apples drop in the yard",
    "the fire needs more wood",
    "a wheel squeaks somewhere",
    "the map shows a bridge",
    "geese fly south today",
    "the attic smells of pine",
    "a letter waits unread",
    "the spring coils tight",
    "shadows stretch at noon",
    "the boat drifts ashore",
    "a hinge wants oil",
    "the cellar stays cool",
    "crickets start at dark",
    "the flag snaps in wind",
    "a spider mends its web",
    "the stairs count twelve",
    "pears ripen on the sill",
    "the echo fades last",
)


# ---------------------------------------------------------------------------
# signal model

_HARMONIC_SIGMA_BINS = 0.85
_HARMONIC_WINDOW = 5
_NOISE_FLOOR = 0.08
_FORMANT_BANDWIDTHS = np.array([90.0, 120.0, 160.0])
_FORMANT_GAINS = np.array([1.0, 0.63, 0.38])
_PAUSE_GAIN = 0.08
_MAX_HARMONIC_HZ = 7600.0


def char_durations(
    text: str, style: StyleSpec, rng: np.random.Generator, params: AudioParams
) -> np.ndarray:
    """Frames per character: frames_per_char x rate_factor with ±15% jitter, min 1."""
    jitter = rng.uniform(0.85, 1.15, size=len(text))
    raw = params.frames_per_char * style.rate_factor * jitter
    return np.maximum(1, np.rint(raw)).astype(np.int64)


def synthesize_spectrogram(
    text: str,
    speaker: SpeakerSpec,
    style: StyleSpec,
    rng: np.random.Generator,
    params: AudioParams = AudioParams(),
) -> np.ndarray:
    """Render one utterance as a non-negative [frames, bins] float32 magnitude array.

    Frames >= len(text) always holds because every character gets >= 1 frame.
    """
    if not text:
        raise ValueError("cannot synthesize an empty text")
    codes = np.array(encode_chars(text)) - 1  # 0 == space, 1.. == letters
    durs = char_durations(text, style, rng, params)
    frames = int(durs.sum())
    char_idx = np.repeat(np.arange(len(text)), durs)
    bins = params.bins
    bin_hz = params.sample_rate / params.n_fft
    freqs = np.arange(bins) * bin_hz

    # fundamental contour: gentle declination plus style wobble
    t = np.arange(frames) * params.hop / params.sample_rate
    declination = 1.0 - 0.06 * (np.arange(frames) / max(frames - 1, 1))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    f0 = speaker.f0_base * declination * (
        1.0 + style.f0_mod_depth * np.sin(2.0 * np.pi * style.f0_mod_rate * t + phase)
    )
    f0 = np.clip(f0, 50.0, None)

    # style energy contour interpolated across the utterance
    env_pts = np.asarray(style.energy_envelope, dtype=np.float64)
    gain = np.interp(
        np.arange(frames) / max(frames - 1, 1),
        np.linspace(0.0, 1.0, len(env_pts)),
        env_pts,
    )

    # deterministic per-character timbre so text structure shows in the features
    fscale = 0.90 + 0.20 * ((codes * 2654435761) % 97) / 96.0
    noise_mix = 0.05 + 0.25 * ((codes * 40503) % 89) / 88.0
    is_pause = codes == 0
    fscale_f = fscale[char_idx]
    noise_f = noise_mix[char_idx]
    pause_f = is_pause[char_idx]

    centers = np.asarray(speaker.formant_pattern)[None, :] * fscale_f[:, None]  # [T, 3]
    spectral_env = _NOISE_FLOOR + (
        _FORMANT_GAINS[None, None, :]
        * np.exp(
            -0.5
            * ((freqs[None, :, None] - centers[:, None, :]) / _FORMANT_BANDWIDTHS[None, None, :])
            ** 2
        )
    ).sum(axis=-1)  # [T, bins]

    spec = np.zeros((frames, bins), dtype=np.float64)
    rows = np.arange(frames)
    offsets = np.arange(-_HARMONIC_WINDOW, _HARMONIC_WINDOW + 1)
    kmax = max(1, min(int(_MAX_HARMONIC_HZ / float(f0.min())), 60))
    for k in range(1, kmax + 1):
        fk = k * f0
        alive = fk < _MAX_HARMONIC_HZ
        if not alive.any():
            break
        pk = fk / bin_hz
        nearest = np.clip(np.rint(pk).astype(np.int64), 0, bins - 1)
        height = (k ** speaker.timbre_tilt) * spectral_env[rows, nearest] * alive
        cols = np.clip(nearest[:, None] + offsets[None, :], 0, bins - 1)
        vals = height[:, None] * np.exp(
            -0.5 * ((cols - pk[:, None]) / _HARMONIC_SIGMA_BINS) ** 2
        )
        np.add.at(spec, (rows[:, None], cols), vals)

    noise = np.abs(rng.standard_normal((frames, bins))) * spectral_env * 0.25
    spec = (1.0 - noise_f)[:, None] * spec + noise_f[:, None] * noise
    spec *= gain[:, None]
    spec[pause_f] *= _PAUSE_GAIN
    return np.ascontiguousarray(spec, dtype=np.float32)


# ---------------------------------------------------------------------------
# manifests and corpus assembly

MANIFEST_KEYS = ("id", "text", "speaker_id", "style_id", "prompt", "audio", "synth")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    id: str
    text: str
    speaker_id: int
    style_id: int
    prompt: str
    audio: str
    synth: dict

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "speaker_id": self.speaker_id,
            "style_id": self.style_id,
            "prompt": self.prompt,
            "audio": self.audio,
            "synth": self.synth,
        }


@dataclass
class Corpus:
    records: list[Record]
    spectrograms: dict[str, np.ndarray]
    speakers: dict[int, SpeakerSpec]
    styles: dict[int, StyleSpec]
    params: AudioParams
    seed: int
    warnings: list[str] = field(default_factory=list)


def _speaker_from_synth(raw: dict) -> SpeakerSpec:
    return SpeakerSpec(
        speaker_id=int(raw["speaker_id"]),
        f0_base=float(raw["f0_base"]),
        formant_pattern=tuple(float(f) for f in raw["formant_pattern"]),
        timbre_tilt=float(raw["timbre_tilt"]),
    )


def _style_from_synth(raw: dict) -> StyleSpec:
    return StyleSpec(
        style_id=int(raw["style_id"]),
        style_name=str(raw["style_name"]),
        rate_factor=float(raw["rate_factor"]),
        energy_envelope=tuple(float(g) for g in raw["energy_envelope"]),
        f0_mod_depth=float(raw["f0_mod_depth"]),
        f0_mod_rate=float(raw["f0_mod_rate"]),
    )


def generate_corpus(
    speakers: int,
    styles: int,
    utterances_per_cell: int,
    seed: int,
    params: AudioParams = AudioParams(),
    speaker_specs: list[SpeakerSpec] | None = None,
    style_specs: list[StyleSpec] | None = None,
) -> Corpus:
    """Materialise the full speakers x styles x utterances_per_cell grid.

    Custom specs (if given) are clamped into range; each clamp adds a warning
    record instead of failing the run.
    """
    if utterances_per_cell < 1:
        raise ValueError(f"utterances_per_cell must be >= 1, got {utterances_per_cell}")
    warnings: list[str] = []
    if speaker_specs is None:
        speaker_specs = generate_speakers(speakers, seed)
    else:
        if len(speaker_specs) != speakers:
            raise ValueError(
                f"expected {speakers} speaker specs, got {len(speaker_specs)}"
            )
        clamped = []
        for spec in speaker_specs:
            spec, w = clamp_speaker(spec)
            warnings.extend(w)
            clamped.append(spec)
        speaker_specs = clamped
    if style_specs is None:
        style_specs = generate_styles(styles, seed)
    else:
        if len(style_specs) != styles:
            raise ValueError(f"expected {styles} style specs, got {len(style_specs)}")
        clamped = []
        for spec in style_specs:
            spec, w = clamp_style(spec)
            warnings.extend(w)
            clamped.append(spec)
        style_specs = clamped

    lexicon = default_lexicon(style_specs)
    records: list[Record] = []
    spectrograms: dict[str, np.ndarray] = {}
    index = 0
    for spk in speaker_specs:
        for sty in style_specs:
            for k in range(utterances_per_cell):
                rng = np.random.default_rng(
                    np.random.SeedSequence([seed & _SEED_MASK, index])
                )
                text = PHRASES[int(rng.integers(len(PHRASES)))]
                strategy = PROMPT_STRATEGIES[int(rng.integers(len(PROMPT_STRATEGIES)))]
                prompt = augment_prompt(
                    sty, lexicon, strategy, int(rng.integers(1 << 31))
                )
                spec = synthesize_spectrogram(text, spk, sty, rng, params)
                utt_id = f"spk{spk.speaker_id}_sty{sty.style_id}_{k:03d}"
                records.append(
                    Record(
                        id=utt_id,
                        text=text,
                        speaker_id=spk.speaker_id,
                        style_id=sty.style_id,
                        prompt=prompt,
                        audio=f"spec/{utt_id}.spec",
                        synth={
                            **dataclasses.asdict(spk),
                            **dataclasses.asdict(sty),
                            "frames": int(spec.shape[0]),
                        },
                    )
                )
                spectrograms[utt_id] = spec
                index += 1
    return Corpus(
        records=records,
        spectrograms=spectrograms,
        speakers={s.speaker_id: s for s in speaker_specs},
        styles={s.style_id: s for s in style_specs},
        params=params,
        seed=seed,
        warnings=warnings,
    )


def write_corpus(corpus: Corpus, out_dir: str | Path) -> Path:
    """Write manifest.jsonl, gen_meta.json and the spectrogram cache files."""
    out = Path(out_dir)
    (out / "spec").mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.jsonl", "w") as fh:
        for rec in corpus.records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    for rec in corpus.records:
        write_spectrogram(out / rec.audio, corpus.spectrograms[rec.id])
    meta = {
        "seed": corpus.seed,
        "audio_params": dataclasses.asdict(corpus.params),
        "speakers": [dataclasses.asdict(s) for s in corpus.speakers.values()],
        "styles": [dataclasses.asdict(s) for s in corpus.styles.values()],
        "warnings": corpus.warnings,
        "records": len(corpus.records),
    }
    with open(out / "gen_meta.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return out / "manifest.jsonl"


@dataclass
class Manifest:
    records: list[Record]
    speakers: dict[int, SpeakerSpec]
    styles: dict[int, StyleSpec]
    base_dir: Path

    def spectrogram(self, rec: Record) -> np.ndarray:
        return read_spectrogram(self.base_dir / rec.audio)


def load_manifest(path: str | Path) -> Manifest:
    """Parse manifest.jsonl, validating keys and rebuilding the factor tables."""
    path = Path(path)
    records: list[Record] = []
    speakers: dict[int, SpeakerSpec] = {}
    styles: dict[int, StyleSpec] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as err:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({err})") from None
            missing = [k for k in MANIFEST_KEYS if k not in raw]
            if missing:
                raise ManifestError(
                    f"{path}:{lineno}: record missing keys: {', '.join(missing)}"
                )
            rec = Record(
                id=str(raw["id"]),
                text=str(raw["text"]),
                speaker_id=int(raw["speaker_id"]),
                style_id=int(raw["style_id"]),
                prompt=str(raw["prompt"]),
                audio=str(raw["audio"]),
                synth=dict(raw["synth"]),
            )
            # the synth params are the factor table; a record whose ids do not
            # resolve to its own params would silently corrupt the tables
            if int(rec.synth.get("speaker_id", -1)) != rec.speaker_id:
                raise ManifestError(
                    f"{path}:{lineno}: record {rec.id!r} references speaker_id "
                    f"{rec.speaker_id} which its synth params do not resolve"
                )
            if int(rec.synth.get("style_id", -1)) != rec.style_id:
                raise ManifestError(
                    f"{path}:{lineno}: record {rec.id!r} references style_id "
                    f"{rec.style_id} which its synth params do not resolve"
                )
            records.append(rec)
            if rec.speaker_id not in speakers:
                speakers[rec.speaker_id] = _speaker_from_synth(rec.synth)
            if rec.style_id not in styles:
                styles[rec.style_id] = _style_from_synth(rec.synth)
    return Manifest(records=records, speakers=speakers, styles=styles, base_dir=path.parent)


# ---------------------------------------------------------------------------
# spectrogram cache format: 8-byte header (rows, cols as uint32 LE), then
# float32 little-endian payload in row-major order.

_HEADER = struct.Struct("<II")


def write_spectrogram(path: str | Path, spec: np.ndarray) -> None:
    if spec.ndim != 2:
        raise ValueError(f"spectrogram must be 2-D, got shape {spec.shape}")
    arr = np.ascontiguousarray(spec, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_spectrogram(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated header ({len(blob)} bytes)")
    rows, cols = _HEADER.unpack_from(blob)
    want = _HEADER.size + rows * cols * 4
    if len(blob) != want:
        raise ValueError(
            f"{path}: payload size mismatch (header says {rows}x{cols}, "
            f"expected {want} bytes, file has {len(blob)})"
        )
    arr = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    return arr.copy()  # writable, detached from the file buffer
