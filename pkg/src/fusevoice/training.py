"""Training loop: batched ELBO + front-end optimisation with full replay.

Everything stochastic (model init, batch order, per-step noise) derives from
the run seed, so a rerun with the same config, data and seed reproduces the
loss log and checkpoint byte-for-byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbone import Batch, LossReport, Model, elbo_losses
from .config import RunConfig
from .corpus import Corpus, Manifest
from .seeding import mix_seed
from .text import encode_chars


@dataclass
class LoadedUtterance:
    utt_id: str
    text: str
    spectrogram: np.ndarray
    speaker_id: int
    style_id: int
    prompt: str


def utterances_from_corpus(corpus: Corpus) -> list[LoadedUtterance]:
    return [
        LoadedUtterance(
            utt_id=rec.id,
            text=rec.text,
            spectrogram=corpus.spectrograms[rec.id],
            speaker_id=rec.speaker_id,
            style_id=rec.style_id,
            prompt=rec.prompt,
        )
        for rec in corpus.records
    ]


def utterances_from_manifest(manifest: Manifest) -> list[LoadedUtterance]:
    return [
        LoadedUtterance(
            utt_id=rec.id,
            text=rec.text,
            spectrogram=manifest.spectrogram(rec),
            speaker_id=rec.speaker_id,
            style_id=rec.style_id,
            prompt=rec.prompt,
        )
        for rec in manifest.records
    ]


def label_counts(utts: list[LoadedUtterance]) -> tuple[int, int]:
    """(n_speakers, n_styles) sized to cover the largest ids present."""
    n_spk = max(u.speaker_id for u in utts) + 1
    n_sty = max(u.style_id for u in utts) + 1
    return n_spk, n_sty


def build_batch(utts: list[LoadedUtterance]) -> Batch:
    b = len(utts)
    text_ids = [encode_chars(u.text) for u in utts]
    prompt_ids = [encode_chars(u.prompt) for u in utts]
    max_l = max(len(t) for t in text_ids)
    max_p = max(len(p) for p in prompt_ids)
    max_t = max(u.spectrogram.shape[0] for u in utts)
    bins = utts[0].spectrogram.shape[1]

    tid = torch.zeros(b, max_l, dtype=torch.long)
    tmask = torch.zeros(b, max_l, dtype=torch.bool)
    pid = torch.zeros(b, max_p, dtype=torch.long)
    pmask = torch.zeros(b, max_p, dtype=torch.bool)
    specs = torch.zeros(b, max_t, bins)
    fmask = torch.zeros(b, max_t, dtype=torch.bool)
    for i, u in enumerate(utts):
        tid[i, : len(text_ids[i])] = torch.tensor(text_ids[i])
        tmask[i, : len(text_ids[i])] = True
        pid[i, : len(prompt_ids[i])] = torch.tensor(prompt_ids[i])
        pmask[i, : len(prompt_ids[i])] = True
        frames = u.spectrogram.shape[0]
        specs[i, :frames] = torch.from_numpy(u.spectrogram)
        fmask[i, :frames] = True
    return Batch(
        text_ids=tid,
        text_mask=tmask,
        prompt_ids=pid,
        prompt_mask=pmask,
        specs=specs,
        frame_mask=fmask,
        style_ids=torch.tensor([u.style_id for u in utts], dtype=torch.long),
        speaker_ids=torch.tensor([u.speaker_id for u in utts], dtype=torch.long),
    )


def make_model(cfg: RunConfig, n_speakers: int, n_styles: int, seed: int) -> Model:
    torch.manual_seed(mix_seed(seed, "init"))
    return Model(cfg, n_speakers, n_styles)


def make_optimizer(model: Model, cfg: RunConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.99))


def train(
    cfg: RunConfig,
    utts: list[LoadedUtterance],
    n_speakers: int | None = None,
    n_styles: int | None = None,
    seed: int | None = None,
    steps: int | None = None,
    log_path: str | Path | None = None,
    model: Model | None = None,
    optimizer: torch.optim.Optimizer | None = None,
) -> tuple[Model, list[LossReport]]:
    """Run the optimisation loop; returns the model and per-step reports."""
    if not utts:
        raise ValueError("cannot train on an empty utterance list")
    seed = cfg.seed if seed is None else seed
    steps = cfg.steps if steps is None else steps
    if n_speakers is None or n_styles is None:
        n_spk, n_sty = label_counts(utts)
        n_speakers = n_speakers or n_spk
        n_styles = n_styles or n_sty
    if model is None:
        model = make_model(cfg, n_speakers, n_styles, seed)
    if optimizer is None:
        optimizer = make_optimizer(model, cfg)

    order_rng = np.random.default_rng(mix_seed(seed, "order"))
    batch_size = min(cfg.batch_size, len(utts))
    perm: list[int] = []
    reports: list[LossReport] = []

    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        model.train()
        for step in range(steps):
            while len(perm) < batch_size:
                perm.extend(order_rng.permutation(len(utts)).tolist())
            picks, perm = perm[:batch_size], perm[batch_size:]
            batch = build_batch([utts[i] for i in picks])
            loss, report = elbo_losses(model, batch, seed, step)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 5.0)
            optimizer.step()
            reports.append(report)
            if log_fh is not None:
                log_fh.write(json.dumps({"step": step, **report.to_json()}) + "\n")
                log_fh.flush()
    finally:
        if log_fh is not None:
            log_fh.close()
    return model, reports
