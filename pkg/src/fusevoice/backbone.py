"""Conditional-VAE synthesis backbone.

Training view: a posterior encoder reads the target spectrogram into a
diagonal Gaussian over the flow-space latent; the text encoder (a stack of
control-fusion blocks) predicts a token-level Gaussian prior; monotonic
alignment expands the prior to frame rate; the ELBO combines an L1
reconstruction term (decode the flow-inverted latent), the closed-form KL
between posterior and expanded prior, and a duration-flow NLL on the
alignment durations.  Control embeddings from the front end condition every
fusion block, the posterior, and the flows.

Synthesis view: encode text under the control embeddings, sample durations
from the duration flow, expand the prior, draw a temperature-scaled sample,
invert the acoustic flow, decode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .alignment import best_monotonic_path, pairwise_gaussian_loglik
from .config import RunConfig
from .flows import MAX_FRAMES_PER_TOKEN, AcousticFlow, DurationFlow
from .frontend import FrontEnd, combine_style
from .fusion import ControlFusion
from .seeding import torch_generator
from .text import VOCAB_SIZE, encode_chars


class ControlError(ValueError):
    """Missing or contradictory synthesis controls."""


def gaussian_kl(
    m_q: torch.Tensor,
    logs_q: torch.Tensor,
    m_p: torch.Tensor,
    logs_p: torch.Tensor,
) -> torch.Tensor:
    """Elementwise KL(q || p) between diagonal Gaussians given means/log-stds.

    Written so the identical-distribution case is exactly zero and unit-std
    cases stay exact in float32: exp(0) == 1 carries no rounding.
    """
    return (
        (logs_p - logs_q)
        + 0.5 * torch.exp(2.0 * (logs_q - logs_p))
        + 0.5 * (m_q - m_p) ** 2 * torch.exp(-2.0 * logs_p)
        - 0.5
    )


class TextEncoder(nn.Module):
    """Character embedding + fusion-block stack + token-prior heads."""

    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.emb = nn.Embedding(VOCAB_SIZE, cfg.d_model, padding_idx=0)
        self.blocks = nn.ModuleList(
            ControlFusion(
                cfg.fusion,
                cfg.d_model,
                cfg.d_style,
                cfg.d_spk,
                cfg.attn_heads,
                cfg.conv_kernel,
                cfg.ffn_mult,
            )
            for _ in range(cfg.text_blocks)
        )
        self.mean_head = nn.Linear(cfg.d_model, cfg.latent_channels)
        self.logstd_head = nn.Linear(cfg.d_model, cfg.latent_channels)
        self.logstd_min = cfg.logstd_min
        self.logstd_max = cfg.logstd_max

    def forward(self, ids, mask, style, speaker):
        x = self.emb(ids)
        for block in self.blocks:
            x = block(x, style, speaker, mask=mask)
        m = self.mean_head(x)
        logs = self.logstd_head(x).clamp(self.logstd_min, self.logstd_max)
        if mask is not None:
            m = m * mask.unsqueeze(-1)
            logs = logs * mask.unsqueeze(-1)
        return x, m, logs


class PosteriorEncoder(nn.Module):
    """Spectrogram -> diagonal Gaussian over the flow-space latent."""

    def __init__(self, cfg: RunConfig):
        super().__init__()
        h = cfg.enc_hidden
        self.conv1 = nn.Conv1d(cfg.bins, h, cfg.conv_kernel, padding=cfg.conv_kernel // 2)
        self.conv2 = nn.Conv1d(h, h, cfg.conv_kernel, padding=cfg.conv_kernel // 2)
        self.ctrl = nn.Linear(cfg.d_style + cfg.d_spk, h, bias=False)
        self.act = nn.GELU()
        self.out = nn.Linear(h, 2 * cfg.latent_channels)
        self.latent_channels = cfg.latent_channels
        self.bins = cfg.bins
        self.logstd_min = cfg.logstd_min
        self.logstd_max = cfg.logstd_max

    def forward(self, spec, mask, style, speaker):
        if spec.shape[-1] != self.bins:
            raise ValueError(
                f"posterior encoder: expected {self.bins} frequency bins, got {spec.shape[-1]}"
            )
        x = torch.log1p(spec.clamp(min=0))
        x = self.act(self.conv1(x.transpose(1, 2)).transpose(1, 2))
        ctrl = self.ctrl(torch.cat([style, speaker], dim=-1))
        x = x + ctrl.unsqueeze(1)
        x = self.act(self.conv2(x.transpose(1, 2)).transpose(1, 2))
        out = self.out(x)
        m, logs = out.chunk(2, dim=-1)
        logs = logs.clamp(self.logstd_min, self.logstd_max)
        if mask is not None:
            m = m * mask.unsqueeze(-1)
            logs = logs * mask.unsqueeze(-1)
        return m, logs


class Decoder(nn.Module):
    """Latent frames -> non-negative spectrogram (transposed-conv mirror)."""

    def __init__(self, cfg: RunConfig):
        super().__init__()
        h = cfg.enc_hidden
        k = cfg.conv_kernel
        self.up1 = nn.ConvTranspose1d(cfg.latent_channels, h, k, padding=k // 2)
        self.up2 = nn.ConvTranspose1d(h, h, k, padding=k // 2)
        self.act = nn.GELU()
        self.out = nn.Conv1d(h, cfg.bins, 1)

    def forward(self, z, mask=None):
        x = self.act(self.up1(z.transpose(1, 2)))
        x = self.act(self.up2(x))
        spec = F.softplus(self.out(x)).transpose(1, 2)
        if mask is not None:
            spec = spec * mask.unsqueeze(-1)
        return spec


class Model(nn.Module):
    """Everything trainable, wired together."""

    def __init__(self, cfg: RunConfig, n_speakers: int, n_styles: int):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.n_speakers = n_speakers
        self.n_styles = n_styles
        self.frontend = FrontEnd(
            bins=cfg.bins,
            d_style=cfg.d_style,
            d_spk=cfg.d_spk,
            hidden=cfg.enc_hidden,
            n_styles=n_styles,
            n_speakers=n_speakers,
            grl_lambda=cfg.grl_lambda,
            heads=cfg.attn_heads,
            max_prompt_len=cfg.max_prompt_len,
        )
        self.text_encoder = TextEncoder(cfg)
        self.dur_block = ControlFusion(
            cfg.fusion, cfg.d_model, cfg.d_style, cfg.d_spk,
            cfg.attn_heads, cfg.conv_kernel, cfg.ffn_mult,
        )
        self.dur_flow = DurationFlow(cfg.d_model, cfg.enc_hidden, cfg.dur_flow_layers)
        self.flow = AcousticFlow(
            cfg.latent_channels, cfg.d_model, cfg.d_style, cfg.d_spk,
            layers=cfg.flow_layers, variant=cfg.fusion,
            heads=cfg.attn_heads, kernel=cfg.conv_kernel, ffn_mult=cfg.ffn_mult,
        )
        self.posterior = PosteriorEncoder(cfg)
        self.decoder = Decoder(cfg)


# ---------------------------------------------------------------------------
# training batch and losses


@dataclass
class Batch:
    text_ids: torch.Tensor  # [B, L] long, 0-padded
    text_mask: torch.Tensor  # [B, L] bool
    prompt_ids: torch.Tensor  # [B, P] long, 0-padded
    prompt_mask: torch.Tensor  # [B, P] bool
    specs: torch.Tensor  # [B, T, bins] float, 0-padded
    frame_mask: torch.Tensor  # [B, T] bool
    style_ids: torch.Tensor  # [B] long
    speaker_ids: torch.Tensor  # [B] long

    def __len__(self) -> int:
        return self.text_ids.shape[0]


@dataclass
class LossReport:
    total: float
    syn: float
    recon: float
    kl: float
    dur: float
    text_style: float
    audio_style: float
    spk: float
    style_grl: float

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _expand_prior(m_p, logs_p, batch_paths, frame_mask):
    """Gather token-level stats out to frame rate along the alignment paths."""
    b, t = frame_mask.shape
    c = m_p.shape[-1]
    idx = torch.zeros(b, t, dtype=torch.long)
    for i, path in enumerate(batch_paths):
        idx[i, : len(path)] = torch.from_numpy(path)
    gather = idx.unsqueeze(-1).expand(b, t, c)
    m = torch.gather(m_p, 1, gather) * frame_mask.unsqueeze(-1)
    logs = torch.gather(logs_p, 1, gather) * frame_mask.unsqueeze(-1)
    return m, logs


def elbo_losses(
    model: Model, batch: Batch, seed: int, step: int = 0
) -> tuple[torch.Tensor, LossReport]:
    """One training objective evaluation; returns (backprop tensor, report)."""
    cfg = model.cfg
    gen = torch_generator(seed, "elbo", step)
    b = len(batch)

    # control embeddings from the reference audio / prompt routes
    embeds = model.frontend.embed_batch(
        batch.specs, batch.frame_mask, batch.prompt_ids, batch.prompt_mask
    )
    front = model.frontend.losses_from(embeds, batch.style_ids, batch.speaker_ids)
    gate = (torch.rand(b, 1, generator=gen) < cfg.gate_prob).to(embeds.audio_style.dtype)
    emb_style = combine_style(embeds.audio_style, embeds.prompt_style, gate)
    emb_spk = embeds.speaker

    # token prior and frame posterior
    h, m_p, logs_p = model.text_encoder(batch.text_ids, batch.text_mask, emb_style, emb_spk)
    m_q, logs_q = model.posterior(batch.specs, batch.frame_mask, emb_style, emb_spk)
    eps = torch.randn(m_q.shape, generator=gen)
    fz = (m_q + torch.exp(logs_q) * eps) * batch.frame_mask.unsqueeze(-1)

    # hard monotonic alignment on detached stats
    paths = []
    durations = torch.zeros_like(batch.text_ids, dtype=torch.float32)
    with torch.no_grad():
        for i in range(b):
            n_tok = int(batch.text_mask[i].sum())
            n_frames = int(batch.frame_mask[i].sum())
            ll = pairwise_gaussian_loglik(
                m_p[i, :n_tok].numpy(),
                logs_p[i, :n_tok].numpy(),
                fz[i, :n_frames].numpy(),
            )
            ali = best_monotonic_path(ll)
            paths.append(ali.path)
            durations[i, :n_tok] = torch.from_numpy(ali.durations).float()

    m_p_exp, logs_p_exp = _expand_prior(m_p, logs_p, paths, batch.frame_mask)
    kl_map = gaussian_kl(m_q, logs_q, m_p_exp, logs_p_exp)
    fm = batch.frame_mask.unsqueeze(-1)
    kl = (kl_map * fm).sum() / fm.sum().clamp(min=1) / kl_map.shape[-1]

    # reconstruction through the inverse flow and decoder
    z = model.flow.inverse(fz, emb_style, emb_spk, mask=batch.frame_mask)
    spec_hat = model.decoder(z, batch.frame_mask)
    recon = ((spec_hat - batch.specs).abs() * fm).sum() / (fm.sum().clamp(min=1) * cfg.bins)

    # duration model on the alignment outcome; dequantise the integer
    # durations as d - u, u ~ U[0,1): on the bare integers the flow's
    # likelihood is unbounded (it can sharpen onto the lattice without limit),
    # while ceil(exp(.)) at sampling time inverts the shifted support exactly
    h_dur = model.dur_block(h.detach(), emb_style, emb_spk, mask=batch.text_mask)
    u = torch.rand(durations.shape, generator=gen)
    log_d = torch.log((durations - u).clamp(min=1e-3)) * batch.text_mask
    noise = torch.randn(log_d.shape, generator=gen)
    dur = model.dur_flow.nll(log_d, h_dur, batch.text_mask, noise)

    syn = recon + kl + dur
    total = front.total + syn
    report = LossReport(
        total=float(total.detach()),
        syn=float(syn.detach()),
        recon=float(recon.detach()),
        kl=float(kl.detach()),
        dur=float(dur.detach()),
        text_style=float(front.text_style.detach()),
        audio_style=float(front.audio_style.detach()),
        spk=float(front.spk.detach()),
        style_grl=float(front.style_grl.detach()),
    )
    return total, report


# ---------------------------------------------------------------------------
# synthesis


def _as_spec_tensor(spec, label: str) -> torch.Tensor:
    if isinstance(spec, np.ndarray):
        spec = torch.from_numpy(np.ascontiguousarray(spec, dtype=np.float32))
    if spec.dim() != 2:
        raise ControlError(f"{label} must be a 2-D [frames, bins] spectrogram")
    return spec.float()


def predict_durations(
    model: Model,
    h: torch.Tensor,
    style: torch.Tensor,
    speaker: torch.Tensor,
    noise: torch.Tensor,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Integer per-token durations from content ``h`` under control embeddings.

    ``noise`` is base-space input [B, T, 2]; pass zeros for the deterministic
    mode durations, scaled standard normals for sampling.
    """
    h_dur = model.dur_block(h, style, speaker, mask=mask)
    return model.dur_flow.sample(h_dur, noise, mask=mask)


def synthesize(
    model: Model,
    text: str,
    speaker_ref,
    style_prompt: str | None = None,
    style_ref=None,
    seed: int = 0,
    temperature: float | None = None,
    style_gate: float | None = None,
    collect: dict | None = None,
    info: dict | None = None,
) -> np.ndarray:
    """Render text to a spectrogram under the given controls.

    ``speaker_ref`` is mandatory reference audio for voice identity.  Style
    comes from ``style_prompt`` (text), ``style_ref`` (audio), or both; the
    audio route's gate defaults to 1 when a reference is given, else 0, and
    ``style_gate`` overrides it for fractional mixing.  ``temperature`` scales
    both prior and duration noise; 0 is fully deterministic.  Pass an empty
    dict as ``info`` to receive per-token durations and the frame count.
    """
    cfg = model.cfg
    if speaker_ref is None:
        raise ControlError("synthesis requires speaker reference audio (speaker_ref)")
    if style_prompt is None and style_ref is None:
        raise ControlError(
            "synthesis needs a style control: pass style_prompt, style_ref, or both"
        )
    if not text:
        raise ControlError("cannot synthesize empty text")
    if len(text) > cfg.max_text_len:
        raise ControlError(f"text length {len(text)} exceeds the maximum of {cfg.max_text_len}")
    ids = torch.tensor([encode_chars(text)], dtype=torch.long)
    temp = cfg.temperature if temperature is None else float(temperature)
    if temp < 0:
        raise ControlError(f"temperature must be >= 0, got {temp}")

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            spk_spec = _as_spec_tensor(speaker_ref, "speaker_ref")
            emb_spk = model.frontend.encode_speaker(spk_spec).unsqueeze(0)
            if style_ref is not None:
                sty_spec = _as_spec_tensor(style_ref, "style_ref")
                emb_audio = model.frontend.encode_style_audio(sty_spec).unsqueeze(0)
            else:
                emb_audio = torch.zeros(1, cfg.d_style)
            if style_prompt is not None:
                emb_prompt = model.frontend.encode_prompt(style_prompt).unsqueeze(0)
            else:
                emb_prompt = torch.zeros(1, cfg.d_style)
            gate = (1.0 if style_ref is not None else 0.0) if style_gate is None else float(style_gate)
            emb_style = combine_style(emb_audio, emb_prompt, gate)

            h, m_p, logs_p = model.text_encoder(ids, None, emb_style, emb_spk)
            gen = torch_generator(seed, "synth", text)
            dur_noise = torch.randn(1, ids.shape[1], 2, generator=gen) * temp
            durations = predict_durations(model, h, emb_style, emb_spk, dur_noise)[0]

            m = torch.repeat_interleave(m_p[0], durations, dim=0)
            logs = torch.repeat_interleave(logs_p[0], durations, dim=0)
            eps = torch.randn(m.shape, generator=gen) * temp
            fz = (m + torch.exp(logs) * eps).unsqueeze(0)
            z = model.flow.inverse(fz, emb_style, emb_spk, collect=collect)
            spec = model.decoder(z)[0]
    finally:
        if was_training:
            model.train()
    if info is not None:
        info["durations"] = durations.numpy().astype(np.int64)
        info["frames"] = int(durations.sum())
    return spec.numpy().astype(np.float32)


def synthesis_frame_bounds(n_tokens: int) -> tuple[int, int]:
    """Documented bounds on synthesized frame counts for a token count."""
    return n_tokens, n_tokens * MAX_FRAMES_PER_TOKEN
