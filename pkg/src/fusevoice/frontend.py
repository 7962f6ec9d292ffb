"""Multimodal front-end: prompt/style/speaker encoders and their losses.

Three encoders produce fixed-width control vectors from raw inputs — no
speaker or style lookup tables, so unseen speakers and styles work at
inference time (zero-shot by construction):

* a character-level prompt encoder (``text -> style space``),
* a reference-audio style encoder (``spectrogram -> style space``),
* a reference-audio speaker encoder (``spectrogram -> speaker space``).

The two style routes are merged by a gated sum so either modality (or both)
can drive synthesis.  A gradient-reversal adversary pushes style information
*out* of the speaker embedding: the adversarial head trains to read style
from the speaker vector while the reversed gradient trains the speaker
encoder to defeat it.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .text import VOCAB_SIZE, encode_chars

MIN_AUDIO_FRAMES = 8


class FrontEndError(ValueError):
    pass


# ---------------------------------------------------------------------------
# gradient reversal


def grl_backward(grad: torch.Tensor, lam: float) -> torch.Tensor:
    """The reversal rule: upstream gradient scaled by -lam."""
    return grad.neg() * lam


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grl_backward(grad_output, ctx.lam), None


def reverse_gradient(x: torch.Tensor, lam: float = 1.0) -> torch.Tensor:
    """Identity in the forward pass; scales gradients by -lam in the backward."""
    return _GradientReversal.apply(x, lam)


# ---------------------------------------------------------------------------
# encoders


def _normed(x: torch.Tensor) -> torch.Tensor:
    """Parameter-free layer norm over the last dim.

    Both style routes emit through this so their embeddings live on a common
    scale: the prompt route would otherwise dwarf the audio route by an order
    of magnitude, and the audio reference could never pull the combined style
    vector anywhere at inference time.
    """
    return F.layer_norm(x, x.shape[-1:])


class PromptEncoder(nn.Module):
    """Characters -> style vector: embedding, two conv layers, self-attention, pool."""

    def __init__(self, d_style: int, hidden: int, heads: int = 2, max_len: int = 64):
        super().__init__()
        self.max_len = max_len
        self.emb = nn.Embedding(VOCAB_SIZE, hidden, padding_idx=0)
        self.conv1 = nn.Conv1d(hidden, hidden, 3, padding=1)
        self.conv2 = nn.Conv1d(hidden, hidden, 3, padding=1)
        self.act = nn.GELU()
        self.attn = nn.MultiheadAttention(hidden, heads, batch_first=True)
        self.out = nn.Linear(hidden, d_style)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        if ids.dim() != 2:
            raise FrontEndError(f"prompt encoder expects [B, L] ids, got {tuple(ids.shape)}")
        if ids.shape[1] > self.max_len:
            raise FrontEndError(
                f"prompt length {ids.shape[1]} exceeds the maximum of {self.max_len}"
            )
        if mask is None:
            mask = ids != 0
        x = self.emb(ids)
        # Keep padded lanes at zero between convs so batched encoding matches
        # the single-item path (conv bias would otherwise bleed across the edge).
        lanes = mask.unsqueeze(-1)
        x = self.act(self.conv1(x.transpose(1, 2)).transpose(1, 2)) * lanes
        x = self.act(self.conv2(x.transpose(1, 2)).transpose(1, 2)) * lanes
        x, _ = self.attn(x, x, x, key_padding_mask=~mask, need_weights=False)
        denom = mask.sum(dim=1, keepdim=True).clamp(min=1)
        pooled = (x * mask.unsqueeze(-1)).sum(dim=1) / denom
        return _normed(self.out(pooled))

    def encode(self, prompt: str) -> torch.Tensor:
        """Single prompt string -> [d_style] vector."""
        if not prompt:
            raise FrontEndError("cannot encode an empty prompt")
        ids = torch.tensor([encode_chars(prompt)], dtype=torch.long)
        return self.forward(ids).squeeze(0)


class AudioEncoder(nn.Module):
    """Reference spectrogram -> control vector: per-frame MLP then masked mean.

    Frame-local features plus mean pooling make the embedding invariant to
    how long the reference is (a duplicated reference pools to the same mean).
    """

    def __init__(
        self,
        bins: int,
        out_dim: int,
        hidden: int,
        name: str = "audio encoder",
        normalize: bool = False,
    ):
        super().__init__()
        self.bins = bins
        self.name = name
        self.normalize = normalize
        self.frame_net = nn.Sequential(
            nn.Linear(bins, hidden),
            nn.GELU(),
            nn.Linear(hidden, hidden),
            nn.GELU(),
        )
        self.out = nn.Linear(hidden, out_dim)

    def forward(self, spec: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        squeeze = spec.dim() == 2
        if squeeze:
            spec = spec.unsqueeze(0)
        if spec.dim() != 3:
            raise FrontEndError(
                f"{self.name} expects [frames, bins] or [B, frames, bins], got {tuple(spec.shape)}"
            )
        if spec.shape[-1] != self.bins:
            raise FrontEndError(
                f"{self.name} expects {self.bins} frequency bins, got {spec.shape[-1]}"
            )
        if mask is None:
            mask = spec.new_ones(spec.shape[:2], dtype=torch.bool)
        counts = mask.sum(dim=1)
        if (counts < MIN_AUDIO_FRAMES).any():
            raise FrontEndError(
                f"{self.name} needs at least {MIN_AUDIO_FRAMES} frames, got {int(counts.min())}"
            )
        x = self.frame_net(torch.log1p(spec.clamp(min=0)))
        pooled = (x * mask.unsqueeze(-1)).sum(dim=1) / counts.unsqueeze(-1)
        out = self.out(pooled)
        if self.normalize:
            out = _normed(out)
        return out.squeeze(0) if squeeze else out


# ---------------------------------------------------------------------------
# the front end proper


@dataclass
class FrontEmbeddings:
    prompt_style: torch.Tensor  # [B, d_style]
    audio_style: torch.Tensor  # [B, d_style]
    speaker: torch.Tensor  # [B, d_spk]


@dataclass
class FrontLosses:
    """The four front-end terms; ``total`` is their exact left-to-right sum."""

    text_style: torch.Tensor
    audio_style: torch.Tensor
    spk: torch.Tensor
    style_grl: torch.Tensor
    total: torch.Tensor


def combine_style(
    audio_style: torch.Tensor, prompt_style: torch.Tensor, gate: torch.Tensor | float
) -> torch.Tensor:
    """Gated elementwise merge of the two style routes: gate * audio + prompt."""
    if audio_style.shape != prompt_style.shape:
        raise FrontEndError(
            f"style vectors disagree: audio {tuple(audio_style.shape)} "
            f"vs prompt {tuple(prompt_style.shape)}"
        )
    return gate * audio_style + prompt_style


class FrontEnd(nn.Module):
    def __init__(
        self,
        bins: int,
        d_style: int,
        d_spk: int,
        hidden: int,
        n_styles: int,
        n_speakers: int,
        grl_lambda: float = 1.0,
        heads: int = 2,
        max_prompt_len: int = 64,
    ):
        super().__init__()
        self.d_style = d_style
        self.d_spk = d_spk
        self.grl_lambda = grl_lambda
        self.prompt_enc = PromptEncoder(d_style, hidden, heads, max_prompt_len)
        self.style_audio_enc = AudioEncoder(
            bins, d_style, hidden, name="style audio encoder", normalize=True
        )
        self.speaker_enc = AudioEncoder(bins, d_spk, hidden, name="speaker encoder")
        self.text_style_head = nn.Linear(d_style, n_styles)
        self.audio_style_head = nn.Linear(d_style, n_styles)
        self.spk_head = nn.Linear(d_spk, n_speakers)
        self.adv_style_head = nn.Linear(d_spk, n_styles)

    # single-item conveniences -------------------------------------------------
    def encode_prompt(self, prompt: str) -> torch.Tensor:
        return self.prompt_enc.encode(prompt)

    def encode_style_audio(self, spec: torch.Tensor) -> torch.Tensor:
        return self.style_audio_enc(spec)

    def encode_speaker(self, spec: torch.Tensor) -> torch.Tensor:
        return self.speaker_enc(spec)

    # batched training path ----------------------------------------------------
    def embed_batch(
        self,
        specs: torch.Tensor,
        frame_mask: torch.Tensor,
        prompt_ids: torch.Tensor,
        prompt_mask: torch.Tensor,
    ) -> FrontEmbeddings:
        return FrontEmbeddings(
            prompt_style=self.prompt_enc(prompt_ids, prompt_mask),
            audio_style=self.style_audio_enc(specs, frame_mask),
            speaker=self.speaker_enc(specs, frame_mask),
        )

    def losses_from(
        self,
        embeds: FrontEmbeddings,
        style_ids: torch.Tensor,
        speaker_ids: torch.Tensor,
    ) -> FrontLosses:
        n_styles = self.text_style_head.out_features
        n_speakers = self.spk_head.out_features
        if style_ids.numel() and not bool((style_ids >= 0).all() & (style_ids < n_styles).all()):
            raise FrontEndError(
                f"style label out of range: expected ids in [0, {n_styles}), "
                f"got min={int(style_ids.min())} max={int(style_ids.max())}"
            )
        if speaker_ids.numel() and not bool(
            (speaker_ids >= 0).all() & (speaker_ids < n_speakers).all()
        ):
            raise FrontEndError(
                f"speaker label out of range: expected ids in [0, {n_speakers}), "
                f"got min={int(speaker_ids.min())} max={int(speaker_ids.max())}"
            )
        text_style = F.cross_entropy(self.text_style_head(embeds.prompt_style), style_ids)
        audio_style = F.cross_entropy(self.audio_style_head(embeds.audio_style), style_ids)
        spk = F.cross_entropy(self.spk_head(embeds.speaker), speaker_ids)
        reversed_spk = reverse_gradient(embeds.speaker, self.grl_lambda)
        style_grl = F.cross_entropy(self.adv_style_head(reversed_spk), style_ids)
        total = text_style + audio_style + spk + style_grl
        return FrontLosses(text_style, audio_style, spk, style_grl, total)

    def losses(
        self,
        specs: torch.Tensor,
        frame_mask: torch.Tensor,
        prompt_ids: torch.Tensor,
        prompt_mask: torch.Tensor,
        style_ids: torch.Tensor,
        speaker_ids: torch.Tensor,
    ) -> FrontLosses:
        embeds = self.embed_batch(specs, frame_mask, prompt_ids, prompt_mask)
        return self.losses_from(embeds, style_ids, speaker_ids)
