"""Control-fusion blocks: conformer-style layers that accept control vectors.

Three interchangeable variants, selectable by name:

* ``hctscm`` — hierarchical conditioning.  The feed-forward/attention stage is
  conditioned on the speaker vector only, the recurrent+convolutional middle
  stage on speaker and style together, and the closing feed-forward/norm stage
  on the style vector only.  Identity is injected early (it shapes every
  frame), prosodic style late (it reshapes the rendered sequence).
* ``tscm`` — the same skeleton, but one undifferentiated control vector
  (speaker and style concatenated) is injected at every conditioning site.
* ``concat`` — the control vector is added once at the block input and the
  sub-layers run unconditioned.

Blocks take ``[T, D]`` or ``[B, T, D]`` hidden sequences plus an optional
boolean frame mask, and can expose named internal activations for probing.
"""

from __future__ import annotations

import torch
from torch import nn

VARIANTS = ("hctscm", "tscm", "concat")


class FusionError(ValueError):
    """Shape/contract violation inside a fusion block, naming the sub-layer."""


def _check_dim(tensor: torch.Tensor, want: int, sublayer: str, role: str) -> None:
    if tensor.shape[-1] != want:
        raise FusionError(
            f"{sublayer}: expected {role} dim {want}, got {tensor.shape[-1]}"
        )


class _FeedForward(nn.Module):
    def __init__(self, d_model: int, mult: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, mult * d_model),
            nn.GELU(),
            nn.Linear(mult * d_model, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class _DepthwiseConv(nn.Module):
    """Per-channel temporal convolution, length preserving."""

    def __init__(self, d_model: int, kernel: int):
        super().__init__()
        self.conv = nn.Conv1d(
            d_model, d_model, kernel, padding=kernel // 2, groups=d_model
        )
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # [B, T, D]
        return self.act(self.conv(x.transpose(1, 2)).transpose(1, 2))


def _as_batched(w: torch.Tensor, name: str) -> tuple[torch.Tensor, bool]:
    if w.dim() == 2:
        return w.unsqueeze(0), True
    if w.dim() == 3:
        return w, False
    raise FusionError(f"{name}: hidden sequence must be [T, D] or [B, T, D], got {tuple(w.shape)}")


def _as_control(vec: torch.Tensor, batch: int, name: str) -> torch.Tensor:
    if vec.dim() == 1:
        return vec.unsqueeze(0).expand(batch, -1)
    if vec.dim() == 2:
        if vec.shape[0] != batch:
            raise FusionError(
                f"{name}: control batch {vec.shape[0]} does not match sequence batch {batch}"
            )
        return vec
    raise FusionError(f"{name}: control vector must be [D] or [B, D], got {tuple(vec.shape)}")


class _BlockCore(nn.Module):
    """Shared skeleton: FFN -> self-attention -> (GRU + conv) -> FFN -> LayerNorm.

    Subclasses decide what gets added where via the ``cond_*`` hooks.
    """

    def __init__(self, d_model: int, heads: int, kernel: int, ffn_mult: int):
        super().__init__()
        self.d_model = d_model
        self.ffn1 = _FeedForward(d_model, ffn_mult)
        self.attn = nn.MultiheadAttention(d_model, heads, batch_first=True)
        self.gru = nn.GRU(d_model, d_model, batch_first=True)
        self.conv = _DepthwiseConv(d_model, kernel)
        self.ffn2 = _FeedForward(d_model, ffn_mult)
        self.norm = nn.LayerNorm(d_model)

    # conditioning hooks; base class injects nothing
    def cond_entry(self, w, style, speaker):
        return w

    def cond_ffn1(self, w, style, speaker):
        return w

    def cond_recurrent(self, w, style, speaker) -> torch.Tensor | None:
        """Returns the [B, D] vector added to GRU input and used as h0, or None."""
        return None

    def cond_ffn2(self, w, style, speaker):
        return w

    def forward(
        self,
        w: torch.Tensor,
        style: torch.Tensor,
        speaker: torch.Tensor,
        mask: torch.Tensor | None = None,
        collect: dict | None = None,
    ) -> torch.Tensor:
        w, squeeze = _as_batched(w, type(self).__name__)
        _check_dim(w, self.d_model, type(self).__name__, "hidden")
        b = w.shape[0]
        style = _as_control(style, b, "style conditioning")
        speaker = _as_control(speaker, b, "speaker conditioning")
        if mask is not None:
            if mask.dim() == 1:
                mask = mask.unsqueeze(0)
            mask = mask.to(dtype=torch.bool)
            if mask.shape != w.shape[:2]:
                raise FusionError(
                    f"frame mask: expected shape {tuple(w.shape[:2])}, got {tuple(mask.shape)}"
                )

        def grab(name: str, val: torch.Tensor) -> None:
            if collect is not None:
                collect[name] = (val.squeeze(0) if squeeze else val).detach()

        grab("input", w)
        w = self.cond_entry(w, style, speaker)
        w = self.cond_ffn1(w, style, speaker)
        grab("ffn1_in", w)
        w = self.ffn1(w)
        kpm = None if mask is None else ~mask
        w, _ = self.attn(w, w, w, key_padding_mask=kpm, need_weights=False)
        if mask is not None:
            # keep padded lanes at zero so the conv branch cannot leak them in
            w = w * mask.unsqueeze(-1)
        grab("post_attn", w)

        g = self.cond_recurrent(w, style, speaker)
        if g is None:
            gru_in = w
            h0 = w.new_zeros(1, b, self.d_model)
        else:
            gru_in = w + g.unsqueeze(1)
            h0 = g.unsqueeze(0).contiguous()
        gru_out, _ = self.gru(gru_in, h0)
        conv_out = self.conv(w)
        grab("gru_branch", gru_out)
        grab("conv_branch", conv_out)
        w = gru_out + conv_out
        grab("merged", w)

        w = self.cond_ffn2(w, style, speaker)
        grab("ffn2_in", w)
        out = self.norm(self.ffn2(w))
        if mask is not None:
            out = out * mask.unsqueeze(-1)
        grab("output", out)
        return out.squeeze(0) if squeeze else out


class HierarchicalFusionBlock(_BlockCore):
    """Speaker conditions the entry stage, style the exit stage, both the middle."""

    def __init__(
        self,
        d_model: int,
        d_style: int,
        d_spk: int,
        heads: int = 2,
        kernel: int = 5,
        ffn_mult: int = 2,
    ):
        super().__init__(d_model, heads, kernel, ffn_mult)
        self.d_style = d_style
        self.d_spk = d_spk
        # bias-free projections: a zero control vector injects exactly nothing
        self.spk_entry = nn.Linear(d_spk, d_model, bias=False)
        self.spk_mid = nn.Linear(d_spk, d_model, bias=False)
        self.style_mid = nn.Linear(d_style, d_model, bias=False)
        self.style_exit = nn.Linear(d_style, d_model, bias=False)

    def cond_ffn1(self, w, style, speaker):
        _check_dim(speaker, self.d_spk, "ffn1 speaker conditioning", "speaker")
        return w + self.spk_entry(speaker).unsqueeze(1)

    def cond_recurrent(self, w, style, speaker):
        _check_dim(speaker, self.d_spk, "recurrent speaker conditioning", "speaker")
        _check_dim(style, self.d_style, "recurrent style conditioning", "style")
        return self.spk_mid(speaker) + self.style_mid(style)

    def cond_ffn2(self, w, style, speaker):
        _check_dim(style, self.d_style, "ffn2 style conditioning", "style")
        return w + self.style_exit(style).unsqueeze(1)


class SingleVectorFusionBlock(_BlockCore):
    """Same skeleton, one fused control vector at every conditioning site."""

    def __init__(
        self,
        d_model: int,
        d_ctrl: int,
        heads: int = 2,
        kernel: int = 5,
        ffn_mult: int = 2,
    ):
        super().__init__(d_model, heads, kernel, ffn_mult)
        self.d_ctrl = d_ctrl
        self.ctrl_entry = nn.Linear(d_ctrl, d_model, bias=False)
        self.ctrl_mid = nn.Linear(d_ctrl, d_model, bias=False)
        self.ctrl_exit = nn.Linear(d_ctrl, d_model, bias=False)

    # control arrives pre-fused in the ``style`` slot; ``speaker`` is unused
    def cond_ffn1(self, w, style, speaker):
        _check_dim(style, self.d_ctrl, "ffn1 control conditioning", "control")
        return w + self.ctrl_entry(style).unsqueeze(1)

    def cond_recurrent(self, w, style, speaker):
        return self.ctrl_mid(style)

    def cond_ffn2(self, w, style, speaker):
        return w + self.ctrl_exit(style).unsqueeze(1)


class ConcatFusionBlock(_BlockCore):
    """Control is added once at the block input; sub-layers run unconditioned."""

    def __init__(
        self,
        d_model: int,
        d_ctrl: int,
        heads: int = 2,
        kernel: int = 5,
        ffn_mult: int = 2,
    ):
        super().__init__(d_model, heads, kernel, ffn_mult)
        self.d_ctrl = d_ctrl
        self.ctrl_entry = nn.Linear(d_ctrl, d_model, bias=False)

    def cond_entry(self, w, style, speaker):
        _check_dim(style, self.d_ctrl, "input control conditioning", "control")
        return w + self.ctrl_entry(style).unsqueeze(1)


class ControlFusion(nn.Module):
    """Variant-dispatching wrapper with a uniform (w, style, speaker) interface."""

    def __init__(
        self,
        variant: str,
        d_model: int,
        d_style: int,
        d_spk: int,
        heads: int = 2,
        kernel: int = 5,
        ffn_mult: int = 2,
    ):
        super().__init__()
        if variant not in VARIANTS:
            raise FusionError(f"unknown fusion variant {variant!r}; expected one of {list(VARIANTS)}")
        self.variant = variant
        self.d_style = d_style
        self.d_spk = d_spk
        if variant == "hctscm":
            self.block = HierarchicalFusionBlock(d_model, d_style, d_spk, heads, kernel, ffn_mult)
        elif variant == "tscm":
            self.block = SingleVectorFusionBlock(d_model, d_style + d_spk, heads, kernel, ffn_mult)
        else:
            self.block = ConcatFusionBlock(d_model, d_style + d_spk, heads, kernel, ffn_mult)

    def forward(
        self,
        w: torch.Tensor,
        style: torch.Tensor,
        speaker: torch.Tensor,
        mask: torch.Tensor | None = None,
        collect: dict | None = None,
    ) -> torch.Tensor:
        if self.variant == "hctscm":
            return self.block(w, style, speaker, mask=mask, collect=collect)
        batch = w.shape[0] if w.dim() == 3 else 1
        style_b = _as_control(style, batch, "style conditioning")
        spk_b = _as_control(speaker, batch, "speaker conditioning")
        _check_dim(style_b, self.d_style, "fused control", "style")
        _check_dim(spk_b, self.d_spk, "fused control", "speaker")
        ctrl = torch.cat([style_b, spk_b], dim=-1)
        if w.dim() == 2:
            ctrl = ctrl.squeeze(0)
        return self.block(w, ctrl, ctrl, mask=mask, collect=collect)


def make_fusion_block(
    variant: str,
    d_model: int,
    d_style: int,
    d_spk: int,
    heads: int = 2,
    kernel: int = 5,
    ffn_mult: int = 2,
) -> ControlFusion:
    return ControlFusion(variant, d_model, d_style, d_spk, heads, kernel, ffn_mult)
