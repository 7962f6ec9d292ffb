"""Invertible flows: the acoustic latent flow and the duration flow.

Both are stacks of affine coupling layers.  Each layer passes one half of the
channels through untouched, predicts a shift and log-scale for the other half
from the passed half (plus conditioning), and applies an elementwise affine
map.  The log-determinant of the Jacobian is the sum of the log-scales over
transformed entries.  Layers alternate which half is transformed so every
channel gets moved.  Shift/log-scale output projections start at zero, so a
fresh flow is the identity with log-det 0.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .fusion import ControlFusion, make_fusion_block

LOG_TWO_PI = math.log(2.0 * math.pi)

# ceiling on per-token frame count when sampling durations from an
# unconverged flow; keeps synthesis memory bounded
MAX_FRAMES_PER_TOKEN = 64

# soft bound on coupling log-scales: tanh-saturating at +/-5 keeps exp() in
# range during training spikes while staying linear (and zero at zero) around
# the identity initialisation
_LOGSCALE_LIMIT = 5.0


def _bounded(logscale: torch.Tensor) -> torch.Tensor:
    return _LOGSCALE_LIMIT * torch.tanh(logscale / _LOGSCALE_LIMIT)


class FlowError(ValueError):
    pass


class AffineCoupling(nn.Module):
    """One coupling layer over [B, T, C] latents, conditioned via a fusion block.

    With ``flip`` unset the first half passes through and the second half is
    moved; with it set the roles are exchanged.
    """

    def __init__(
        self,
        channels: int,
        d_model: int,
        d_style: int,
        d_spk: int,
        variant: str = "hctscm",
        heads: int = 2,
        kernel: int = 5,
        ffn_mult: int = 2,
        flip: bool = False,
    ):
        super().__init__()
        if channels % 2 != 0:
            raise FlowError(f"coupling needs an even channel count, got {channels}")
        self.channels = channels
        self.half = channels // 2
        self.flip = flip
        self.in_proj = nn.Linear(self.half, d_model)
        self.block: ControlFusion = make_fusion_block(
            variant, d_model, d_style, d_spk, heads, kernel, ffn_mult
        )
        self.shift_proj = nn.Linear(d_model, self.half)
        self.logscale_proj = nn.Linear(d_model, self.half)
        nn.init.zeros_(self.shift_proj.weight)
        nn.init.zeros_(self.shift_proj.bias)
        nn.init.zeros_(self.logscale_proj.weight)
        nn.init.zeros_(self.logscale_proj.bias)

    def _params(self, z_pass, style, speaker, mask, collect=None):
        h = self.block(self.in_proj(z_pass), style, speaker, mask=mask, collect=collect)
        return self.shift_proj(h), _bounded(self.logscale_proj(h))

    def _split(self, z):
        lo, hi = z[..., : self.half], z[..., self.half :]
        return (hi, lo) if self.flip else (lo, hi)

    def _join(self, z_pass, moved):
        return torch.cat([moved, z_pass] if self.flip else [z_pass, moved], dim=-1)

    def forward(self, z, style, speaker, mask=None, collect=None):
        z_pass, z_move = self._split(z)
        shift, logscale = self._params(z_pass, style, speaker, mask, collect)
        moved = shift + torch.exp(logscale) * z_move
        if mask is not None:
            m = mask.unsqueeze(-1).to(moved.dtype)
            moved = moved * m
            logdet = (logscale * m).sum(dim=(-2, -1))
        else:
            logdet = logscale.sum(dim=(-2, -1))
        return self._join(z_pass, moved), logdet

    def inverse(self, y, style, speaker, mask=None, collect=None):
        y_pass, y_move = self._split(y)
        shift, logscale = self._params(y_pass, style, speaker, mask, collect)
        moved = (y_move - shift) * torch.exp(-logscale)
        if mask is not None:
            moved = moved * mask.unsqueeze(-1).to(moved.dtype)
        return self._join(y_pass, moved)


class AcousticFlow(nn.Module):
    """Stack of coupling layers over the acoustic latent, with half-swaps between."""

    def __init__(
        self,
        channels: int,
        d_model: int,
        d_style: int,
        d_spk: int,
        layers: int = 4,
        variant: str = "hctscm",
        heads: int = 2,
        kernel: int = 5,
        ffn_mult: int = 2,
    ):
        super().__init__()
        self.channels = channels
        self.layers = nn.ModuleList(
            AffineCoupling(
                channels, d_model, d_style, d_spk, variant, heads, kernel, ffn_mult,
                flip=bool(i % 2),
            )
            for i in range(layers)
        )

    def forward(self, z, style, speaker, mask=None):
        if z.shape[-1] != self.channels:
            raise FlowError(f"acoustic flow expects {self.channels} channels, got {z.shape[-1]}")
        total = None
        for layer in self.layers:
            z, logdet = layer(z, style, speaker, mask=mask)
            total = logdet if total is None else total + logdet
        return z, total

    def inverse(self, fz, style, speaker, mask=None, collect=None):
        """Map flow space back to latent space; ``collect`` (if given) captures
        the internals of the final forward-order layer's fusion block."""
        if fz.shape[-1] != self.channels:
            raise FlowError(f"acoustic flow expects {self.channels} channels, got {fz.shape[-1]}")
        n = len(self.layers)
        z = fz
        for i in reversed(range(n)):
            z = self.layers[i].inverse(
                z, style, speaker, mask=mask, collect=collect if i == n - 1 else None
            )
        return z


class _DurationCoupling(nn.Module):
    """Coupling over the 2-channel duration variable, conditioned per token."""

    def __init__(self, d_model: int, hidden: int, flip: bool = False):
        super().__init__()
        self.flip = flip
        self.net = nn.Sequential(
            nn.Linear(1 + d_model, hidden),
            nn.GELU(),
            nn.Linear(hidden, hidden),
            nn.GELU(),
            nn.Linear(hidden, 2),
        )
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def _params(self, x_pass, h):
        out = self.net(torch.cat([x_pass, h], dim=-1))
        return out[..., :1], _bounded(out[..., 1:])

    def _split(self, x):
        lo, hi = x[..., :1], x[..., 1:]
        return (hi, lo) if self.flip else (lo, hi)

    def _join(self, x_pass, moved):
        return torch.cat([moved, x_pass] if self.flip else [x_pass, moved], dim=-1)

    def forward(self, x, h, mask=None):
        x_pass, x_move = self._split(x)
        shift, logscale = self._params(x_pass, h)
        moved = shift + torch.exp(logscale) * x_move
        if mask is not None:
            m = mask.unsqueeze(-1).to(moved.dtype)
            moved = moved * m
            logdet = (logscale * m).sum(dim=(-2, -1))
        else:
            logdet = logscale.sum(dim=(-2, -1))
        return self._join(x_pass, moved), logdet

    def inverse(self, y, h, mask=None):
        y_pass, y_move = self._split(y)
        shift, logscale = self._params(y_pass, h)
        moved = (y_move - shift) * torch.exp(-logscale)
        if mask is not None:
            moved = moved * mask.unsqueeze(-1).to(moved.dtype)
        return self._join(y_pass, moved)


class DurationFlow(nn.Module):
    """Normalising flow over (log-duration, auxiliary noise) pairs per token.

    Training maximises the likelihood of observed alignment durations under a
    standard normal base; sampling inverts the flow on scaled noise and
    exponentiates the duration channel.
    """

    def __init__(self, d_model: int, hidden: int, layers: int = 2):
        super().__init__()
        self.layers = nn.ModuleList(
            _DurationCoupling(d_model, hidden, flip=bool(i % 2)) for i in range(layers)
        )

    def forward(self, x, h, mask=None):
        total = None
        for layer in self.layers:
            x, logdet = layer(x, h, mask=mask)
            total = logdet if total is None else total + logdet
        return x, total

    def inverse(self, y, h, mask=None):
        x = y
        for layer in reversed(self.layers):
            x = layer.inverse(x, h, mask=mask)
        return x

    def nll(self, log_durations, h, mask, noise):
        """Mean negative log-likelihood per valid token.

        ``log_durations``: [B, T]; ``noise``: [B, T] auxiliary standard-normal
        channel; ``h``: [B, T, d_model] conditioning; ``mask``: [B, T] bool.
        """
        x = torch.stack([log_durations, noise], dim=-1)
        y, logdet = self.forward(x, h, mask=mask)
        m = mask.unsqueeze(-1).to(y.dtype) if mask is not None else torch.ones_like(y)
        base = (0.5 * (y**2 + LOG_TWO_PI) * m).sum(dim=(-2, -1))
        count = m.sum(dim=(-2, -1)).clamp(min=1.0)
        return ((base - logdet) / count).mean()

    def sample(self, h, noise, mask=None):
        """Integer durations from base-space noise [B, T, 2]; each >= 1."""
        x = self.inverse(noise, h, mask=mask)
        log_d = x[..., 0].clamp(max=math.log(MAX_FRAMES_PER_TOKEN))
        durations = (
            torch.ceil(torch.exp(log_d)).long().clamp(min=1, max=MAX_FRAMES_PER_TOKEN)
        )
        if mask is not None:
            durations = durations * mask.long()
        return durations
