"""Monotonic alignment between token-level priors and frame-level latents.

Dynamic programming over the token/frame lattice finds the monotonic,
complete (every token gets >= 1 frame) alignment maximising the summed
diagonal-Gaussian log-likelihood of frames under their assigned tokens.
Runs on detached numpy arrays; the result feeds back into training as
constant durations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEG_INF = -np.inf


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Alignment:
    durations: np.ndarray  # [tokens] int64, each >= 1, sums to frames
    path: np.ndarray  # [frames] int64 token index per frame, nondecreasing
    score: float  # total log-likelihood along the path


def pairwise_gaussian_loglik(
    mean: np.ndarray, logstd: np.ndarray, z: np.ndarray
) -> np.ndarray:
    """log N(z_t | mean_i, diag exp(2*logstd_i)) for every (token i, frame t).

    mean/logstd: [tokens, C]; z: [frames, C]; returns [tokens, frames].
    """
    mean = np.asarray(mean, dtype=np.float64)
    logstd = np.asarray(logstd, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if mean.shape != logstd.shape:
        raise AlignmentError(f"mean {mean.shape} and logstd {logstd.shape} disagree")
    if mean.shape[-1] != z.shape[-1]:
        raise AlignmentError(
            f"channel mismatch: prior has {mean.shape[-1]}, frames have {z.shape[-1]}"
        )
    diff = z[None, :, :] - mean[:, None, :]  # [N, T, C]
    inv_var = np.exp(-2.0 * logstd)[:, None, :]
    ll = -0.5 * np.log(2.0 * np.pi) - logstd[:, None, :] - 0.5 * diff**2 * inv_var
    return ll.sum(axis=-1)


def score_durations(loglik: np.ndarray, durations: np.ndarray) -> float:
    """Total path log-likelihood of an explicit duration assignment."""
    n_tok, n_frames = loglik.shape
    durations = np.asarray(durations)
    if len(durations) != n_tok or durations.sum() != n_frames or (durations < 1).any():
        raise AlignmentError(
            f"durations {durations.tolist()} do not tile {n_tok} tokens x {n_frames} frames"
        )
    path = np.repeat(np.arange(n_tok), durations)
    return float(loglik[path, np.arange(n_frames)].sum())


def best_monotonic_path(loglik: np.ndarray) -> Alignment:
    """Highest-scoring monotonic complete alignment via lattice DP.

    loglik: [tokens, frames].  Requires frames >= tokens; otherwise no
    complete alignment exists.
    """
    loglik = np.asarray(loglik, dtype=np.float64)
    n_tok, n_frames = loglik.shape
    if n_tok < 1:
        raise AlignmentError("alignment needs at least one token")
    if n_frames < n_tok:
        raise AlignmentError(
            f"cannot align {n_tok} tokens to {n_frames} frames; need frames >= tokens"
        )
    q = np.full((n_tok, n_frames), NEG_INF)
    q[0, 0] = loglik[0, 0]
    for t in range(1, n_frames):
        q[0, t] = q[0, t - 1] + loglik[0, t]
        if n_tok > 1:
            stay = q[1:, t - 1]
            advance = q[:-1, t - 1]
            q[1:, t] = np.maximum(stay, advance) + loglik[1:, t]
    path = np.empty(n_frames, dtype=np.int64)
    i = n_tok - 1
    for t in range(n_frames - 1, -1, -1):
        path[t] = i
        if t > 0 and i > 0 and q[i - 1, t - 1] >= q[i, t - 1]:
            i -= 1
    durations = np.bincount(path, minlength=n_tok)
    return Alignment(durations=durations, path=path, score=float(q[n_tok - 1, n_frames - 1]))


def monotonic_align(mean: np.ndarray, logstd: np.ndarray, z: np.ndarray) -> Alignment:
    """Align frames ``z`` to the token prior (mean, logstd) in one call."""
    return best_monotonic_path(pairwise_gaussian_loglik(mean, logstd, z))
