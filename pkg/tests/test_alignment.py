"""Monotonic alignment: DP against exhaustive enumeration and hand instances."""

import itertools

import numpy as np
import pytest
from scipy.stats import norm

from fusevoice.alignment import (
    Alignment,
    AlignmentError,
    best_monotonic_path,
    monotonic_align,
    pairwise_gaussian_loglik,
    score_durations,
)


def compositions(total: int, parts: int):
    """All ways to split `total` frames into `parts` positive durations."""
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def brute_force_best(loglik: np.ndarray) -> float:
    n_tok, n_frames = loglik.shape
    return max(
        score_durations(loglik, np.array(d)) for d in compositions(n_frames, n_tok)
    )


# ---------------------------------------------------------------------------
# pairwise likelihood


def test_pairwise_loglik_matches_scipy(rng):
    mean = rng.normal(size=(3, 2))
    logstd = rng.normal(scale=0.3, size=(3, 2))
    z = rng.normal(size=(4, 2))
    got = pairwise_gaussian_loglik(mean, logstd, z)
    assert got.shape == (3, 4)
    for i, t in itertools.product(range(3), range(4)):
        want = norm.logpdf(z[t], loc=mean[i], scale=np.exp(logstd[i])).sum()
        assert abs(got[i, t] - want) < 1e-12


def test_pairwise_loglik_shape_errors():
    with pytest.raises(AlignmentError, match="disagree"):
        pairwise_gaussian_loglik(np.zeros((3, 2)), np.zeros((2, 2)), np.zeros((4, 2)))
    with pytest.raises(AlignmentError, match="channel mismatch"):
        pairwise_gaussian_loglik(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((4, 5)))


# ---------------------------------------------------------------------------
# scoring


def test_score_durations_is_the_path_sum(rng):
    ll = rng.normal(size=(3, 6))
    got = score_durations(ll, np.array([2, 1, 3]))
    want = ll[0, 0] + ll[0, 1] + ll[1, 2] + ll[2, 3] + ll[2, 4] + ll[2, 5]
    assert abs(got - want) < 1e-12


@pytest.mark.parametrize(
    "durations", [[2, 1], [1, 1, 1, 1], [0, 3, 3], [4, 3]]
)
def test_score_durations_rejects_bad_tilings(durations):
    ll = np.zeros((3, 6))
    with pytest.raises(AlignmentError, match="do not tile"):
        score_durations(ll, np.array(durations))


# ---------------------------------------------------------------------------
# DP optimality


def test_single_token_takes_every_frame(rng):
    ll = rng.normal(size=(1, 5))
    out = best_monotonic_path(ll)
    assert out.durations.tolist() == [5]
    assert out.path.tolist() == [0, 0, 0, 0, 0]
    assert abs(out.score - ll.sum()) < 1e-12


def test_hand_instance_with_obvious_optimum():
    # token 0 loves frame 0, token 1 loves frames 1-2, token 2 loves frame 3
    ll = np.full((3, 4), -10.0)
    ll[0, 0] = 0.0
    ll[1, 1] = ll[1, 2] = 0.0
    ll[2, 3] = 0.0
    out = best_monotonic_path(ll)
    assert out.durations.tolist() == [1, 2, 1]
    assert out.path.tolist() == [0, 1, 1, 2]
    assert out.score == 0.0


def test_all_zero_scores_resolve_ties_deterministically():
    out = best_monotonic_path(np.zeros((3, 5)))
    assert out.durations.tolist() == [3, 1, 1]
    assert out.path.tolist() == [0, 0, 0, 1, 2]


def test_dp_equals_brute_force_on_random_instances(rng):
    for n_tok in range(1, 6):
        for n_frames in range(n_tok, 9):
            for _ in range(4):
                ll = rng.normal(size=(n_tok, n_frames))
                out = best_monotonic_path(ll)
                best = brute_force_best(ll)
                assert abs(out.score - best) < 1e-9, (n_tok, n_frames)
                assert abs(score_durations(ll, out.durations) - best) < 1e-9


def test_path_is_monotonic_complete_and_consistent(rng):
    for _ in range(20):
        n_tok = int(rng.integers(1, 6))
        n_frames = int(rng.integers(n_tok, 12))
        out = best_monotonic_path(rng.normal(size=(n_tok, n_frames)))
        assert out.path[0] == 0
        assert out.path[-1] == n_tok - 1
        assert (np.diff(out.path) >= 0).all()
        assert (np.diff(out.path) <= 1).all()
        assert (out.durations >= 1).all()
        assert out.durations.sum() == n_frames
        assert np.array_equal(np.bincount(out.path, minlength=n_tok), out.durations)


def test_too_few_frames_raises():
    with pytest.raises(AlignmentError, match="need frames >= tokens"):
        best_monotonic_path(np.zeros((4, 3)))


def test_zero_tokens_raises():
    with pytest.raises(AlignmentError, match="at least one token"):
        best_monotonic_path(np.zeros((0, 4)))


# ---------------------------------------------------------------------------
# end-to-end wrapper


def test_monotonic_align_recovers_separated_durations(rng):
    # well-separated token Gaussians, frames drawn near each token's mean in
    # a known tiling -> the aligner should recover that tiling exactly
    want = [2, 3, 1, 2]
    mean = np.array([[0.0, 0.0], [8.0, 8.0], [-8.0, 8.0], [8.0, -8.0]])
    logstd = np.zeros((4, 2))
    z = np.repeat(mean, want, axis=0) + rng.normal(scale=0.05, size=(8, 2))
    out = monotonic_align(mean, logstd, z)
    assert isinstance(out, Alignment)
    assert out.durations.tolist() == want


def test_monotonic_align_is_the_two_stage_pipeline(rng):
    mean = rng.normal(size=(3, 4))
    logstd = rng.normal(scale=0.2, size=(3, 4))
    z = rng.normal(size=(6, 4))
    got = monotonic_align(mean, logstd, z)
    want = best_monotonic_path(pairwise_gaussian_loglik(mean, logstd, z))
    assert np.array_equal(got.durations, want.durations)
    assert got.score == want.score
