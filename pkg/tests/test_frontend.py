"""Front-end encoders: gradient reversal, style gating, and the four losses."""

import math

import numpy as np
import pytest
import torch

from fusevoice.frontend import (
    MIN_AUDIO_FRAMES,
    AudioEncoder,
    FrontEnd,
    FrontEndError,
    PromptEncoder,
    combine_style,
    grl_backward,
    reverse_gradient,
)
from fusevoice.training import build_batch

BINS = 129  # matches the small test config (n_fft 256)


def make_frontend(seed: int = 0, n_styles: int = 4, n_speakers: int = 3) -> FrontEnd:
    torch.manual_seed(seed)
    fe = FrontEnd(
        bins=BINS,
        d_style=24,
        d_spk=24,
        hidden=32,
        n_styles=n_styles,
        n_speakers=n_speakers,
    )
    fe.eval()
    return fe


# ---------------------------------------------------------------------------
# gradient reversal


def test_grl_forward_is_identity():
    x = torch.randn(5, 7, requires_grad=True)
    y = reverse_gradient(x, 1.7)
    assert torch.equal(y, x)


@pytest.mark.parametrize("lam", [1.0, 0.5, 2.25])
def test_grl_backward_is_exact_negated_scaling(lam):
    torch.manual_seed(3)
    x = torch.randn(4, 6, requires_grad=True)
    g = torch.randn(4, 6)
    reverse_gradient(x, lam).backward(g)
    assert torch.equal(x.grad, -lam * g)


def test_grl_backward_helper_matches_definition():
    g = torch.randn(8)
    assert torch.equal(grl_backward(g, 0.75), -0.75 * g)


def test_grl_end_to_end_against_finite_differences():
    # Autograd through GRL(f(x)) should give exactly -lambda times the
    # gradient of f alone; the latter is measured by central differences.
    lam = 1.0
    torch.manual_seed(11)
    f = torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.GELU(), torch.nn.Linear(8, 1))
    x = torch.randn(6, 4)

    loss = reverse_gradient(f(x), lam).sum()
    loss.backward()
    grads = {name: p.grad.clone() for name, p in f.named_parameters()}

    def plain_loss() -> float:
        with torch.no_grad():
            return float(f(x).sum())

    eps = 1e-2
    checked = 0
    for name, p in f.named_parameters():
        flat = p.data.view(-1)
        g = grads[name].view(-1)
        # FD noise drowns out near-zero coordinates; probe the meaningful ones.
        order = torch.argsort(g.abs(), descending=True)
        for idx in order[:3].tolist():
            if abs(g[idx]) < 5e-2:
                continue
            orig = float(flat[idx])
            flat[idx] = orig + eps
            hi = plain_loss()
            flat[idx] = orig - eps
            lo = plain_loss()
            flat[idx] = orig
            fd = (hi - lo) / (2 * eps)
            rel = abs(float(g[idx]) + lam * fd) / abs(lam * fd)
            assert rel < 1e-3, f"{name}[{idx}]: autograd {float(g[idx])} vs -lambda*fd {-lam * fd}"
            checked += 1
    assert checked >= 6


def test_grl_exact_negation_of_plain_gradient():
    # With lambda = 1 the reversal is a bit-exact negation all the way down.
    torch.manual_seed(12)
    f = torch.nn.Sequential(torch.nn.Linear(3, 5), torch.nn.Tanh(), torch.nn.Linear(5, 2))
    x = torch.randn(4, 3)

    f(x).sum().backward()
    plain = {n: p.grad.clone() for n, p in f.named_parameters()}
    f.zero_grad()
    reverse_gradient(f(x), 1.0).sum().backward()
    for n, p in f.named_parameters():
        assert torch.equal(p.grad, -plain[n])


# ---------------------------------------------------------------------------
# style gating


def test_combine_style_gate_zero_passes_prompt_through():
    torch.manual_seed(1)
    a, p = torch.randn(5, 24), torch.randn(5, 24)
    assert torch.equal(combine_style(a, p, 0.0), p)


def test_combine_style_gate_one_is_plain_sum():
    torch.manual_seed(2)
    a, p = torch.randn(5, 24), torch.randn(5, 24)
    assert torch.equal(combine_style(a, p, 1.0), a + p)


@pytest.mark.parametrize("gate", [0.0, 1.0, 0.35])
def test_combine_style_matches_scalar_loop(gate):
    rng = np.random.default_rng(17)
    a = rng.standard_normal((4, 6)).astype(np.float32)
    p = rng.standard_normal((4, 6)).astype(np.float32)
    want = np.empty_like(a)
    g32 = np.float32(gate)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            want[i, j] = g32 * a[i, j] + p[i, j]
    got = combine_style(torch.from_numpy(a), torch.from_numpy(p), gate)
    assert torch.equal(got, torch.from_numpy(want))


def test_combine_style_per_item_gate_tensor():
    torch.manual_seed(4)
    a, p = torch.randn(3, 8), torch.randn(3, 8)
    gate = torch.tensor([[0.0], [1.0], [1.0]])
    out = combine_style(a, p, gate)
    assert torch.equal(out[0], p[0])
    assert torch.equal(out[1], a[1] + p[1])


def test_combine_style_rejects_mismatched_shapes():
    with pytest.raises(FrontEndError, match="style vectors disagree"):
        combine_style(torch.zeros(2, 24), torch.zeros(2, 16), 1.0)


# ---------------------------------------------------------------------------
# encoders


def test_prompt_encoder_rejects_empty_prompt():
    enc = PromptEncoder(d_style=8, hidden=16)
    with pytest.raises(FrontEndError, match="empty prompt"):
        enc.encode("")


def test_prompt_encoder_rejects_overlong_prompt():
    enc = PromptEncoder(d_style=8, hidden=16, max_len=16)
    with pytest.raises(FrontEndError, match="exceeds the maximum of 16"):
        enc.encode("a calm and very deliberately padded prompt")


def test_audio_encoder_rejects_short_reference():
    enc = AudioEncoder(bins=BINS, out_dim=8, hidden=16, name="style audio encoder")
    with pytest.raises(FrontEndError, match="style audio encoder needs at least 8 frames"):
        enc(torch.rand(MIN_AUDIO_FRAMES - 1, BINS))


def test_audio_encoder_rejects_wrong_bins():
    enc = AudioEncoder(bins=BINS, out_dim=8, hidden=16, name="speaker encoder")
    with pytest.raises(FrontEndError, match=f"speaker encoder expects {BINS}"):
        enc(torch.rand(20, BINS + 3))


def test_audio_embedding_invariant_to_frame_duplication():
    fe = make_frontend()
    spec = torch.rand(10, BINS)
    doubled = spec.repeat_interleave(2, dim=0)
    for encode in (fe.encode_style_audio, fe.encode_speaker):
        base = encode(spec)
        assert torch.allclose(encode(doubled), base, atol=1e-6)


def test_zero_spectrogram_embeds_finite():
    fe = make_frontend()
    spec = torch.zeros(12, BINS)
    assert torch.isfinite(fe.encode_style_audio(spec)).all()
    assert torch.isfinite(fe.encode_speaker(spec)).all()


def test_encoders_are_deterministic_in_eval():
    fe = make_frontend()
    spec = torch.rand(14, BINS)
    assert torch.equal(fe.encode_speaker(spec), fe.encode_speaker(spec))
    assert torch.equal(fe.encode_prompt("calm and even"), fe.encode_prompt("calm and even"))


def test_unseen_reference_encodes_without_any_lookup():
    # Zero-shot path: an arbitrary reference no training corpus ever produced
    # still maps to a well-formed speaker vector.
    fe = make_frontend()
    out = fe.encode_speaker(torch.rand(25, BINS) * 40.0)
    assert out.shape == (24,)
    assert torch.isfinite(out).all()


def test_batched_embeddings_match_single_item_calls(utts_small):
    fe = make_frontend()
    picks = [utts_small[0], utts_small[5], utts_small[9]]
    batch = build_batch(picks)
    with torch.no_grad():
        embeds = fe.embed_batch(batch.specs, batch.frame_mask, batch.prompt_ids, batch.prompt_mask)
        for i, u in enumerate(picks):
            spec = torch.from_numpy(u.spectrogram)
            assert torch.allclose(embeds.prompt_style[i], fe.encode_prompt(u.prompt), atol=1e-5)
            assert torch.allclose(embeds.audio_style[i], fe.encode_style_audio(spec), atol=1e-5)
            assert torch.allclose(embeds.speaker[i], fe.encode_speaker(spec), atol=1e-5)


# ---------------------------------------------------------------------------
# losses


def loaded_batch(utts, n=12):
    return build_batch(utts[:n])


def test_total_loss_is_exact_sum_of_parts(utts_small):
    fe = make_frontend()
    b = loaded_batch(utts_small)
    losses = fe.losses(
        b.specs, b.frame_mask, b.prompt_ids, b.prompt_mask, b.style_ids, b.speaker_ids
    )
    resum = losses.text_style + losses.audio_style + losses.spk + losses.style_grl
    assert torch.equal(losses.total, resum)


def test_zeroed_heads_give_log_k_losses(utts_small):
    fe = make_frontend(n_styles=4, n_speakers=3)
    with torch.no_grad():
        for head in (fe.text_style_head, fe.audio_style_head, fe.spk_head, fe.adv_style_head):
            head.weight.zero_()
            head.bias.zero_()
    b = loaded_batch(utts_small)
    losses = fe.losses(
        b.specs, b.frame_mask, b.prompt_ids, b.prompt_mask, b.style_ids, b.speaker_ids
    )
    assert abs(losses.text_style.item() - math.log(4)) < 1e-6
    assert abs(losses.audio_style.item() - math.log(4)) < 1e-6
    assert abs(losses.style_grl.item() - math.log(4)) < 1e-6
    assert abs(losses.spk.item() - math.log(3)) < 1e-6


def test_style_label_out_of_range_is_rejected(utts_small):
    fe = make_frontend()
    b = loaded_batch(utts_small, n=4)
    bad = b.style_ids.clone()
    bad[0] = 99
    with pytest.raises(FrontEndError, match=r"style label out of range.*\[0, 4\)"):
        fe.losses(b.specs, b.frame_mask, b.prompt_ids, b.prompt_mask, bad, b.speaker_ids)


def test_speaker_label_out_of_range_is_rejected(utts_small):
    fe = make_frontend()
    b = loaded_batch(utts_small, n=4)
    bad = b.speaker_ids.clone()
    bad[1] = -2
    with pytest.raises(FrontEndError, match="speaker label out of range"):
        fe.losses(b.specs, b.frame_mask, b.prompt_ids, b.prompt_mask, b.style_ids, bad)


def test_adversarial_step_hurts_style_probe_on_speaker_embedding(utts_small):
    # The reversal layer exists to strip style from the speaker embedding: a
    # step on the adversarial loss should make its own style readout worse.
    fe = make_frontend(seed=5)
    fe.train()
    b = build_batch(utts_small)

    def style_acc_on_speaker() -> float:
        with torch.no_grad():
            emb = fe.speaker_enc(b.specs, b.frame_mask)
            pred = fe.adv_style_head(emb).argmax(dim=1)
        return float((pred == b.style_ids).float().mean())

    # A freshly initialised trunk collapses every utterance to nearly the same
    # vector, so first make the embedding informative the same way training
    # would: fit the speaker loss, which drags style colouring along for free.
    spk_opt = torch.optim.Adam(
        list(fe.speaker_enc.parameters()) + list(fe.spk_head.parameters()), lr=1e-2
    )
    for _ in range(150):
        spk_opt.zero_grad()
        emb = fe.speaker_enc(b.specs, b.frame_mask)
        torch.nn.functional.cross_entropy(fe.spk_head(emb), b.speaker_ids).backward()
        spk_opt.step()

    # Then give the probe a fair shot at the frozen embeddings.
    head_opt = torch.optim.Adam(fe.adv_style_head.parameters(), lr=5e-2)
    for _ in range(300):
        head_opt.zero_grad()
        emb = fe.speaker_enc(b.specs, b.frame_mask).detach()
        torch.nn.functional.cross_entropy(fe.adv_style_head(emb), b.style_ids).backward()
        head_opt.step()
    before = style_acc_on_speaker()
    assert before > 0.6, "probe never learned, the check below would be vacuous"

    # One adversarial step through the reversal moves the trunk against the probe.
    trunk_opt = torch.optim.SGD(fe.speaker_enc.parameters(), lr=0.3)
    fe.zero_grad()
    embeds = fe.embed_batch(b.specs, b.frame_mask, b.prompt_ids, b.prompt_mask)
    fe.losses_from(embeds, b.style_ids, b.speaker_ids).style_grl.backward()
    trunk_opt.step()
    after = style_acc_on_speaker()
    assert after < before
