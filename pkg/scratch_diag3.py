"""Diagnose where rendered style dies: confusion, durations, causal power."""
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from fusevoice.backbone import synthesize
from fusevoice.checkpoint import load_checkpoint, save_checkpoint
from fusevoice.config import RunConfig
from fusevoice.corpus import AudioParams, generate_corpus, style_valence
from fusevoice.evaluation import StyleProbe, resynthesize
from fusevoice.training import train, utterances_from_corpus
from fusevoice.seeding import mix_seed

torch.set_num_threads(1)

BASE = RunConfig(
    d_model=32, d_style=24, d_spk=24, latent_channels=8, text_blocks=2,
    flow_layers=2, dur_flow_layers=2, attn_heads=2, enc_hidden=32,
    n_fft=256, hop=128, frames_per_char=2,
    speakers=6, styles=4, utterances_per_cell=10,
    batch_size=8, lr=2e-3, steps=2000, seed=0, grl_lambda=2.0,
)
corpus = generate_corpus(6, 4, 10, 0, AudioParams(16000, 256, 128, 2))
utts = utterances_from_corpus(corpus)
probe = StyleProbe().fit(utts)

CKPT = Path("/tmp/diag_l2.fvc")
if CKPT.exists():
    model = load_checkpoint(CKPT).model
    print("loaded cached model", flush=True)
else:
    t0 = time.time()
    model, reports = train(BASE, utts, seed=0)
    save_checkpoint(CKPT, model, seed=0, step=len(reports))
    print(f"trained in {time.time()-t0:.0f}s, ratio "
          f"{np.mean([r.total for r in reports[-10:]])/np.mean([r.total for r in reports[:10]]):.3f}",
          flush=True)

n_sty = len(corpus.styles)
by_style = {}
for u in utts:
    by_style.setdefault(u.style_id, []).append(u)

# --- 1. probe confusion on resynthesized outputs (own prompt+refs) ---------
conf = np.zeros((n_sty, n_sty), dtype=int)
for u in utts[::4]:
    pred = probe.predict(resynthesize(model, u, seed=0))
    conf[u.style_id, pred] += 1
print("resynth confusion (rows=true, cols=pred):")
print(conf)
emot = [s for s in range(n_sty) if style_valence(corpus.styles[s]) != "neutral"]
emo_hit = sum(conf[s, s] for s in emot) / max(1, sum(conf[s].sum() for s in emot))
print(f"emotional-only resynth acc {emo_hit:.3f}   all {np.trace(conf)/conf.sum():.3f}",
      flush=True)

# --- 2. duration response to the style prompt (T=0, prompt only) -----------
ref = by_style[0][0]
text = "the fire needs more wood today"
print(f"duration response, text len {len(text)} (gt frames/char x rate_mult):")
for s in range(n_sty):
    pr = by_style[s][0].prompt
    spec_p = synthesize(model, text, speaker_ref=ref.spectrogram,
                        style_prompt=pr, seed=3, temperature=0.0)
    spec_pa = synthesize(model, text, speaker_ref=ref.spectrogram,
                         style_prompt=pr, style_ref=by_style[s][1].spectrogram,
                         seed=3, temperature=0.0)
    print(f"  style {s} ({corpus.styles[s].name:>8}): prompt-only {spec_p.shape[0]:>4} "
          f"prompt+audio {spec_pa.shape[0]:>4}  gt_rate {corpus.styles[s].rate_mult}",
      flush=True)

# --- 3. causal power of each modality over the probe read ------------------
rng = np.random.default_rng(7)
neutral = [s for s in range(n_sty) if style_valence(corpus.styles[s]) == "neutral"]

def tally(label, prompt_styles, audio_styles, n=24):
    reads = np.zeros(n_sty, dtype=int)
    hits_prompt = hits_audio = 0
    for k in range(n):
        ps = int(rng.choice(prompt_styles))
        as_ = int(rng.choice(audio_styles))
        pd = by_style[ps][int(rng.integers(10))]
        ad = by_style[as_][int(rng.integers(10))]
        hyp = synthesize(model, ad.text, speaker_ref=ad.spectrogram,
                         style_prompt=pd.prompt, style_ref=ad.spectrogram,
                         seed=mix_seed(0, label, k))
        pred = probe.predict(hyp)
        reads[pred] += 1
        hits_prompt += pred == ps
        hits_audio += pred == as_
    print(f"  {label:<26} reads {reads}  ==prompt {hits_prompt/n:.2f} ==audio {hits_audio/n:.2f}",
          flush=True)

print("causal power (same-donor: audio donor supplies text+speaker_ref):")
tally("neutral_p_emotional_a", neutral, emot)
tally("emotional_p_neutral_a", emot, neutral)
tally("consistent", emot, None, n=0) if False else None

# consistent + conflicts with same-donor construction
pos = [s for s in emot if style_valence(corpus.styles[s]) == "positive"]
neg = [s for s in emot if style_valence(corpus.styles[s]) == "negative"]

def tally_pair(label, pick_pair, n=24):
    hits = 0
    reads = np.zeros(n_sty, dtype=int)
    for k in range(n):
        ps, as_, target = pick_pair()
        pd = by_style[ps][int(rng.integers(10))]
        ad = by_style[as_][int(rng.integers(10))]
        hyp = synthesize(model, ad.text, speaker_ref=ad.spectrogram,
                         style_prompt=pd.prompt, style_ref=ad.spectrogram,
                         seed=mix_seed(1, label, k))
        pred = probe.predict(hyp)
        reads[pred] += 1
        hits += pred == target
    print(f"  {label:<26} reads {reads}  acc {hits/n:.2f}", flush=True)
    return hits / n

c = tally_pair("consistent",
               lambda: (lambda s: (s, s, s))(int(rng.choice(emot))))
n1 = tally_pair("neg_p_pos_a",
                lambda: (int(rng.choice(neg)), int(rng.choice(pos)), None) if False
                else (lambda p, a: (p, a, p))(int(rng.choice(neg)), int(rng.choice(pos))))
n2 = tally_pair("pos_p_neg_a",
                lambda: (lambda p, a: (p, a, p))(int(rng.choice(pos)), int(rng.choice(neg))))
print(f"same-donor gap: {100*c - 50*(n1+n2):.1f}", flush=True)
