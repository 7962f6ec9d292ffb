"""Pilot after route balancing + probe clipping: all trained-behavior criteria."""
import sys
import time

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler

from fusevoice.config import RunConfig
from fusevoice.corpus import AudioParams, generate_corpus, style_valence
from fusevoice.evaluation import (
    SpeakerScorer, StyleProbe, evaluate_model, export_embeddings,
    modality_consistency, resynthesize, site_probe_accuracy,
)
from fusevoice.training import train, utterances_from_corpus

torch.set_num_threads(1)
SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 0

CFG = RunConfig(
    d_model=32, d_style=24, d_spk=24, latent_channels=8, text_blocks=2,
    flow_layers=2, dur_flow_layers=2, attn_heads=2, enc_hidden=32,
    n_fft=256, hop=128, frames_per_char=2,
    speakers=6, styles=4, utterances_per_cell=10,
    batch_size=8, lr=2e-3, steps=2000, seed=SEED, grl_lambda=2.0,
)
corpus = generate_corpus(6, 4, 10, 0, AudioParams(16000, 256, 128, 2))
utts = utterances_from_corpus(corpus)
probe = StyleProbe().fit(utts)
scorer = SpeakerScorer().fit(utts)
n_sty = len(corpus.styles)

t0 = time.time()
model, reports = train(CFG, utts, seed=SEED)
ratio = np.mean([r.total for r in reports[-10:]]) / np.mean([r.total for r in reports[:10]])
print(f"seed {SEED}: trained {time.time()-t0:.0f}s  ratio {ratio:.3f}", flush=True)

# --- criterion 4 embeddings ---
es, ek, sy, ky = [], [], [], []
with torch.no_grad():
    for u in utts:
        spec = torch.from_numpy(u.spectrogram)
        es.append((model.frontend.encode_style_audio(spec)
                   + model.frontend.encode_prompt(u.prompt)).numpy())
        ek.append(model.frontend.encode_speaker(spec).numpy())
        sy.append(u.style_id)
        ky.append(u.speaker_id)
es, ek, sy, ky = np.stack(es), np.stack(ek), np.array(sy), np.array(ky)


def probe_acc(x, y):
    tr = np.arange(len(y)) % 2 == 0
    sc = StandardScaler().fit(x[tr])
    clf = LogisticRegression(max_iter=5000, C=10.0, random_state=0)
    clf.fit(sc.transform(x[tr]), y[tr])
    return float((clf.predict(sc.transform(x[~tr])) == y[~tr]).mean())


def nc_acc(x, y):
    tr = np.arange(len(y)) % 2 == 0
    keys = sorted(set(y))
    cm = np.stack([x[tr][y[tr] == k].mean(axis=0) for k in keys])
    d = ((x[~tr][:, None, :] - cm[None, :, :]) ** 2).sum(-1)
    return float((np.array(keys)[d.argmin(1)] == y[~tr]).mean())


print(f"  style@emb_style {probe_acc(es, sy):.3f}  style@emb_speaker {probe_acc(ek, sy):.3f}"
      f"  nc_spk {nc_acc(ek, ky):.3f}", flush=True)
rows = export_embeddings(model, utts[::2], sites=("input", "post-speaker"), seed=0)
sp = site_probe_accuracy(rows, label="speaker")
print(f"  site probes: input {sp['input']:.3f}  post-speaker {sp['post-speaker']:.3f}", flush=True)

# --- resynthesis confusion ---
conf = np.zeros((n_sty, n_sty), dtype=int)
for u in utts[::4]:
    conf[u.style_id, probe.predict(resynthesize(model, u, seed=0))] += 1
print(f"  resynth confusion:\n{conf}", flush=True)

# --- criterion 5 ---
crow = modality_consistency(model, utts, probe, corpus.styles, seed=SEED, n_per_case=16)
by = {r["case"]: r for r in crow}
cons = 100 * by["consistent_prompt_audio"]["accuracy"]
contra = 50 * (by["negative_prompt_positive_audio"]["accuracy"]
               + by["positive_prompt_negative_audio"]["accuracy"])
for r in crow:
    extra = (f"  audio {r['audio_wins']:.2f} prompt {r['prompt_wins']:.2f}"
             if "audio_wins" in r else "")
    print(f"  {r['case']:<32} acc {r['accuracy']:.2f}{extra}", flush=True)
print(f"  GAP {cons - contra:.1f}  [{time.time()-t0:.0f}s total]", flush=True)
