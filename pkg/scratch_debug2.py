"""Debug: grl_lambda sweep + where the consistency gap loses style signal."""
import time
from dataclasses import replace

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler

from fusevoice.config import RunConfig
from fusevoice.corpus import AudioParams, generate_corpus
from fusevoice.evaluation import (
    SpeakerScorer, StyleProbe, evaluate_model, modality_consistency,
)
from fusevoice.training import train, utterances_from_corpus

torch.set_num_threads(1)

BASE = RunConfig(
    d_model=32, d_style=24, d_spk=24, latent_channels=8, text_blocks=2,
    flow_layers=2, dur_flow_layers=2, attn_heads=2, enc_hidden=32,
    n_fft=256, hop=128, frames_per_char=2,
    speakers=6, styles=4, utterances_per_cell=10,
    batch_size=8, lr=2e-3, steps=2000, seed=0,
)
corpus = generate_corpus(6, 4, 10, 0, AudioParams(16000, 256, 128, 2))
utts = utterances_from_corpus(corpus)
probe = StyleProbe().fit(utts)
scorer = SpeakerScorer().fit(utts)


def embed_all(model):
    es, ek, sy, ky = [], [], [], []
    with torch.no_grad():
        for u in utts:
            spec = torch.from_numpy(u.spectrogram)
            es.append((model.frontend.encode_style_audio(spec)
                       + model.frontend.encode_prompt(u.prompt)).squeeze(0).numpy())
            ek.append(model.frontend.encode_speaker(spec).squeeze(0).numpy())
            sy.append(u.style_id)
            ky.append(u.speaker_id)
    return np.stack(es), np.stack(ek), np.array(sy), np.array(ky)


def probe_acc(x, y):
    tr = np.arange(len(y)) % 2 == 0
    sc = StandardScaler().fit(x[tr])
    clf = LogisticRegression(max_iter=5000, C=10.0, random_state=0)
    clf.fit(sc.transform(x[tr]), y[tr])
    return float((clf.predict(sc.transform(x[~tr])) == y[~tr]).mean())


def nc_acc(x, y):
    tr = np.arange(len(y)) % 2 == 0
    te = ~tr
    keys = sorted(set(y))
    cm = np.stack([x[tr][y[tr] == k].mean(axis=0) for k in keys])
    d = ((x[te][:, None, :] - cm[None, :, :]) ** 2).sum(-1)
    return float((np.array(keys)[d.argmin(1)] == y[te]).mean())


for lam in (2.0, 3.0):
    t0 = time.time()
    cfg = replace(BASE, grl_lambda=lam)
    model, reports = train(cfg, utts, seed=0)
    ratio = np.mean([r.total for r in reports[-10:]]) / np.mean([r.total for r in reports[:10]])
    es, ek, sy, ky = embed_all(model)
    print(f"lam={lam}: ratio {ratio:.3f}  style@emb_style {probe_acc(es, sy):.3f}  "
          f"style@emb_speaker {probe_acc(ek, sy):.3f}  nc_spk {nc_acc(ek, ky):.3f}  "
          f"[{time.time()-t0:.0f}s]", flush=True)
    if lam == 2.0:
        keep = model

model = keep
# --- where does the consistency signal go?
rep = evaluate_model(model, utts[::4], scorer, probe, seed=0)
print(f"resynthesis on 60 utts: mcd {rep.mcd:.2f} secs {rep.secs:.3f} "
      f"emo_acc {rep.emo_acc:.1f}", flush=True)

for temp in (0.667, 0.3, 0.0):
    model.cfg.temperature = temp
    rows = modality_consistency(model, utts, probe, corpus.styles, seed=0, n_per_case=12)
    by = {r["case"]: r for r in rows}
    cons = 100 * by["consistent_prompt_audio"]["accuracy"]
    contra = 50 * (by["negative_prompt_positive_audio"]["accuracy"]
                   + by["positive_prompt_negative_audio"]["accuracy"])
    print(f"temp={temp}: rows {[(r['case'][:20], round(r['accuracy'],2)) for r in rows]} "
          f"gap {cons-contra:.1f}", flush=True)
