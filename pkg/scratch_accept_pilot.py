"""Pilot run for acceptance criteria 3-5: one seed, full 2000 steps, all metrics."""
import time

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler

from fusevoice.config import RunConfig
from fusevoice.corpus import AudioParams, generate_corpus
from fusevoice.evaluation import StyleProbe, modality_consistency
from fusevoice.training import train, utterances_from_corpus
from dataclasses import replace

torch.set_num_threads(1)

CFG = RunConfig(
    d_model=32, d_style=24, d_spk=24, latent_channels=8, text_blocks=2,
    flow_layers=2, dur_flow_layers=2, attn_heads=2, enc_hidden=32,
    n_fft=256, hop=128, frames_per_char=2,
    speakers=6, styles=4, utterances_per_cell=10,
    batch_size=8, lr=2e-3, steps=2000, seed=0,
)

t0 = time.time()
corpus = generate_corpus(6, 4, 10, 0, AudioParams(16000, 256, 128, 2))
utts = utterances_from_corpus(corpus)
print(f"corpus: {len(utts)} utts in {time.time()-t0:.1f}s", flush=True)

t0 = time.time()
model, reports = train(CFG, utts, seed=0)
t_train = time.time() - t0
first = np.mean([r.total for r in reports[:10]])
last = np.mean([r.total for r in reports[-10:]])
print(f"train 2000 steps: {t_train:.0f}s  first10 {first:.3f}  last10 {last:.3f}  "
      f"ratio {last/first:.3f}", flush=True)

# --- criterion 3b: single-utterance overfit
t0 = time.time()
ov_cfg = replace(CFG, batch_size=1, steps=500)
_, ov_reports = train(ov_cfg, utts[:1], n_speakers=6, n_styles=4, seed=0)
r0 = ov_reports[0].recon
r_last = np.mean([r.recon for r in ov_reports[-5:]])
print(f"overfit 500 steps: {time.time()-t0:.0f}s  recon {r0:.4f} -> {r_last:.4f} "
      f"ratio {r_last/r0:.3f}", flush=True)

# --- criterion 4: embedding probes
model.eval()
t0 = time.time()
emb_style, emb_spk, styles_y, spk_y = [], [], [], []
with torch.no_grad():
    for u in utts:
        spec = torch.from_numpy(u.spectrogram)
        es = model.frontend.encode_style_audio(spec) + model.frontend.encode_prompt(u.prompt)
        emb_style.append(es.squeeze(0).numpy())
        emb_spk.append(model.frontend.encode_speaker(spec).squeeze(0).numpy())
        styles_y.append(u.style_id)
        spk_y.append(u.speaker_id)
emb_style = np.stack(emb_style); emb_spk = np.stack(emb_spk)
styles_y = np.array(styles_y); spk_y = np.array(spk_y)

def probe_acc(x, y):
    tr = np.arange(len(y)) % 2 == 0
    te = ~tr
    sc = StandardScaler().fit(x[tr])
    clf = LogisticRegression(max_iter=5000, C=10.0, random_state=0)
    clf.fit(sc.transform(x[tr]), y[tr])
    return float((clf.predict(sc.transform(x[te])) == y[te]).mean())

style_on_style = probe_acc(emb_style, styles_y)
style_on_spk = probe_acc(emb_spk, styles_y)
print(f"probes: style@emb_style {style_on_style:.3f} (need >=0.80)  "
      f"style@emb_speaker {style_on_spk:.3f} (need <= {0.25+0.15:.2f})", flush=True)

tr = np.arange(len(spk_y)) % 2 == 0
te = ~tr
cents = {s: emb_spk[tr][spk_y[tr] == s].mean(axis=0) for s in np.unique(spk_y)}
keys = sorted(cents)
cmat = np.stack([cents[k] for k in keys])
d = ((emb_spk[te][:, None, :] - cmat[None, :, :]) ** 2).sum(-1)
nc_acc = float((np.array(keys)[d.argmin(1)] == spk_y[te]).mean())
print(f"nearest-centroid speaker (held-out): {nc_acc:.3f} (need >=0.90)", flush=True)

# --- criterion 4d: flow-feature site probes
from fusevoice.evaluation import export_embeddings, site_probe_accuracy
sub = utts[::2]  # 120 utts
rows = export_embeddings(model, sub, sites=("input", "post-speaker"), seed=0)
acc = site_probe_accuracy(rows, label="speaker")
print(f"site probes (speaker): input {acc['input']:.3f}  post-speaker {acc['post-speaker']:.3f} "
      f"(need post > input)  [{time.time()-t0:.0f}s]", flush=True)

# --- criterion 5: consistency gap
t0 = time.time()
probe = StyleProbe().fit(utts)
rows = modality_consistency(model, utts, probe, corpus.styles, seed=0, n_per_case=8)
by_case = {r["case"]: r for r in rows}
consistent = 100.0 * by_case["consistent_prompt_audio"]["accuracy"]
contra = 50.0 * (by_case["negative_prompt_positive_audio"]["accuracy"]
                 + by_case["positive_prompt_negative_audio"]["accuracy"])
print(f"consistency: all rows {[(r['case'], round(r['accuracy'],2)) for r in rows]}", flush=True)
print(f"consistency gap: consistent {consistent:.1f} contra {contra:.1f} "
      f"gap {consistent-contra:.1f} (need >=20)  [{time.time()-t0:.0f}s]", flush=True)
