"""Which style cues survive synthesis, and how big is each route's signal?"""
import numpy as np
import torch

from fusevoice.checkpoint import load_checkpoint
from fusevoice.corpus import AudioParams, generate_corpus
from fusevoice.evaluation import resynthesize, style_features
from fusevoice.training import utterances_from_corpus

torch.set_num_threads(1)

corpus = generate_corpus(6, 4, 10, 0, AudioParams(16000, 256, 128, 2))
utts = utterances_from_corpus(corpus)
model = load_checkpoint("/tmp/diag_l2.fvc").model
n_sty = len(corpus.styles)
by_style = {}
for u in utts:
    by_style.setdefault(u.style_id, []).append(u)

# --- per-style feature means, ground truth vs resynthesis ------------------
# feature layout: env[0:12], log_frames[12], cen_mean[13], cen_std[14],
# |dcen|[15], dcen_std[16], |dle|[17], pitch_std[18], bands[19:27]
names = {
    "env_slope": lambda f: f[11] - f[0],
    "env_rough": lambda f: np.abs(np.diff(f[0:12])).mean(),
    "log_frames": lambda f: f[12],
    "cen_std": lambda f: f[14],
    "abs_dcen": lambda f: f[15],
    "abs_dle": lambda f: f[17],
    "pitch_std": lambda f: f[18],
    "band_hi": lambda f: f[25],
}
print(f"{'style':>8} {'src':>6} " + " ".join(f"{k:>10}" for k in names))
for s in range(n_sty):
    gt_feats, sy_feats = [], []
    for u in by_style[s][:8]:
        gt_feats.append(style_features(u.spectrogram))
        sy_feats.append(style_features(resynthesize(model, u, seed=0)))
    for tag, feats in (("gt", gt_feats), ("synth", sy_feats)):
        fm = np.mean(np.stack(feats), axis=0)
        print(f"{corpus.styles[s].style_name:>8} {tag:>6} "
              + " ".join(f"{names[k](fm):>10.4f}" for k in names), flush=True)

# --- class-separation scale of each style route -----------------------------
e_p, e_a, ys = [], [], []
with torch.no_grad():
    for u in utts:
        spec = torch.from_numpy(u.spectrogram)
        e_p.append(model.frontend.encode_prompt(u.prompt).squeeze(0).numpy())
        e_a.append(model.frontend.encode_style_audio(spec).squeeze(0).numpy())
        ys.append(u.style_id)
e_p, e_a, ys = np.stack(e_p), np.stack(e_a), np.array(ys)
for tag, e in (("prompt", e_p), ("audio", e_a)):
    mu = np.stack([e[ys == s].mean(axis=0) for s in range(n_sty)])
    between = np.linalg.norm(mu - mu.mean(axis=0), axis=1).mean()
    within = np.mean([np.linalg.norm(e[ys == s] - mu[s], axis=1).mean()
                      for s in range(n_sty)])
    print(f"{tag}: mean emb norm {np.linalg.norm(e, axis=1).mean():.3f}  "
          f"between-class {between:.3f}  within-class {within:.3f}", flush=True)
