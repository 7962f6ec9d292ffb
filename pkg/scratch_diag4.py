"""Test: does continued training recover happy/angry rendering?"""
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from fusevoice.backbone import synthesize
from fusevoice.checkpoint import load_checkpoint, save_checkpoint
from fusevoice.config import RunConfig
from fusevoice.corpus import AudioParams, generate_corpus, style_valence
from fusevoice.evaluation import StyleProbe, resynthesize, style_features
from fusevoice.seeding import mix_seed
from fusevoice.training import make_optimizer, train, utterances_from_corpus

torch.set_num_threads(1)

corpus = generate_corpus(6, 4, 10, 0, AudioParams(16000, 256, 128, 2))
utts = utterances_from_corpus(corpus)
probe = StyleProbe().fit(utts)
n_sty = len(corpus.styles)
by_style = {}
for u in utts:
    by_style.setdefault(u.style_id, []).append(u)


def confusion(model, tag):
    conf = np.zeros((n_sty, n_sty), dtype=int)
    for u in utts[::4]:
        conf[u.style_id, probe.predict(resynthesize(model, u, seed=0))] += 1
    emot = [s for s in range(n_sty) if style_valence(corpus.styles[s]) != "neutral"]
    emo = sum(conf[s, s] for s in emot) / sum(conf[s].sum() for s in emot)
    print(f"{tag} confusion:\n{conf}\nemotional acc {emo:.3f} all {np.trace(conf)/conf.sum():.3f}",
          flush=True)
    return emo


def feature_shrinkage(model):
    # mean |frame-to-frame delta| of ground truth vs resynthesis, per style
    for s in range(n_sty):
        gt, sy = [], []
        for u in by_style[s][:6]:
            hyp = resynthesize(model, u, seed=0)
            gt.append(np.abs(np.diff(u.spectrogram, axis=0)).mean())
            sy.append(np.abs(np.diff(hyp, axis=0)).mean())
        print(f"  style {s} ({corpus.styles[s].style_name:>8}): "
              f"gt motion {np.mean(gt):.4f}  synth motion {np.mean(sy):.4f}", flush=True)


loaded = load_checkpoint("/tmp/diag_l2.fvc")
model = loaded.model
confusion(model, "step 2000")
feature_shrinkage(model)

cfg = model.cfg
opt = make_optimizer(model, cfg)
for extra in (2000, 2000):
    t0 = time.time()
    model, reports = train(cfg, utts, seed=0, steps=extra, model=model, optimizer=opt)
    print(f"+{extra} steps in {time.time()-t0:.0f}s, last totals "
          f"{[round(r.total,3) for r in reports[-3:]]}", flush=True)
    confusion(model, "after continue")
    feature_shrinkage(model)
save_checkpoint("/tmp/diag_l2_6000.fvc", model, seed=0, step=6000)
