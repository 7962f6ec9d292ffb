"""Command-line interface.

Subcommands: gen-data, train, synth, eval, ablate, export-embeddings.
Failures (bad flags, malformed inputs, contract violations) exit nonzero and
print a single-line JSON object to stderr: {"error": ..., "command": ...}.
Artifacts embed the config hash and seed and never contain timestamps, so
identical invocations produce identical bytes.

The FUSEVOICE_THREADS environment variable (default 1) sets the compute
thread count; no other environment inputs are consulted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import torch

from .backbone import synthesize
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash, load_config
from .corpus import AudioParams, generate_corpus, load_manifest, read_spectrogram, write_corpus, write_spectrogram
from .evaluation import (
    EXPORT_SITES,
    SpeakerScorer,
    StyleProbe,
    ablate,
    evaluate_model,
    export_embeddings,
    format_consistency_table,
    modality_consistency,
    write_ablation,
    write_embeddings_tsv,
    write_report,
)
from .fusion import VARIANTS
from .training import (
    make_model,
    make_optimizer,
    train,
    utterances_from_corpus,
    utterances_from_manifest,
)


class CliError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse's own failures through the JSON contract
        raise CliError(message)


def _audio_params(cfg: RunConfig) -> AudioParams:
    return AudioParams(
        sample_rate=cfg.sample_rate,
        n_fft=cfg.n_fft,
        hop=cfg.hop,
        frames_per_char=cfg.frames_per_char,
    )


def _load_data(data: str) -> tuple:
    path = Path(data)
    if path.is_dir():
        path = path / "manifest.jsonl"
    if not path.exists():
        raise CliError(f"no manifest found at {path}")
    manifest = load_manifest(path)
    return manifest, utterances_from_manifest(manifest)


def _write_meta(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    corpus = generate_corpus(
        cfg.speakers, cfg.styles, cfg.utterances_per_cell, seed, _audio_params(cfg)
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, out)
    _write_meta(
        out / "cli_meta.json",
        {"command": "gen-data", "config_hash": config_hash(cfg), "seed": seed},
    )
    print(f"wrote {len(corpus.records)} records to {out}")
    if corpus.warnings:
        for w in corpus.warnings:
            print(f"warning: {w}")
    return 0


def cmd_train(args) -> int:
    overrides = {"fusion": args.fusion, "steps": args.steps}
    cfg = load_config(args.config, overrides)
    seed = cfg.seed if args.seed is None else args.seed
    manifest, utts = _load_data(args.data)
    n_speakers = max(manifest.speakers) + 1
    n_styles = max(manifest.styles) + 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = make_model(cfg, n_speakers, n_styles, seed)
    optimizer = make_optimizer(model, cfg)
    model, reports = train(
        cfg,
        utts,
        n_speakers=n_speakers,
        n_styles=n_styles,
        seed=seed,
        log_path=out / "loss_log.jsonl",
        model=model,
        optimizer=optimizer,
    )
    save_checkpoint(out / "ckpt.fvc", model, seed=seed, step=len(reports), optimizer=optimizer)
    _write_meta(
        out / "train_meta.json",
        {
            "command": "train",
            "config_hash": config_hash(cfg),
            "seed": seed,
            "steps": len(reports),
            "fusion": cfg.fusion,
            "n_speakers": n_speakers,
            "n_styles": n_styles,
            "final_total": reports[-1].total if reports else None,
        },
    )
    print(f"trained {len(reports)} steps -> {out / 'ckpt.fvc'}")
    return 0


def cmd_synth(args) -> int:
    if args.speaker_ref is None:
        raise CliError("--speaker-ref is required: synthesis needs reference audio for voice identity")
    if args.prompt is None and args.style_ref is None:
        raise CliError("no style control given: provide --prompt, --style-ref, or both")
    loaded = load_checkpoint(args.ckpt)
    speaker_ref = read_spectrogram(args.speaker_ref)
    style_ref = read_spectrogram(args.style_ref) if args.style_ref else None
    seed = 0 if args.seed is None else args.seed
    spec = synthesize(
        loaded.model,
        args.text,
        speaker_ref=speaker_ref,
        style_prompt=args.prompt,
        style_ref=style_ref,
        seed=seed,
        temperature=args.temperature,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_spectrogram(out, spec)
    _write_meta(
        out.with_suffix(out.suffix + ".meta.json"),
        {
            "command": "synth",
            "config_hash": config_hash(loaded.cfg),
            "seed": seed,
            "temperature": loaded.cfg.temperature if args.temperature is None else args.temperature,
            "text": args.text,
            "frames": int(spec.shape[0]),
        },
    )
    print(f"synthesized {spec.shape[0]} frames -> {out}")
    return 0


def cmd_eval(args) -> int:
    loaded = load_checkpoint(args.ckpt)
    manifest, utts = _load_data(args.data)
    seed = 0 if args.seed is None else args.seed
    scorer = SpeakerScorer().fit(utts)
    probe = StyleProbe().fit(utts)
    report = evaluate_model(loaded.model, utts, scorer, probe, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    consistency = modality_consistency(loaded.model, utts, probe, manifest.styles, seed=seed)
    (out / "consistency.txt").write_text(format_consistency_table(consistency))
    with open(out / "consistency.jsonl", "w") as fh:
        for row in consistency:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _write_meta(
        out / "eval_meta.json",
        {
            "command": "eval",
            "config_hash": config_hash(loaded.cfg),
            "seed": seed,
            "mcd": report.mcd,
            "secs": report.secs,
            "emo_acc": report.emo_acc,
        },
    )
    print(f"mcd {report.mcd:.4f}  secs {report.secs:.4f}  emo_acc {report.emo_acc:.1f}%")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, {"steps": args.steps})
    seed = cfg.seed if args.seed is None else args.seed
    if args.data is not None:
        _, utts = _load_data(args.data)
    else:
        corpus = generate_corpus(
            cfg.speakers, cfg.styles, cfg.utterances_per_cell, seed, _audio_params(cfg)
        )
        utts = utterances_from_corpus(corpus)
    scorer = SpeakerScorer().fit(utts)
    probe = StyleProbe().fit(utts)
    rows = ablate(cfg, utts, scorer, probe, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ablation(rows, out)
    _write_meta(
        out / "ablate_meta.json",
        {"command": "ablate", "config_hash": config_hash(cfg), "seed": seed, "steps": cfg.steps},
    )
    for r in rows:
        print(f"{r.variant:<8} mcd {r.mcd:.4f}  secs {r.secs:.4f}  emo_acc {r.emo_acc:.1f}%")
    return 0


def cmd_export_embeddings(args) -> int:
    loaded = load_checkpoint(args.ckpt)
    _, utts = _load_data(args.data)
    seed = 0 if args.seed is None else args.seed
    sites = tuple(s.strip() for s in args.sites.split(",") if s.strip())
    if not sites:
        raise CliError(f"--sites must name at least one of {list(EXPORT_SITES)}")
    rows = export_embeddings(loaded.model, utts, sites=sites, seed=seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings_tsv(rows, out)
    _write_meta(
        out.with_suffix(out.suffix + ".meta.json"),
        {
            "command": "export-embeddings",
            "config_hash": config_hash(loaded.cfg),
            "seed": seed,
            "sites": list(sites),
            "rows": len(rows),
        },
    )
    print(f"wrote {len(rows)} embedding rows -> {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="fusevoice", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fusion", choices=list(VARIANTS), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="synthesize a spectrogram from text")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--speaker-ref", default=None)
    p.add_argument("--prompt", default=None)
    p.add_argument("--style-ref", default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="evaluate a checkpoint against ground truth")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare all fusion variants")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None, help="corpus dir; generated from config when omitted")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-embeddings", help="dump fusion-block embeddings to TSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sites", default=",".join(EXPORT_SITES))
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(int(os.environ.get("FUSEVOICE_THREADS", "1")))
    parser = build_parser()
    command = "?"
    try:
        args = parser.parse_args(argv)
        command = args.command
        return args.func(args)
    except CliError as err:
        print(json.dumps({"error": str(err), "command": command}), file=sys.stderr)
        return 2
    except (ValueError, OSError) as err:
        print(json.dumps({"error": str(err), "command": command}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
