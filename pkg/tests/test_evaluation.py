"""Metrics, probes, ablation harness, consistency study, embedding export."""

import math

import numpy as np
import pytest

from fusevoice.corpus import STYLE_PRESETS, AudioParams, generate_corpus
from fusevoice.evaluation import (
    CONSISTENCY_CASES,
    EXPORT_SITES,
    REFERENCE_SECS,
    AblationRow,
    EmbeddingRow,
    EvaluationError,
    MetricReport,
    SpeakerScorer,
    StyleProbe,
    ablate,
    cosine,
    emo_acc,
    evaluate_model,
    export_embeddings,
    format_ablation_table,
    format_consistency_table,
    format_metric_table,
    mcd,
    modality_consistency,
    read_embeddings_tsv,
    resynthesize,
    secs,
    site_probe_accuracy,
    write_ablation,
    write_embeddings_tsv,
    write_report,
)
from fusevoice.training import utterances_from_corpus

_MCD_SCALE = (10.0 / math.log(10.0)) * math.sqrt(2.0)


@pytest.fixture(scope="module")
def corpus_eval():
    # 3 speakers x 4 styles x 10 utterances: enough per-cell data to fit and
    # hold out the ground-truth probes
    return generate_corpus(3, 4, 10, 21, AudioParams(16000, 256, 128, 2))


@pytest.fixture(scope="module")
def utts_eval(corpus_eval):
    return utterances_from_corpus(corpus_eval)


@pytest.fixture(scope="module")
def fitted_probe(utts_eval):
    return StyleProbe().fit(utts_eval[0::2])


@pytest.fixture(scope="module")
def fitted_scorer(utts_eval):
    return SpeakerScorer().fit(utts_eval[0::2])


class StubProbe:
    """Duck-typed probe with canned predictions, for exact-value checks."""

    def __init__(self, answers):
        self._answers = list(answers)
        self._i = 0

    def predict(self, spec):
        out = self._answers[self._i % len(self._answers)]
        self._i += 1
        return out


# ---------------------------------------------------------------------------
# MCD


def test_mcd_identical_is_zero(rng):
    spec = rng.random((9, 16)) + 0.01
    assert mcd(spec, spec) == 0.0


def test_mcd_duplicated_frame_is_zero_under_dtw(rng):
    ref = rng.random((7, 16)) + 0.01
    hyp = np.insert(ref, 3, ref[3], axis=0)  # one frame repeated
    assert mcd(ref, hyp) == pytest.approx(0.0, abs=1e-12)


def test_mcd_two_frame_instance_matches_formula_oracle():
    # bin-dependent distortions, so higher cepstral coefficients move (a flat
    # per-frame gain would only shift the excluded 0th coefficient)
    b = 16
    base0 = np.linspace(0.5, 2.0, b)
    base1 = np.linspace(4.0, 0.2, b)
    ref = np.stack([base0, base1])
    hyp = np.stack(
        [
            base0 * np.linspace(0.9, 1.3, b),
            base1 * (1.0 + 0.3 * np.cos(np.arange(b))),
        ]
    )

    def coeffs(frame):
        x = [math.log(max(v, 1e-8)) for v in frame]
        n = len(x)
        out = []
        for k in range(1, 14):
            s = 0.0
            for i in range(n):
                s += x[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n))
            out.append(2.0 * s)
        return out

    dists = []
    for t in range(2):
        cr, ch = coeffs(ref[t]), coeffs(hyp[t])
        dists.append(math.sqrt(sum((a - c) ** 2 for a, c in zip(cr, ch))))
    # on a 2x2 grid the diagonal path always wins (costs are non-negative)
    want = _MCD_SCALE * (dists[0] + dists[1]) / 2.0
    assert want > 0.1
    assert mcd(ref, hyp) == pytest.approx(want, abs=1e-9)


def test_mcd_is_a_pseudometric(rng):
    a = rng.random((6, 16)) + 0.01
    b = rng.random((9, 16)) + 0.01
    assert mcd(a, b) >= 0.0
    assert mcd(a, b) == pytest.approx(mcd(b, a), abs=1e-9)


def test_mcd_error_contracts(rng):
    good = rng.random((4, 16)) + 0.01
    with pytest.raises(EvaluationError, match="non-empty"):
        mcd(np.empty((0, 16)), good)
    with pytest.raises(EvaluationError, match="matching bin counts"):
        mcd(good, rng.random((4, 12)))


# ---------------------------------------------------------------------------
# secs / cosine


def test_cosine_basics(rng):
    v = rng.normal(size=32)
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-6)
    assert cosine(v, -v) == pytest.approx(-1.0, abs=1e-6)
    assert cosine(v, np.zeros(32)) == 0.0
    # invariant to positive scaling of either side
    w = rng.normal(size=32)
    assert cosine(3.7 * v, w) == pytest.approx(cosine(v, w), abs=1e-9)
    assert cosine(v, 0.002 * w) == pytest.approx(cosine(v, w), abs=1e-9)


def test_secs_self_similarity_is_one(fitted_scorer, utts_eval):
    spec = utts_eval[1].spectrogram
    assert secs(fitted_scorer, spec, spec) == pytest.approx(1.0, abs=1e-6)
    assert -1.0 <= secs(fitted_scorer, spec, utts_eval[5].spectrogram) <= 1.0


def test_secs_separates_same_from_cross_speaker_pairs(fitted_scorer, utts_eval):
    held_out = utts_eval[1::2]
    same, cross = [], []
    for i, a in enumerate(held_out):
        for b in held_out[i + 1 :]:
            score = secs(fitted_scorer, a.spectrogram, b.spectrogram)
            (same if a.speaker_id == b.speaker_id else cross).append(score)
    assert np.mean(same) > np.mean(cross)


def test_scorer_error_contracts(utts_eval):
    with pytest.raises(EvaluationError, match="before fitting"):
        SpeakerScorer().embed(utts_eval[0].spectrogram)
    single = [u for u in utts_eval if u.speaker_id == 0]
    with pytest.raises(EvaluationError, match="at least two speakers"):
        SpeakerScorer().fit(single)


# ---------------------------------------------------------------------------
# style probe and emo_acc


def test_style_probe_validation_accuracy(fitted_probe, utts_eval):
    held_out = utts_eval[1::2]
    assert fitted_probe.accuracy(held_out) >= 0.9


def test_emo_acc_exact_on_hand_sets(rng):
    spec = rng.random((8, 16))
    items = [(spec, 0), (spec, 1), (spec, 0), (spec, 3)]
    assert emo_acc(items, StubProbe([0, 1, 2, 3])) == 75.0
    assert emo_acc(items, StubProbe([0, 1, 0, 3])) == 100.0
    assert emo_acc(items, StubProbe([9, 9, 9, 9])) == 0.0


def test_emo_acc_random_probe_sits_at_chance(rng):
    k = 4
    spec = rng.random((8, 16))
    items = [(spec, int(rng.integers(k))) for _ in range(2000)]
    guesser = StubProbe(rng.integers(k, size=2000).tolist())
    assert emo_acc(items, guesser) == pytest.approx(100.0 / k, abs=5.0)


def test_emo_acc_error_contracts(fitted_probe, utts_eval, rng):
    with pytest.raises(EvaluationError, match="at least one item"):
        emo_acc([], fitted_probe)
    with pytest.raises(EvaluationError, match="before fitting"):
        emo_acc([(rng.random((8, 129)), 0)], StyleProbe())
    one_style = [u for u in utts_eval if u.style_id == 2][:4]
    with pytest.raises(EvaluationError, match="at least two styles"):
        StyleProbe().fit(one_style)


# ---------------------------------------------------------------------------
# reports


def test_metric_report_aggregates_and_ranges():
    rows = [
        {"id": "a", "mcd": 2.0, "secs": 0.5, "style_ok": True},
        {"id": "b", "mcd": 4.0, "secs": 0.7, "style_ok": False},
    ]
    report = MetricReport.from_rows(rows)
    assert report.mcd == 3.0
    assert report.secs == pytest.approx(0.6)
    assert report.emo_acc == 50.0
    assert report.aggregates_consistent()
    report.mcd = 99.0
    assert not report.aggregates_consistent()
    with pytest.raises(EvaluationError, match="empty row set"):
        MetricReport.from_rows([])


def test_evaluate_model_is_pure_and_writes_reports(
    model_small, utts_small, fitted_scorer, fitted_probe, tmp_path
):
    subset = utts_small[:3]
    r1 = evaluate_model(model_small, subset, fitted_scorer, fitted_probe, seed=2)
    r2 = evaluate_model(model_small, subset, fitted_scorer, fitted_probe, seed=2)
    assert r1 == r2
    assert len(r1.rows) == 3
    assert all(r["mcd"] >= 0.0 for r in r1.rows)
    assert all(-1.0 <= r["secs"] <= 1.0 for r in r1.rows)
    assert 0.0 <= r1.emo_acc <= 100.0

    write_report(r1, tmp_path)
    table = (tmp_path / "report.txt").read_text()
    assert "mcd" in table and "mean" in table
    assert table == format_metric_table(r1)
    lines = (tmp_path / "report.jsonl").read_text().splitlines()
    assert len(lines) == 4  # 3 rows + aggregate
    assert '"aggregate"' in lines[-1]


def test_resynthesize_is_seed_deterministic(model_small, utts_small):
    a = resynthesize(model_small, utts_small[2], seed=5)
    b = resynthesize(model_small, utts_small[2], seed=5)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# ablation harness


def test_ablation_grid_shape_and_determinism(
    cfg_small, utts_small, fitted_scorer, fitted_probe, tmp_path
):
    subset = utts_small[:6]
    rows = ablate(cfg_small, subset, fitted_scorer, fitted_probe, seed=3, steps=2)
    assert [r.variant for r in rows] == ["hctscm", "tscm", "concat"]
    rerun = ablate(cfg_small, subset, fitted_scorer, fitted_probe, seed=3, steps=2)
    assert rows == rerun

    write_ablation(rows, tmp_path)
    table = (tmp_path / "ablation.txt").read_text()
    assert table == format_ablation_table(rows)
    assert "no ordering is asserted" in table
    assert "0.810" in table and "0.755" in table and "0.742" in table
    assert len((tmp_path / "ablation.jsonl").read_text().splitlines()) == 3


def test_reference_ordering_reported_not_asserted():
    assert REFERENCE_SECS == {"hctscm": 0.810, "tscm": 0.755, "concat": 0.742}
    assert REFERENCE_SECS["hctscm"] > REFERENCE_SECS["tscm"] > REFERENCE_SECS["concat"]


def test_ablate_rejects_unknown_variant(cfg_small, utts_small, fitted_scorer, fitted_probe):
    with pytest.raises(EvaluationError, match="unknown fusion variant"):
        ablate(
            cfg_small, utts_small[:4], fitted_scorer, fitted_probe,
            variants=("bilinear",), steps=1,
        )


# ---------------------------------------------------------------------------
# modality-consistency study


def test_consistency_study_row_structure(model_small, utts_small, fitted_probe, corpus_small):
    rows = modality_consistency(
        model_small, utts_small, fitted_probe, corpus_small.styles, seed=1, n_per_case=3
    )
    assert [r["case"] for r in rows] == list(CONSISTENCY_CASES)
    assert len(rows) == 5
    for r in rows:
        assert r["n"] == 3
        assert 0.0 <= r["accuracy"] <= 1.0
    for r in rows[3:]:
        assert r["audio_wins"] + r["prompt_wins"] + r["neither"] == pytest.approx(1.0)
    assert "audio_wins" not in rows[0]

    table = format_consistency_table(rows)
    for case in CONSISTENCY_CASES:
        assert case in table
    assert "accuracy" in table


def test_consistency_study_requires_all_valences(model_small, utts_small, fitted_probe):
    neutral_only = {0: STYLE_PRESETS[0]}
    only_neutral_utts = [u for u in utts_small if u.style_id == 0]
    with pytest.raises(EvaluationError, match="missing"):
        modality_consistency(
            model_small, only_neutral_utts, fitted_probe, neutral_only, seed=0
        )


# ---------------------------------------------------------------------------
# embedding export


def test_export_embeddings_rows_and_dims(model_small, utts_small):
    subset = utts_small[:4]
    rows = export_embeddings(model_small, subset, seed=0)
    assert len(rows) == len(subset) * len(EXPORT_SITES)
    for site in EXPORT_SITES:
        dims = {len(r.vector) for r in rows if r.site == site}
        assert len(dims) == 1
    only_input = export_embeddings(model_small, subset, sites=("input",), seed=0)
    assert len(only_input) == 4
    assert {r.site for r in only_input} == {"input"}


def test_export_rejects_unknown_site(model_small, utts_small):
    with pytest.raises(EvaluationError, match="unknown embedding site"):
        export_embeddings(model_small, utts_small[:1], sites=("input", "bottleneck"))


def test_embeddings_tsv_round_trip(model_small, utts_small, tmp_path):
    rows = export_embeddings(model_small, utts_small[:3], seed=4)
    path = tmp_path / "emb.tsv"
    write_embeddings_tsv(rows, path)
    back = read_embeddings_tsv(path)
    assert len(back) == len(rows)
    for a, b in zip(rows, back):
        assert (a.utt_id, a.site, a.speaker_id, a.style_id) == (
            b.utt_id, b.site, b.speaker_id, b.style_id,
        )
        assert np.allclose(a.vector, b.vector, rtol=1e-6, atol=1e-8)
    with pytest.raises(EvaluationError, match="no embedding rows"):
        write_embeddings_tsv([], tmp_path / "empty.tsv")


def test_read_embeddings_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("who\twhat\twhere\n")
    with pytest.raises(EvaluationError, match="unexpected embedding TSV header"):
        read_embeddings_tsv(path)


def test_site_probe_prefers_structured_site(rng):
    # planted structure: one site carries the speaker, the other is noise;
    # (i // 2) % 4 keeps every class present in both parity folds
    rows = []
    for i in range(40):
        spk = (i // 2) % 4
        onehot = np.zeros(8)
        onehot[spk] = 4.0
        rows.append(EmbeddingRow(f"u{i}", "post-speaker", spk, 0,
                                 onehot + rng.normal(scale=0.1, size=8)))
        rows.append(EmbeddingRow(f"u{i}", "input", spk, 0,
                                 rng.normal(size=8)))
    acc = site_probe_accuracy(rows, label="speaker")
    assert acc["post-speaker"] > acc["input"]
    assert acc["post-speaker"] > 0.9


def test_site_probe_error_contracts(rng):
    rows = [EmbeddingRow("u0", "input", 0, 0, rng.normal(size=4)) for _ in range(6)]
    with pytest.raises(EvaluationError, match="probe label"):
        site_probe_accuracy(rows, label="phoneme")
    with pytest.raises(EvaluationError, match="fewer than 2 classes"):
        site_probe_accuracy(rows, label="speaker")
