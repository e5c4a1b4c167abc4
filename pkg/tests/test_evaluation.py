import csv

import numpy as np
import pytest

from app.core.errors import InsufficientSamplesError
from app.models.motion import MotionSequence
from app.schemas.eval import EvalConfig
from app.services.evaluation_service import (
    METRIC_ORDER, embed_generated, evaluate, evaluate_real, policy_generator, summarize, write_report,
)


@pytest.fixture
def eval_config():
    return EvalConfig(repeats=2, pool=4, diversity_pairs=20, mmodality_reps=2, mmodality_pairs=1,
                      mmodality_repeats=1, mmodality_texts=2)


def test_summary_follows_metric_order():
    report = summarize({"FID": [1.0, 3.0], "R-Precision Top-1": [0.5, 0.5], "MModality": []})
    assert [m.metric for m in report.metrics] == ["R-Precision Top-1", "FID"]
    fid = report.get("FID")
    assert fid.estimate == 2.0
    assert fid.ci95 == pytest.approx(1.96 / np.sqrt(2.0))
    assert report.get("Diversity") is None


def test_report_csv(tmp_path):
    report = summarize({"Diversity": [2.0, 2.0]})
    path = write_report(report, tmp_path / "eval" / "eval.csv")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows == [{"metric": "Diversity", "estimate": "2.0", "ci95": "0.0", "repeats": "2"}]


def test_unparsable_generations_embed_as_zero(tiny_pair):
    motion = MotionSequence(np.random.default_rng(0).standard_normal((12, 12)))
    emb = embed_generated([motion, None], tiny_pair)
    assert np.linalg.norm(emb[0]) == pytest.approx(1.0)
    np.testing.assert_array_equal(emb[1], np.zeros(tiny_pair.embed_dim))


def test_policy_generator_returns_requested_count(tiny_policy, tiny_vocab, tiny_tokenizer, short_sampling):
    generate = policy_generator(tiny_policy, tiny_vocab, tiny_tokenizer, short_sampling)
    motions = generate("a person jumps twice", 3, 0)
    assert len(motions) == 3
    assert all(m is None or isinstance(m, MotionSequence) for m in motions)


def test_real_motion_reference_row(tmp_path, tiny_pair, tiny_corpus, eval_config):
    report = evaluate_real(tiny_pair, tiny_corpus, eval_config, seed=0, out_path=tmp_path / "real.csv")
    assert report.get("FID").estimate == pytest.approx(0.0, abs=1e-4)
    assert report.get("MModality") is None
    top1, top3 = report.get("R-Precision Top-1").estimate, report.get("R-Precision Top-3").estimate
    assert 0.0 <= top1 <= top3 <= 1.0
    assert (tmp_path / "real.csv").exists()


def test_evaluate_reports_every_metric(tmp_path, tiny_policy, tiny_vocab, tiny_tokenizer, tiny_pair, tiny_corpus,
                                       eval_config, short_sampling):
    report = evaluate(tiny_policy, tiny_vocab, tiny_tokenizer, tiny_pair, tiny_corpus[:12], eval_config,
                      short_sampling, seed=0, out_path=tmp_path / "eval.csv", features_path=tmp_path / "f.jsonl")
    assert [m.metric for m in report.metrics] == list(METRIC_ORDER)
    assert report.get("R-Precision Top-1").repeats == 2
    assert report.get("MModality").repeats == 1
    assert all(m.ci95 >= 0.0 for m in report.metrics)
    lines = (tmp_path / "f.jsonl").read_text().splitlines()
    assert len(lines) == 12 + 2 * 12


def test_evaluate_is_reproducible(tiny_policy, tiny_vocab, tiny_tokenizer, tiny_pair, tiny_corpus, eval_config,
                                  short_sampling):
    cfg = eval_config.model_copy(update={"mmodality_repeats": 1, "repeats": 2})
    first = evaluate(tiny_policy, tiny_vocab, tiny_tokenizer, tiny_pair, tiny_corpus[:12], cfg, short_sampling, 5)
    second = evaluate(tiny_policy, tiny_vocab, tiny_tokenizer, tiny_pair, tiny_corpus[:12], cfg, short_sampling, 5)
    assert first == second


def test_evaluate_needs_a_full_retrieval_pool(tiny_policy, tiny_vocab, tiny_tokenizer, tiny_pair, tiny_corpus,
                                              short_sampling):
    with pytest.raises(InsufficientSamplesError):
        evaluate(tiny_policy, tiny_vocab, tiny_tokenizer, tiny_pair, tiny_corpus[:5], EvalConfig(pool=32),
                 short_sampling)
