import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest

from hkidqg.core import make_rng
from hkidqg.metrics import (
    EvalPair, bleu, bleu_corpus, cider_d, dehn, element_hits, evaluate_run, lcs_length, meteor_lite,
    rouge_l, tokenize_eval,
)

GOLDENS = Path(__file__).parent / "goldens"
sys.path.insert(0, str(GOLDENS))
from make_report_golden import fixture_pairs  # noqa: E402

PAIRS = json.loads((GOLDENS / "metric_pairs.json").read_text())
TOOLKIT = json.loads((GOLDENS / "metric_golden.json").read_text())


def test_tokenizer_examples():
    assert tokenize_eval("What is this?") == ["what", "is", "this"]
    assert tokenize_eval("") == []


def test_tokenizer_matches_toolkit_golden():
    cases = json.loads((GOLDENS / "tokenizer_golden.json").read_text())
    assert len(cases) == 50
    mismatches = [c["input"] for c in cases if tokenize_eval(c["input"]) != c["tokens"]]
    assert mismatches == []


def test_bleu_examples():
    assert bleu("the cat sat on the mat", ["the cat sat on the mat"])[3] == pytest.approx(1.0, abs=1e-8)
    assert bleu("the the the the", ["the cat"])[0] == pytest.approx(0.25, abs=1e-8)
    assert bleu("", ["a b"]) == [0.0, 0.0, 0.0, 0.0]


def test_corpus_scores_match_toolkit():
    cands = [p["candidate"] for p in PAIRS]
    refs = [p["references"] for p in PAIRS]
    corpus, per_record = bleu_corpus(cands, refs)
    for k in range(4):
        assert abs(corpus[k] - TOOLKIT["corpus"][f"BLEU-{k + 1}"]) < 1e-4
    cider, cider_rec = cider_d(cands, refs)
    assert abs(cider - TOOLKIT["corpus"]["CIDEr-D"]) < 1e-3
    rouge = [rouge_l(c, r) for c, r in zip(cands, refs)]
    assert abs(np.mean(rouge) - TOOLKIT["corpus"]["ROUGE-L"]) < 1e-4
    for i, p in enumerate(PAIRS):
        gold = TOOLKIT["records"][p["id"]]
        assert abs(rouge[i] - gold["ROUGE-L"]) < 1e-4, p["id"]
        assert abs(cider_rec[i] - gold["CIDEr-D"]) < 1e-3, p["id"]
        for k in range(4):
            assert abs(per_record[i][k] - gold[f"BLEU-{k + 1}"]) < 1e-4, p["id"]


def test_rouge_examples():
    assert rouge_l("a b c", ["a b c"]) == pytest.approx(1.0)
    assert rouge_l("a b c", ["x y z"]) == 0.0
    assert rouge_l("", ["a"]) == 0.0
    assert lcs_length("abcbdab", "bdcaba") == 4


def test_cider_examples():
    assert cider_d(["a b c"], [["a b c"]])[0] == 0.0
    cands = [p["candidate"] for p in PAIRS]
    refs = [[p["references"][0]] for p in PAIRS]
    _, base = cider_d(cands, refs)
    for i in range(len(PAIRS)):
        ident = list(cands)
        ident[i] = refs[i][0]
        _, rec = cider_d(ident, refs)
        assert rec[i] >= base[i]
        if cands[i] != refs[i][0]:
            assert rec[i] > base[i]


def test_meteor_closed_forms():
    assert meteor_lite("a b c d", ["a b c d"]) == pytest.approx(1 - 0.5 / 64, abs=1e-12)
    assert meteor_lite("a b c d", ["x y z"]) == 0.0
    assert meteor_lite("", ["a"]) == 0.0
    reversed_score = meteor_lite("d c b a", ["a b c d"])
    assert reversed_score == pytest.approx(0.5, abs=1e-12)
    assert reversed_score < meteor_lite("a b c d", ["a b c d"])


def test_reference_set_monotonicity():
    rng = make_rng(2)
    vocab = ["the", "heart", "pumps", "blood", "valve", "what", "is"]
    for _ in range(100):
        cand = " ".join(rng.choice(vocab, size=int(rng.integers(1, 8))))
        refs = [" ".join(rng.choice(vocab, size=int(rng.integers(1, 8)))) for _ in range(2)]
        more = refs + [" ".join(rng.choice(vocab, size=int(rng.integers(1, 8))))]
        assert rouge_l(cand, more) >= rouge_l(cand, refs)
        assert meteor_lite(cand, more) >= meteor_lite(cand, refs)


# (question, elements, expected hits); covers case, punctuation, token boundaries,
# multi-word elements, duplicates and the empty edges.
DEHN_TABLE = [
    ("what structure pumps blood through the heart", ["heart", "valve", "aorta"], 1),
    ("Where is the art gallery?", ["heart"], 0),
    ("How does the heart beat?", ["art"], 0),
    ("HEART and Valve", ["heart", "valve"], 2),
    ("Is the heart's valve open?", ["heart"], 1),
    ("heart-valve disease", ["heart", "valve"], 2),
    ("hearts pump", ["heart"], 0),
    ("the sea star eats mussels", ["sea star"], 1),
    ("the sea and the star", ["sea star"], 0),
    ("the star sea", ["sea star"], 0),
    ("sea  star", ["sea star"], 1),
    ("sea-star", ["sea star"], 1),
    ("heart heart heart", ["heart"], 1),
    ("heart", ["heart", "heart"], 1),
    ("heart", ["Heart", "heart!"], 1),
    ("", ["heart"], 0),
    ("what is this", [], 0),
    ("what is this", [""], 0),
    ("what is this", ["?!"], 0),
    ("root, stem, and leaf", ["root", "stem", "leaf", "flower"], 3),
    ("rootstem", ["root", "stem"], 0),
    ("under_score", ["under"], 1),  # underscore is punctuation, so it separates words
    ("the aorta.", ["aorta"], 1),
    ("(aorta)", ["aorta"], 1),
    ("The Sun's energy", ["sun"], 1),
    ("sunlight reaches", ["sun"], 0),
    ("CO2 levels", ["co2"], 1),
    ("café menu", ["café"], 1),
    ("water cycle and rock cycle", ["water cycle", "rock cycle", "cycle"], 3),
    ("blood flows from the left atrium", ["left atrium", "right atrium"], 1),
]


def test_dehn_rule_table():
    assert len(DEHN_TABLE) == 30
    failures = [(q, e) for q, e, n in DEHN_TABLE if element_hits(q, e) != n]
    assert failures == []


def test_dehn_examples_and_errors():
    assert dehn(["what structure pumps blood through the heart"], [["heart", "valve", "aorta"]]) == 1.0
    assert dehn(["heart and valve", "nothing"], [["heart", "valve"], ["heart"]]) == 1.0
    with pytest.raises(ValueError):
        dehn([], [])
    with pytest.raises(ValueError):
        dehn(["a"], [])


def test_dehn_monotone_under_appending_elements():
    rng = make_rng(8)
    elements = ["heart", "valve", "sea star", "left atrium", "sun"]
    words = ["the", "what", "heart", "sea", "star", "of", "sun", "left"]
    for _ in range(100):
        q = " ".join(rng.choice(words, size=int(rng.integers(0, 8))))
        e = elements[int(rng.integers(len(elements)))]
        assert element_hits(q + " " + e, elements) >= element_hits(q, elements)


def test_ranges_on_random_corpus():
    rng = make_rng(4)
    vocab = ["a", "b", "c", "d", "e", "f"]
    cands = [" ".join(rng.choice(vocab, size=int(rng.integers(1, 9)))) for _ in range(30)]
    refs = [[" ".join(rng.choice(vocab, size=int(rng.integers(1, 9))))] for _ in range(30)]
    report = evaluate_run([EvalPair(c, r, ["a"]) for c, r in zip(cands, refs)])
    for name, value in report.scores.items():
        hi = 10.0 if name == "CIDEr-D" else (1.0 if name != "DEHN" else 1.0)
        assert 0.0 <= value <= hi + 1e-12, name


def test_evaluate_identity_and_order_invariance():
    pairs = [EvalPair(p["references"][0], p["references"], [], p["id"]) for p in PAIRS]
    report = evaluate_run(pairs)
    for k in range(1, 5):
        assert report.scores[f"BLEU-{k}"] == pytest.approx(1.0, abs=1e-8)
    assert report.scores["ROUGE-L"] == pytest.approx(1.0)

    pairs = fixture_pairs()
    base = evaluate_run(pairs).scores
    perm = make_rng(0).permutation(len(pairs))
    assert evaluate_run([pairs[i] for i in perm]).scores == base


def test_report_matches_frozen_golden():
    golden = json.loads((GOLDENS / "report_golden.json").read_text())
    report = json.loads(json.dumps(evaluate_run(fixture_pairs()).to_dict(), sort_keys=True))
    assert report == golden


def test_report_text_and_notes():
    report = evaluate_run(fixture_pairs(), counts={"coverage": 1.0})
    text = report.to_text()
    assert "METEOR-lite" in text and "not comparable" in text
    assert report.counts == {"records": 20, "coverage": 1.0}
    with pytest.raises(ValueError):
        evaluate_run([])
    with pytest.raises(ValueError):
        EvalPair("q", [])
