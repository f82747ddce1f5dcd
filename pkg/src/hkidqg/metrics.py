"""Question-generation metrics: BLEU-1..4, ROUGE-L, METEOR-lite, CIDEr-D, DEHN.

BLEU, ROUGE-L and CIDEr-D follow the COCO caption evaluation toolkit
arithmetic (including its epsilon constants and closest-reference brevity
rule) so that corpus numbers are directly comparable. ``tokenize_eval``
reproduces the toolkit's PTB tokenization followed by punctuation removal.

METEOR-lite uses exact unigram matches only (no stemming or synonyms), so its
values are not comparable to the Java METEOR 1.5 numbers.
"""
from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

REPORT_SCHEMA_VERSION = 1
METEOR_NOTE = "METEOR-lite: exact-match unigram alignment only; not comparable to METEOR 1.5"

# -- tokenization -----------------------------------------------------------

# tokens dropped by the toolkit after PTB tokenization
_DROP = {'"', "''", "'", "``", "`", ".", "?", "!", ",", ":", "-", "--", "...", ";"}
_BRACKETS = {"(": "-lrb-", ")": "-rrb-", "[": "-lsb-", "]": "-rsb-", "{": "-lcb-", "}": "-rcb-"}
_CLITIC = re.compile(r"^(.+?)(n't|'s|'re|'ve|'d|'ll|'m)$")
_SPLIT_ALWAYS = re.compile(r'(\.\.\.|--|[?!;"%$]|[()\[\]{}])')
_SPLIT_NONNUMERIC = re.compile(r"(?<!\d)([,:])|([,:])(?!\d)")


def _split_token(tok: str) -> list:
    out = []
    while tok[:1] in ("'", "`") and len(tok) > 1 and not _CLITIC.match(tok):
        out.append(tok[0])
        tok = tok[1:]
    tail = []
    if tok.endswith(".") and len(tok) > 1 and "." not in tok[:-1]:
        tail.append(".")
        tok = tok[:-1]
    if tok == "cannot":
        return out + ["can", "not"] + tail
    m = _CLITIC.match(tok)
    if m and m.group(1) not in ("'", "`"):
        out += [m.group(1), m.group(2)]
    elif tok.endswith("'") and len(tok) > 1:
        out += [tok[:-1], "'"]
    else:
        out.append(tok)
    return out + tail


def tokenize_eval(s: str) -> list:
    """Lowercase PTB-style tokens with punctuation tokens removed.

    Contractions split (``doesn't`` -> ``does n't``), brackets become
    ``-lrb-``/``-rrb-`` tokens (kept, as in the toolkit), hyphenated words and
    decimals stay whole, ``%`` and ``$`` are separate tokens.
    """
    s = s.lower().replace("\n", " ")
    s = _SPLIT_ALWAYS.sub(r" \1 ", s)
    s = _SPLIT_NONNUMERIC.sub(lambda m: f" {m.group(0)} ", s)
    tokens = []
    for tok in s.split():
        if tok in _BRACKETS:
            tokens.append(_BRACKETS[tok])
        else:
            tokens.extend(_split_token(tok))
    return [t for t in tokens if t not in _DROP]


def _as_tokens(x) -> list:
    return tokenize_eval(x) if isinstance(x, str) else list(x)


def _ngrams(tokens, n_max=4) -> Counter:
    counts = Counter()
    for k in range(1, n_max + 1):
        for i in range(len(tokens) - k + 1):
            counts[tuple(tokens[i:i + k])] += 1
    return counts


# -- BLEU -------------------------------------------------------------------

_TINY = 1e-15
_SMALL = 1e-9


def _bleu_stats(cand, refs, n_max):
    cand_counts = _ngrams(cand, n_max)
    max_ref = Counter()
    for r in refs:
        for g, c in _ngrams(r, n_max).items():
            if c > max_ref[g]:
                max_ref[g] = c
    correct = [0] * n_max
    for g, c in cand_counts.items():
        correct[len(g) - 1] += min(c, max_ref[g])
    guess = [max(0, len(cand) - k + 1) for k in range(1, n_max + 1)]
    return correct, guess


def _bleu_from_stats(correct, guess, testlen, reflen, n_max):
    scores = []
    prod = 1.0
    for k in range(n_max):
        prod *= (correct[k] + _TINY) / (guess[k] + _SMALL)
        scores.append(prod ** (1.0 / (k + 1)))
    ratio = (testlen + _TINY) / (reflen + _SMALL)
    if ratio < 1:
        scores = [s * math.exp(1 - 1 / ratio) for s in scores]
    return scores


def bleu_corpus(candidates, references, max_n=4):
    """Corpus BLEU-1..max_n plus per-record BLEU.

    Brevity penalty uses, per record, the reference length closest to the
    candidate (shorter wins ties); with a single record the mean reference
    length is used instead. Returns ``(corpus_scores, per_record_scores)``.
    """
    cands = [_as_tokens(c) for c in candidates]
    refs = [[_as_tokens(r) for r in rs] for rs in references]
    if len(cands) != len(refs):
        raise ValueError("candidates and references differ in length")
    single = len(cands) == 1
    tot_correct = [0] * max_n
    tot_guess = [0] * max_n
    tot_test = 0
    tot_ref = 0.0
    per_record = []
    for c, rs in zip(cands, refs):
        if not rs:
            raise ValueError("every record needs at least one reference")
        correct, guess = _bleu_stats(c, rs, max_n)
        lens = [len(r) for r in rs]
        if single:
            reflen = sum(lens) / len(lens)
        else:
            reflen = min((abs(l - len(c)), l) for l in lens)[1]
        tot_test += len(c)
        tot_ref += reflen
        for k in range(max_n):
            tot_correct[k] += correct[k]
            tot_guess[k] += guess[k]
        rec = [0.0] * max_n if not c else _bleu_from_stats(correct, guess, len(c), reflen, max_n)
        per_record.append(rec)
    if tot_test == 0:
        return [0.0] * max_n, per_record
    return _bleu_from_stats(tot_correct, tot_guess, tot_test, tot_ref, max_n), per_record


def bleu(candidate, references, max_n=4):
    """BLEU-1..max_n of a single candidate (a one-record corpus)."""
    return bleu_corpus([candidate], [references], max_n)[0]


# -- ROUGE-L ----------------------------------------------------------------

ROUGE_BETA = 1.2


def lcs_length(a, b) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, references, beta=ROUGE_BETA) -> float:
    """LCS F-measure from the best precision and best recall over references."""
    cand = _as_tokens(candidate)
    refs = [_as_tokens(r) for r in references]
    if not refs:
        raise ValueError("rouge_l needs at least one reference")
    if not cand:
        return 0.0
    prec, rec = [], []
    for r in refs:
        lcs = lcs_length(r, cand)
        prec.append(lcs / len(cand))
        rec.append(lcs / len(r) if r else 0.0)
    p, r = max(prec), max(rec)
    if p == 0 or r == 0:
        return 0.0
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


# -- METEOR-lite ------------------------------------------------------------

METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_THETA = 3.0


def _align(cand, ref):
    """Exact-match alignment: each candidate token takes the reference position
    right after the previous match when that continues a chunk, else the
    earliest unused occurrence. Returns aligned (cand_idx, ref_idx) pairs."""
    positions = defaultdict(list)
    for j, w in enumerate(ref):
        positions[w].append(j)
    used = set()
    pairs = []
    prev_j = None
    for i, w in enumerate(cand):
        free = [j for j in positions.get(w, ()) if j not in used]
        if not free:
            continue
        j = prev_j + 1 if prev_j is not None and prev_j + 1 in free else free[0]
        used.add(j)
        pairs.append((i, j))
        prev_j = j
    return pairs


def _chunks(pairs) -> int:
    chunks = 0
    last = None
    for i, j in pairs:
        if last is None or i != last[0] + 1 or j != last[1] + 1:
            chunks += 1
        last = (i, j)
    return chunks


def meteor_single(cand, ref, alpha=METEOR_ALPHA, gamma=METEOR_GAMMA, theta=METEOR_THETA) -> float:
    if not cand or not ref:
        return 0.0
    pairs = _align(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    f_mean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (_chunks(pairs) / m) ** theta
    return f_mean * (1 - penalty)


def meteor_lite(candidate, references) -> float:
    cand = _as_tokens(candidate)
    refs = [_as_tokens(r) for r in references]
    if not refs:
        raise ValueError("meteor_lite needs at least one reference")
    return max(meteor_single(cand, r) for r in refs)


# -- CIDEr-D ----------------------------------------------------------------

CIDER_SIGMA = 6.0


def cider_d(candidates, references, n=4, sigma=CIDER_SIGMA):
    """Corpus CIDEr-D. Returns ``(mean_score, per_record_scores)``.

    Document frequencies come from the reference sets of the whole corpus, so a
    one-record corpus always scores 0.
    """
    cands = [_ngrams(_as_tokens(c), n) for c in candidates]
    refs = [[_ngrams(_as_tokens(r), n) for r in rs] for rs in references]
    if len(cands) != len(refs):
        raise ValueError("candidates and references differ in length")
    if not cands:
        raise ValueError("cider_d needs a non-empty corpus")
    df = Counter()
    for rs in refs:
        for g in {g for r in rs for g in r}:
            df[g] += 1
    log_n = math.log(float(len(refs)))

    def vectorize(counts):
        vec = [dict() for _ in range(n)]
        norm = [0.0] * n
        length = 0
        for g, tf in counts.items():
            k = len(g) - 1
            w = tf * (log_n - math.log(max(1.0, df[g])))
            vec[k][g] = w
            norm[k] += w * w
            if k == 1:
                # the toolkit measures length as the bigram count
                length += tf
        return vec, [math.sqrt(x) for x in norm], length

    scores = []
    for c, rs in zip(cands, refs):
        vec_c, norm_c, len_c = vectorize(c)
        acc = np.zeros(n)
        for r in rs:
            vec_r, norm_r, len_r = vectorize(r)
            delta = float(len_c - len_r)
            for k in range(n):
                val = 0.0
                for g, w in vec_c[k].items():
                    wr = vec_r[k].get(g, 0.0)
                    val += min(w, wr) * wr
                if norm_c[k] != 0 and norm_r[k] != 0:
                    val /= norm_c[k] * norm_r[k]
                acc[k] += val * math.exp(-(delta ** 2) / (2 * sigma ** 2))
        scores.append(float(np.mean(acc)) / len(rs) * 10.0)
    return math.fsum(scores) / len(scores), scores


# -- DEHN -------------------------------------------------------------------

_WORD = re.compile(r"[^\W_]+")


def _norm_tokens(s: str) -> tuple:
    return tuple(_WORD.findall(s.lower()))


def element_hits(question: str, elements) -> int:
    """Number of distinct elements found in the question.

    Matching is case-insensitive and ignores punctuation; an element hits when
    its word sequence occurs as a contiguous run of whole question words.
    """
    q = _norm_tokens(question)
    seen = set()
    hits = 0
    for e in elements:
        e_tok = _norm_tokens(e)
        if not e_tok or e_tok in seen:
            continue
        seen.add(e_tok)
        k = len(e_tok)
        if any(q[i:i + k] == e_tok for i in range(len(q) - k + 1)):
            hits += 1
    return hits


def dehn(questions, element_lists) -> float:
    """Diagram Element Hit Number: mean per-question count of element hits."""
    if len(questions) != len(element_lists):
        raise ValueError(f"{len(questions)} questions but {len(element_lists)} element lists")
    if not questions:
        raise ValueError("DEHN needs at least one question")
    return math.fsum(element_hits(q, e) for q, e in zip(questions, element_lists)) / len(questions)


# -- reports ----------------------------------------------------------------


@dataclass
class EvalPair:
    candidate: str
    references: list
    element_list: list = field(default_factory=list)
    record_id: str = ""

    def __post_init__(self):
        if not self.references:
            raise ValueError(f"record {self.record_id!r}: references must be non-empty")


METRIC_NAMES = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR-lite", "CIDEr-D", "ROUGE-L", "DEHN")


@dataclass
class MetricReport:
    scores: dict
    records: list
    counts: dict
    notes: list = field(default_factory=lambda: [METEOR_NOTE])
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "notes": list(self.notes),
            "counts": dict(self.counts),
            "scores": dict(self.scores),
            "records": list(self.records),
        }

    def to_text(self) -> str:
        lines = [f"# metric report (schema v{self.schema_version})"]
        lines += [f"# {note}" for note in self.notes]
        for k, v in self.counts.items():
            lines.append(f"{k:<20}{v}")
        lines.append("")
        width = max(len(k) for k in self.scores)
        for k, v in self.scores.items():
            lines.append(f"{k:<{width}}  {v:10.4f}")
        return "\n".join(lines) + "\n"


def evaluate_run(pairs, counts=None) -> MetricReport:
    """Score every pair; returns corpus aggregates and a per-record table."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_run needs at least one pair")
    cands = [tokenize_eval(p.candidate) for p in pairs]
    refs = [[tokenize_eval(r) for r in p.references] for p in pairs]

    bleu_scores, bleu_rec = bleu_corpus(cands, refs)
    rouge_rec = [rouge_l(c, rs) for c, rs in zip(cands, refs)]
    meteor_rec = [meteor_lite(c, rs) for c, rs in zip(cands, refs)]
    cider_mean, cider_rec = cider_d(cands, refs)
    hits = [element_hits(p.candidate, p.element_list) for p in pairs]

    scores = {f"BLEU-{k + 1}": float(bleu_scores[k]) for k in range(4)}
    scores["METEOR-lite"] = math.fsum(meteor_rec) / len(pairs)
    scores["CIDEr-D"] = float(cider_mean)
    scores["ROUGE-L"] = math.fsum(rouge_rec) / len(pairs)
    scores["DEHN"] = math.fsum(hits) / len(pairs)

    records = []
    for i, p in enumerate(pairs):
        records.append({
            "id": p.record_id or str(i),
            "candidate": p.candidate,
            **{f"BLEU-{k + 1}": bleu_rec[i][k] for k in range(4)},
            "METEOR-lite": meteor_rec[i],
            "CIDEr-D": cider_rec[i],
            "ROUGE-L": rouge_rec[i],
            "DEHN": hits[i],
        })
    all_counts = {"records": len(pairs)}
    all_counts.update(counts or {})
    return MetricReport(scores=scores, records=records, counts=all_counts)
