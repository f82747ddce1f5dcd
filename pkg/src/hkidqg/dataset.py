"""DiagramQG-format JSONL ingestion, diagram-keyed splitting and corpus statistics.

One JSON object per line::

    {"schema_version": 1, "combination_id": "...", "diagram_path": "img/0001.png",
     "subject": "...", "course": "...", "concept": "...", "target": "...",
     "question": "...", "element_list": ["...", ...]}

``diagram_path`` is relative to the JSONL file's directory.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .metrics import tokenize_eval

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
REQUIRED_FIELDS = ("combination_id", "diagram_path", "subject", "course", "concept", "target", "question")
QUESTION_WORDS = (4, 50)
SPLIT_FRACTIONS = {"train": 0.7, "val": 0.1, "test": 0.2}

# published release totals (statistics table) and the variant quoted in the prose
RELEASE_TOTALS = {"diagrams": 8372, "questions": 19475, "combinations": 44472, "concepts": 169}
RELEASE_PROSE_TOTALS = {"diagrams": 8372, "questions": 19077, "combinations": 44074, "concepts": 169}
RELEASE_SPLIT_DIAGRAMS = {"train": 5610, "val": 922, "test": 1839}


class FormatError(ValueError):
    pass


@dataclass
class DatasetRecord:
    combination_id: str
    diagram_path: str
    subject: str
    course: str
    concept: str
    target: str
    question: str
    element_list: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}


@dataclass
class ValidationReport:
    path: str
    lines: int = 0
    accepted: int = 0
    errors: list = field(default_factory=list)    # [{"line": n, "reason": "..."}]
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "lines": self.lines,
            "accepted": self.accepted,
            "rejected": len(self.errors),
            "errors": self.errors,
            "warnings": self.warnings,
        }


def _parse_record(obj, schema_version):
    if not isinstance(obj, dict):
        return None, "line is not a JSON object"
    version = obj.get("schema_version", schema_version)
    if version != schema_version:
        raise FormatError(f"schema_version {version!r} does not match expected {schema_version}")
    for name in REQUIRED_FIELDS:
        if name not in obj:
            return None, f"missing field: {name}"
        if not isinstance(obj[name], str) or not obj[name].strip():
            return None, f"empty or non-string field: {name}"
    elements = obj.get("element_list", [])
    if not isinstance(elements, list) or not all(isinstance(e, str) for e in elements):
        return None, "element_list must be a list of strings"
    return DatasetRecord(element_list=list(elements), **{k: obj[k] for k in REQUIRED_FIELDS}), None


def load(path, schema_version=SCHEMA_VERSION, strict=False, check_files=True):
    """Read a JSONL file. Returns ``(records, ValidationReport)``.

    Invalid lines are reported with their line number and skipped; with
    ``strict=True`` any invalid line makes the whole load return no records.
    Missing diagram files and out-of-range question lengths are warnings.
    """
    path = Path(path)
    report = ValidationReport(path=str(path))
    records = []
    base = path.parent
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            report.lines += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                report.errors.append({"line": lineno, "reason": f"invalid JSON: {exc.msg}"})
                continue
            rec, reason = _parse_record(obj, schema_version)
            if rec is None:
                report.errors.append({"line": lineno, "reason": reason})
                continue
            words = len(tokenize_eval(rec.question))
            if not QUESTION_WORDS[0] <= words <= QUESTION_WORDS[1]:
                report.warnings.append({"line": lineno, "reason": f"question has {words} words"})
            if check_files and not (base / rec.diagram_path).is_file():
                report.warnings.append({"line": lineno, "reason": f"diagram not found: {rec.diagram_path}"})
            records.append(rec)
    if strict and report.errors:
        records = []
    report.accepted = len(records)
    return records, report


def save(records, path):
    """Write records as JSONL (write-then-rename)."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
    os.replace(tmp, path)


def _rank_key(seed, diagram) -> bytes:
    return hashlib.sha256(f"{seed}:{diagram}".encode("utf-8")).digest()


def split(records, seed=0, manifest=None) -> dict:
    """Assign each combination to train/val/test by diagram.

    Diagrams are grouped by subject (the first subject seen for a diagram),
    ordered by a seeded hash within each group, and cut 70/10/20. All records
    of a diagram share its split. ``manifest`` maps diagram paths to a split
    and overrides hashing for the diagrams it lists.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot split an empty corpus")
    subject_of = {}
    for r in records:
        subject_of.setdefault(r.diagram_path, r.subject)
    by_subject = defaultdict(list)
    for diagram, subject in subject_of.items():
        if manifest is None or diagram not in manifest:
            by_subject[subject].append(diagram)
    assignment = dict(manifest or {})
    for subject in sorted(by_subject):
        diagrams = sorted(by_subject[subject], key=lambda d: _rank_key(seed, d))
        k = len(diagrams)
        n_train = round(SPLIT_FRACTIONS["train"] * k)
        n_val = round(SPLIT_FRACTIONS["val"] * k)
        for idx, d in enumerate(diagrams):
            assignment[d] = "train" if idx < n_train else "val" if idx < n_train + n_val else "test"
    return {r.combination_id: assignment[r.diagram_path] for r in records}


@dataclass
class CorpusStats:
    diagrams: int
    questions: int
    combinations: int
    subjects: int
    courses: int
    concepts: int
    mean_question_words: float
    concept_questions: list     # [(concept, unique questions)], descending
    concept_diagrams: list      # [(concept, unique diagrams)], descending
    concept_combinations: list  # [(concept, combinations)], descending
    splits: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        rows = [
            ("Total unique diagrams", self.diagrams),
            ("Total unique questions", self.questions),
            ("Total combinations", self.combinations),
            ("Total Subject", self.subjects),
            ("Total Course", self.courses),
            ("Total Concept", self.concepts),
        ]
        for name in ("train", "val", "test"):
            s = self.splits.get(name)
            if s:
                label = name.capitalize()
                rows += [
                    (f"{label} unique diagrams", s["diagrams"]),
                    (f"{label} unique questions", s["questions"]),
                    (f"{label} combinations", s["combinations"]),
                ]
        width = max(len(r[0]) for r in rows)
        lines = [f"{name:<{width}}  {value:>8,}" for name, value in rows]
        lines.append(f"{'Mean question length':<{width}}  {self.mean_question_words:>8.2f}")
        lines.append("")
        lines.append("Top concepts by combinations:")
        for concept, count in self.concept_combinations[:10]:
            lines.append(f"  {count:>6}  {concept}")
        lines += [f"NOTE: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def _sorted_counts(counter) -> list:
    return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))


def _totals(records):
    return {
        "diagrams": len({r.diagram_path for r in records}),
        "questions": len({r.question for r in records}),
        "combinations": len(records),
    }


def stats(records, assignment=None) -> CorpusStats:
    """Exact corpus counts; ``assignment`` (from ``split``) adds per-split rows."""
    records = list(records)
    if not records:
        raise ValueError("stats of an empty corpus")
    totals = _totals(records)
    q_by_concept = defaultdict(set)
    d_by_concept = defaultdict(set)
    c_by_concept = Counter()
    for r in records:
        q_by_concept[r.concept].add(r.question)
        d_by_concept[r.concept].add(r.diagram_path)
        c_by_concept[r.concept] += 1
    unique_q = sorted({r.question for r in records})
    mean_words = math.fsum(len(tokenize_eval(q)) for q in unique_q) / len(unique_q)

    splits = {}
    if assignment is not None:
        for name in ("train", "val", "test"):
            part = [r for r in records if assignment[r.combination_id] == name]
            if part:
                splits[name] = _totals(part)

    result = CorpusStats(
        **totals,
        subjects=len({r.subject for r in records}),
        courses=len({r.course for r in records}),
        concepts=len(c_by_concept),
        mean_question_words=mean_words,
        concept_questions=_sorted_counts({k: len(v) for k, v in q_by_concept.items()}),
        concept_diagrams=_sorted_counts({k: len(v) for k, v in d_by_concept.items()}),
        concept_combinations=_sorted_counts(c_by_concept),
        splits=splits,
    )
    result.notes = release_notes(result)
    return result


def release_notes(s: CorpusStats) -> list:
    """Flag when the corpus looks like the published release but its totals
    match the prose figures (19,077 / 44,074) rather than the table figures."""
    got = {"diagrams": s.diagrams, "questions": s.questions, "combinations": s.combinations, "concepts": s.concepts}
    if got == RELEASE_PROSE_TOTALS:
        return [
            "totals match the prose variant (19,077 questions / 44,074 combinations), "
            "not the statistics table (19,475 / 44,472); documented discrepancy in the release"
        ]
    return []
