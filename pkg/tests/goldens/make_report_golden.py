"""Freeze the evaluate_run report for the 20-pair fixture.

Run once after the metric values were checked against the toolkit goldens;
the test then compares the report bit-for-bit.
"""
import json
from pathlib import Path

from hkidqg.metrics import EvalPair, evaluate_run

HERE = Path(__file__).parent
ELEMENTS = ["heart", "valve", "aorta", "sea star", "root", "sun"]


def fixture_pairs():
    pairs = json.loads((HERE / "metric_pairs.json").read_text())
    return [EvalPair(p["candidate"], p["references"], ELEMENTS, p["id"]) for p in pairs]


if __name__ == "__main__":
    report = evaluate_run(fixture_pairs()).to_dict()
    (HERE / "report_golden.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
