"""
End to end on the synthetic corpus
==================================

Builds the 64-record synthetic corpus, trains the fusion projections for 20
epochs with the toy backends, generates a question per record and scores the
run. The same thing is available as ``hkidqg demo``.
"""
import sys
import tempfile
from pathlib import Path

from hkidqg.cli import read_runs, run_demo

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="hkidqg-demo-"))
report, result = run_demo(out, seed=7)

print("loss per epoch:", " ".join(f"{x:.5f}" for x in result.losses[::4]))
_, runs = read_runs(out / "runs.jsonl")
for run in runs[:3]:
    print(f"{run.combination_id}  target={run.target!r}  ->  {run.question}")
print(report.to_text())
print("outputs written to", out)
