"""Command-line interface: ``hkidqg <command> ...``.

Exit codes: 0 success, 1 partial failure (some records failed or invalid),
2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import dataset, gradcheck
from .core import LinearMap
from .fusion import FusionParams
from .metrics import EvalPair, evaluate_run
from .optim import _atomic_write_text, load_checkpoint, save_checkpoint
from .pipeline import PipelineConfig, RunRecord, generate, init_params, make_backends
from .training import toy_train

log = logging.getLogger("hkidqg")

# demo training runs at toy scale; the library defaults keep the published rates
DEMO_OVERRIDES = {"lr": 3e-2, "batch_size": 8, "grad_accum": 1}


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _write_jsonl(path, rows):
    buf = io.StringIO()
    for row in rows:
        buf.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    _atomic_write_text(path, buf.getvalue())


def _config_from_args(args, extra=None) -> PipelineConfig:
    overrides = {"seed": getattr(args, "seed", None), "n": getattr(args, "n", None), "m": getattr(args, "m", None),
                 "epochs": getattr(args, "epochs", None)}
    overrides.update(extra or {})
    return PipelineConfig.load(getattr(args, "config", None), overrides)


def _load_records(path, strict=False):
    records, report = dataset.load(path, strict=strict)
    for err in report.errors:
        log.warning("%s:%d: %s", path, err["line"], err["reason"])
    return records, report


def _params_from_checkpoint(path, config) -> FusionParams:
    arrays, _, _, _ = load_checkpoint(path)
    params = FusionParams(*(LinearMap(k, arrays[k]) for k in ("W_h", "W_t", "W_v")))
    if params.d_v != config.d_v or params.d_k != config.d_k:
        raise ValueError(f"checkpoint dims ({params.d_v}, {params.d_k}) differ from config ({config.d_v}, {config.d_k})")
    return params


def read_runs(path):
    """Returns ``(header, [RunRecord])`` from a runs.jsonl file."""
    header, runs = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "header" in obj:
                header = obj["header"]
            else:
                runs.append(RunRecord.from_json(obj))
    return header, runs


def write_runs(path, runs, config):
    header = {"header": {"config": config.to_dict(), "seed": config.seed}}
    _write_jsonl(path, [header] + [r.to_json() for r in runs])
    timing = Path(str(path) + ".timing.jsonl")
    _write_jsonl(timing, [{"combination_id": r.combination_id, "timing": r.timing} for r in runs])


# -- commands ---------------------------------------------------------------


def cmd_ingest(args):
    _, report = _load_records(args.jsonl, strict=args.strict)
    sys.stdout.write(_dumps(report.to_dict()))
    return 1 if args.strict and not report.ok else 0


def cmd_stats(args):
    records, _ = _load_records(args.jsonl)
    assignment = dataset.split(records, args.seed) if args.with_split else None
    s = dataset.stats(records, assignment)
    sys.stdout.write(s.to_text())
    if args.out:
        _atomic_write_text(args.out, _dumps(s.to_dict()))
    return 0


def cmd_split(args):
    records, _ = _load_records(args.jsonl)
    manifest = None
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    assignment = dataset.split(records, args.seed, manifest=manifest)
    doc = {"seed": args.seed, "assignment": assignment}
    counts = defaultdict(set)
    for rec in records:
        counts[assignment[rec.combination_id]].add(rec.diagram_path)
    doc["diagrams"] = {k: len(v) for k, v in sorted(counts.items())}
    text = _dumps(doc)
    if args.out:
        _atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_generate(args):
    config = _config_from_args(args)
    records, report = _load_records(args.jsonl)
    backends = make_backends(config)
    params = _params_from_checkpoint(args.checkpoint, config) if args.checkpoint else init_params(config)
    runs = generate(records, config, backends, params, base_dir=Path(args.jsonl).parent)
    write_runs(args.out, runs, config)
    failed = [r for r in runs if r.status != "ok"]
    for r in failed:
        print(f"failed {r.combination_id} at {r.failed_stage}: {r.error}", file=sys.stderr)
    print(f"generated {len(runs) - len(failed)}/{len(runs)} records -> {args.out}")
    return 1 if failed or report.errors else 0


def _write_loss_csv(path, losses):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for epoch, loss in enumerate(losses):
        w.writerow([epoch, repr(loss)])
    _atomic_write_text(path, buf.getvalue())


def _train(records, config, backends, checkpoint, loss_csv, base_dir=".", diagrams=None):
    result = toy_train(records, backends, config, base_dir=base_dir, diagrams=diagrams)
    save_checkpoint(checkpoint, result.params.arrays(), result.state, config.seed,
                    extra={"config": config.to_dict(), "losses": result.losses})
    _write_loss_csv(loss_csv, result.losses)
    return result


def cmd_train(args):
    config = _config_from_args(args)
    records, report = _load_records(args.jsonl)
    loss_csv = args.loss_csv or str(Path(args.checkpoint).with_suffix(".loss.csv"))
    result = _train(records, config, make_backends(config), args.checkpoint, loss_csv,
                    base_dir=Path(args.jsonl).parent)
    print(f"loss {result.losses[0]:.6g} -> {result.losses[-1]:.6g} over {config.epochs} epochs")
    return 1 if result.failed or report.errors else 0


def evaluate_runs(runs, records, header=None):
    """Join runs with the dataset and score them. Failed or missing records
    are scored as empty questions and counted in ``coverage``."""
    refs = defaultdict(list)
    for r in records:
        refs[(r.diagram_path, r.target, r.concept)].append(r.question)
    by_id = {r.combination_id: r for r in runs}
    pairs = []
    generated = 0
    for rec in sorted(records, key=lambda r: r.combination_id):
        run = by_id.get(rec.combination_id)
        ok = run is not None and run.status == "ok"
        generated += ok
        pairs.append(EvalPair(
            candidate=run.question if ok else "",
            references=refs[(rec.diagram_path, rec.target, rec.concept)],
            element_list=rec.element_list,
            record_id=rec.combination_id,
        ))
    report = evaluate_run(pairs, counts={
        "generated": generated,
        "total": len(records),
        "coverage": generated / len(records),
    })
    out = report.to_dict()
    if header:
        out["config"] = header.get("config")
        out["seed"] = header.get("seed")
    return report, out


def cmd_evaluate(args):
    header, runs = read_runs(args.runs)
    records, _ = _load_records(args.data)
    report, doc = evaluate_runs(runs, records, header)
    _atomic_write_text(args.out, _dumps(doc))
    sys.stdout.write(report.to_text())
    return 0 if report.counts["generated"] == report.counts["total"] else 1


def cmd_gradcheck(args):
    rows = gradcheck.run_checks(seed=args.seed, trials=args.trials)
    names = ("W_h", "W_t", "W_v", "H_t")
    print(f"{'#':>3} {'T':>2} {'n':>2} {'d_k':>3} " + " ".join(f"{n:>10}" for n in names) + "  result")
    failures = 0
    for i, (shape, errors) in enumerate(rows):
        ok = all(e <= gradcheck.REL_TOL for e in errors.values())
        failures += not ok
        print(f"{i:>3} {shape['T']:>2} {shape['n']:>2} {shape['d_k']:>3} "
              + " ".join(f"{errors[n]:10.2e}" for n in names) + ("  pass" if ok else "  FAIL"))
    print(f"{len(rows) - failures}/{len(rows)} instances within relative error {gradcheck.REL_TOL:g}")
    return 1 if failures else 0


def run_demo(out_dir, seed=7, n_records=64):
    """Synthetic corpus -> train -> generate -> evaluate, all under ``out_dir``."""
    from .synthetic import make_corpus, write_corpus

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, diagrams = make_corpus(n_records, seed=seed)
    data_path = write_corpus(records, diagrams, out_dir)
    records, _ = dataset.load(data_path, strict=True)
    config = PipelineConfig(seed=seed, **DEMO_OVERRIDES)
    backends = make_backends(config)

    s = dataset.stats(records, dataset.split(records, seed))
    _atomic_write_text(out_dir / "stats.json", _dumps(s.to_dict()))
    result = _train(records, config, backends, out_dir / "model.ckpt", out_dir / "loss.csv", base_dir=out_dir)
    runs = generate(records, config, backends, result.params, base_dir=out_dir)
    write_runs(out_dir / "runs.jsonl", runs, config)
    header, runs = read_runs(out_dir / "runs.jsonl")
    report, doc = evaluate_runs(runs, records, header)
    _atomic_write_text(out_dir / "report.json", _dumps(doc))
    return report, result


def cmd_demo(args):
    t0 = time.perf_counter()
    report, result = run_demo(args.out_dir, seed=args.seed)
    sys.stdout.write(report.to_text())
    print(f"surrogate loss {result.losses[0]:.6g} -> {result.losses[-1]:.6g}")
    print(f"demo finished in {time.perf_counter() - t0:.1f} s; outputs in {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hkidqg", description="Diagram question generation pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def pipeline_opts(sp):
        sp.add_argument("--config", help="TOML or JSON file of PipelineConfig keys")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--n", type=int, help="pyramid layers")
        sp.add_argument("--m", type=int, help="knowledge sentences kept")
        sp.add_argument("--epochs", type=int)

    sp = sub.add_parser("ingest", help="validate a JSONL corpus")
    sp.add_argument("jsonl")
    sp.add_argument("--strict", action="store_true")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("stats", help="corpus statistics")
    sp.add_argument("jsonl")
    sp.add_argument("--out", help="also write JSON here")
    sp.add_argument("--with-split", action="store_true", help="add per-split rows")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("split", help="diagram-keyed train/val/test manifest")
    sp.add_argument("jsonl")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--manifest", help="JSON {diagram_path: split} overriding hashing")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("generate", help="run the pipeline on every record")
    sp.add_argument("jsonl")
    pipeline_opts(sp)
    sp.add_argument("--checkpoint", help="trained parameters to use")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="toy-scale training of the fusion projections")
    sp.add_argument("jsonl")
    pipeline_opts(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--loss-csv")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score generated questions")
    sp.add_argument("--runs", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("gradcheck", help="finite-difference check of fusion gradients")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=50)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("demo", help="self-contained synthetic end-to-end run")
    sp.add_argument("--out-dir", default="demo_out")
    sp.add_argument("--seed", type=int, default=7)
    sp.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
