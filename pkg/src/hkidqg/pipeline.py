"""End-to-end question generation: patch extraction, knowledge selection, fusion.

``run_pipeline`` executes the three stages for one dataset record and returns a
``RunRecord`` holding every intermediate, so a run can be audited afterwards.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import fusion, knowsel, pyramid
from .backends import RemoteBackendConfig, remote_backend, toy_backends
from .core import ConfigError, Diagram, LinearMap, make_rng

log = logging.getLogger(__name__)

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

ENV_BACKEND_URL = "HKIDQG_BACKEND_URL"
ENV_SEED = "HKIDQG_SEED"


@dataclass
class PipelineConfig:
    n: int = 3
    m: int = 4
    d_k: int = 32
    d_v: int = 32
    backend: str = "toy"
    backend_url: str = ""
    seed: int = 7
    batch_size: int = 32
    grad_accum: int = 4
    epochs: int = 20
    warmup_epochs: int = 2
    lr: float = 5e-5
    encoder_lr: float = 1e-5
    weight_decay: float = 0.01
    dropout: float = 0.1
    init_std: float = 0.02
    workers: int = 1
    timeout: float = 30.0
    max_in_flight: int = 4
    retry: int = 2

    def __post_init__(self):
        if not 1 <= self.n <= pyramid.MAX_LAYERS:
            raise ConfigError(f"n must be in [1, {pyramid.MAX_LAYERS}], got {self.n}")
        if not 0 <= self.m <= knowsel.MAX_M:
            raise ConfigError(f"m must be in [0, {knowsel.MAX_M}], got {self.m}")
        if self.backend not in ("toy", "remote"):
            raise ConfigError(f"backend must be 'toy' or 'remote', got {self.backend!r}")
        if self.backend == "remote" and not self.backend_url:
            raise ConfigError("remote backend needs backend_url")
        for name in ("d_k", "d_v", "batch_size", "grad_accum", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, mapping) -> "PipelineConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(mapping) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values = {}
        for k, v in mapping.items():
            kind = type(known[k].default)
            values[k] = kind(v) if kind in (int, float) and not isinstance(v, bool) else v
        return cls(**values)

    @classmethod
    def load(cls, path=None, overrides=None, environ=None) -> "PipelineConfig":
        """File values (TOML or JSON), then ``HKIDQG_*`` env vars, then overrides."""
        values = {}
        if path:
            text = Path(path).read_text(encoding="utf-8")
            if str(path).endswith(".toml"):
                values.update(_toml.loads(text))
            else:
                values.update(json.loads(text))
        environ = os.environ if environ is None else environ
        if environ.get(ENV_BACKEND_URL):
            values["backend"] = "remote"
            values["backend_url"] = environ[ENV_BACKEND_URL]
        if environ.get(ENV_SEED):
            values["seed"] = int(environ[ENV_SEED])
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)


def make_backends(config: PipelineConfig):
    if config.backend == "toy":
        return toy_backends(config.seed, image_dim=config.d_v, text_dim=config.d_k)
    remote = remote_backend(RemoteBackendConfig(
        base_url=config.backend_url,
        timeout=config.timeout,
        max_in_flight=config.max_in_flight,
        retry=config.retry,
    ))
    meta = remote.image_encoder.client.meta()
    if meta["image_dim"] != config.d_v or meta["text_dim"] != config.d_k:
        raise ConfigError(
            f"service dims (image {meta['image_dim']}, text {meta['text_dim']}) "
            f"differ from config (d_v {config.d_v}, d_k {config.d_k})"
        )
    return remote


def init_params(config: PipelineConfig) -> fusion.FusionParams:
    return fusion.FusionParams.init(config.d_v, config.d_k, make_rng(config.seed), std=config.init_std)


def load_diagram(path, diagram_id=None) -> Diagram:
    with Image.open(path) as im:
        pixels = np.asarray(im.convert("RGB"))
    return Diagram(id=diagram_id or str(path), pixels=pixels)


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunRecord:
    combination_id: str
    target: str
    concept: str
    status: str = "ok"
    failed_stage: str = None
    error: str = None
    selected_patches: list = field(default_factory=list)
    extracted_sentences: list = field(default_factory=list)
    selected_sentences: list = field(default_factory=list)
    knowsel_prompt: str = None
    qg_prompt: str = None
    question: str = None
    timing: dict = field(default_factory=dict)

    def to_json(self, include_timing=False) -> dict:
        d = dataclasses.asdict(self)
        if not include_timing:
            d.pop("timing")
        return d

    @classmethod
    def from_json(cls, d) -> "RunRecord":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class RecordContext:
    """Per-record encodings that do not depend on trainable parameters.

    Holds the pyramid, pooled embeddings of every patch and of the two
    constraints, and caches VLM output per patch. Training reuses one context
    per record across epochs.
    """

    def __init__(self, record, diagram: Diagram, backends, n: int):
        self.record = record
        self.diagram = diagram
        self.backends = backends
        self.pyramid = pyramid.decompose(diagram.height, diagram.width, n)
        self.crops = [pyramid.crop(diagram, ref) for ref in self.pyramid.patches]
        self.patch_embs = np.stack([backends.image_encoder.encode(c) for c in self.crops])
        te = backends.text_encoder
        self.e_t = te.encode_pooled(record.target)
        self.e_c = te.encode_pooled(record.concept)
        self._knowledge = {}

    def select(self, w_h: LinearMap) -> pyramid.SelectedPatches:
        scores = pyramid.score_patches(self.patch_embs, w_h, self.e_t, self.e_c)
        return pyramid.select_patches(self.pyramid, scores)

    def selected_embeddings(self, selected: pyramid.SelectedPatches) -> np.ndarray:
        index = {ref: k for k, ref in enumerate(self.pyramid.patches)}
        return self.patch_embs[[index[ref] for ref in selected.refs]]

    def knowledge(self, selected: pyramid.SelectedPatches) -> dict:
        index = {ref: k for k, ref in enumerate(self.pyramid.patches)}
        out = {}
        for ref in selected.refs:
            k = index[ref]
            if k not in self._knowledge:
                self._knowledge[k] = self.backends.vlm.extract(
                    self.crops[k], self.record.target, self.record.concept
                )
            out[ref.layer] = self._knowledge[k]
        return out


@dataclass
class StageOutputs:
    selected: pyramid.SelectedPatches
    knowledge: knowsel.KnowledgeSet
    chosen: knowsel.SelectedKnowledge
    knowsel_prompt: str
    qg_prompt: str
    patch_embs: np.ndarray
    h_t: np.ndarray


def run_stages(ctx: RecordContext, params: fusion.FusionParams, m: int, timing=None) -> StageOutputs:
    """Patch selection, knowledge extraction and selection, prompt encoding."""
    timing = {} if timing is None else timing
    rec = ctx.record
    te = ctx.backends.text_encoder

    t0 = time.perf_counter()
    selected = ctx.select(params.W_h)
    layer_sentences = ctx.knowledge(selected)
    timing["hier_know_extract"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ks = knowsel.KnowledgeSet.from_layers(layer_sentences, te)
    chosen, ks_prompt, _ = knowsel.select_knowledge(ks, rec.target, rec.concept, te, m)
    timing["know_select"] = time.perf_counter() - t0

    qg_prompt = fusion.build_qg_prompt(rec.target, rec.concept, chosen)
    h_t = te.encode_tokens(qg_prompt)
    return StageOutputs(
        selected=selected,
        knowledge=ks,
        chosen=chosen,
        knowsel_prompt=ks_prompt,
        qg_prompt=qg_prompt,
        patch_embs=ctx.selected_embeddings(selected),
        h_t=h_t,
    )


def run_pipeline(record, config: PipelineConfig, backends, params: fusion.FusionParams,
                 diagram: Diagram = None, base_dir=".") -> RunRecord:
    """Generate one question. Failures are captured in the returned record with
    the stage that raised; they never propagate."""
    run = RunRecord(combination_id=record.combination_id, target=record.target, concept=record.concept)
    stage = "load"
    try:
        t0 = time.perf_counter()
        if diagram is None:
            diagram = load_diagram(Path(base_dir) / record.diagram_path, record.diagram_path)
        run.timing["load"] = time.perf_counter() - t0

        stage = "encode"
        t0 = time.perf_counter()
        ctx = RecordContext(record, diagram, backends, config.n)
        run.timing["encode"] = time.perf_counter() - t0

        stage = "select"
        out = run_stages(ctx, params, config.m, run.timing)
        run.selected_patches = [
            {**ref.to_dict(), "score": score} for ref, score in out.selected.entries
        ]
        run.extracted_sentences = [{"layer": l, "text": s} for l, s in out.knowledge.sentences]
        run.selected_sentences = [{"text": t, "score": s} for t, s in out.chosen.items]
        run.knowsel_prompt = out.knowsel_prompt
        run.qg_prompt = out.qg_prompt

        stage = "fusion"
        t0 = time.perf_counter()
        trace = fusion.forward(params, out.patch_embs, out.h_t)
        run.timing["fusion"] = time.perf_counter() - t0

        stage = "decode"
        t0 = time.perf_counter()
        run.question = backends.decoder.decode(trace.H_fuse, record.target)
        run.timing["decode"] = time.perf_counter() - t0
    except Exception as exc:  # noqa: BLE001 - recorded per record, run continues
        log.warning("record %s failed at %s: %s", record.combination_id, stage, exc)
        run.status = "failed"
        run.failed_stage = stage
        run.error = f"{type(exc).__name__}: {exc}"
    return run


def generate(records, config: PipelineConfig, backends, params, base_dir=".", diagrams=None) -> list:
    """Run every record; output is ordered by combination_id regardless of workers."""
    diagrams = diagrams or {}

    def one(rec):
        return run_pipeline(rec, config, backends, params, diagrams.get(rec.diagram_path), base_dir)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            runs = list(pool.map(one, records))
    else:
        runs = [one(r) for r in records]
    return sorted(runs, key=lambda r: r.combination_id)
