"""Desk-scale training of the fusion projections against a surrogate objective.

The trainable parameters are ``W_h``, ``W_t`` and ``W_v``; encoders, VLM and
decoder stay frozen. The objective pulls the mean-pooled fused representation
toward the pooled text embedding of the ground-truth question. Patch and
knowledge selection are re-run with the current ``W_h`` every epoch; gradients
flow through the selected patches' projections only (selection is an argmax).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fusion
from .core import ConfigError, make_rng
from .optim import OptimizerState, adamw_step, lr_schedule
from .pipeline import PipelineConfig, RecordContext, init_params, load_diagram, run_stages

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    params: fusion.FusionParams
    state: OptimizerState
    losses: list                 # mean surrogate loss before training and after each epoch
    lrs: list = field(default_factory=list)
    failed: list = field(default_factory=list)


def _record_loss(ctx, params, m, target_vec, dropout=0.0, rng=None):
    out = run_stages(ctx, params, m)
    trace = fusion.forward(params, out.patch_embs, out.h_t, dropout=dropout, rng=rng)
    loss, d_fuse = fusion.surrogate_loss(trace, target_vec)
    return loss, trace, d_fuse


def mean_loss(contexts, targets, params, m) -> float:
    return math.fsum(
        _record_loss(ctx, params, m, y)[0] for ctx, y in zip(contexts, targets)
    ) / len(contexts)


def toy_train(records, backends, config: PipelineConfig, params=None, base_dir=".", diagrams=None) -> TrainResult:
    """Train the fusion projections with AdamW and the warmup/cosine schedule.

    Gradients are averaged over ``batch_size * grad_accum`` records per update;
    a partial accumulation window is flushed at the end of each epoch.
    Everything (record order, dropout masks, init) derives from ``config.seed``.
    """
    records = list(records)
    if not records:
        raise ConfigError("toy_train needs at least one record")
    diagrams = diagrams or {}
    params = init_params(config) if params is None else params.copy()
    rng = make_rng(config.seed + 1)

    contexts, targets, failed = [], [], []
    for rec in records:
        try:
            diagram = diagrams.get(rec.diagram_path) or load_diagram(Path(base_dir) / rec.diagram_path, rec.diagram_path)
            contexts.append(RecordContext(rec, diagram, backends, config.n))
            targets.append(backends.text_encoder.encode_pooled(rec.question))
        except Exception as exc:  # noqa: BLE001
            log.warning("skipping %s in training: %s", rec.combination_id, exc)
            failed.append(rec.combination_id)
    if not contexts:
        raise ConfigError("no trainable records (all failed to load)")

    state = OptimizerState(
        groups={"default": config.lr, "encoder": config.encoder_lr},
        weight_decay=config.weight_decay,
    )
    batches_per_epoch = math.ceil(len(contexts) / config.batch_size)
    steps_per_epoch = math.ceil(batches_per_epoch / config.grad_accum)
    losses = [mean_loss(contexts, targets, params, config.m)]
    lrs = []
    arrays = params.arrays()

    for epoch in range(config.epochs):
        order = rng.permutation(len(contexts))
        acc = {k: np.zeros_like(v) for k, v in arrays.items()}
        seen = 0
        for b in range(batches_per_epoch):
            for idx in order[b * config.batch_size:(b + 1) * config.batch_size]:
                _, trace, d_fuse = _record_loss(
                    contexts[idx], params, config.m, targets[idx], config.dropout, rng
                )
                grads = fusion.fusion_backward(trace, d_fuse, params)
                for k in acc:
                    acc[k] += grads[k]
                seen += 1
            if (b + 1) % config.grad_accum == 0 or b + 1 == batches_per_epoch:
                scale = lr_schedule(
                    state.step + 1, steps_per_epoch, 1.0, config.warmup_epochs, config.epochs
                )
                lrs.append(scale * config.lr)
                adamw_step(arrays, {k: v / seen for k, v in acc.items()}, state, lr_scale=scale)
                acc = {k: np.zeros_like(v) for k, v in arrays.items()}
                seen = 0
        losses.append(mean_loss(contexts, targets, params, config.m))
        log.info("epoch %d/%d loss %.6f", epoch + 1, config.epochs, losses[-1])
    return TrainResult(params=params, state=state, losses=losses, lrs=lrs, failed=failed)
