"""AdamW with decoupled weight decay, warmup + cosine schedule, checkpoints."""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_FORMAT = "hkidqg-checkpoint"
CHECKPOINT_VERSION = 1


def lr_schedule(step, steps_per_epoch, base_lr, warmup_epochs=2, total_epochs=20) -> float:
    """Linear warmup from 0 to ``base_lr``, then cosine decay to 0.

    ``step`` counts optimizer updates. Steps past the horizon clamp to the final
    value (0).
    """
    if steps_per_epoch <= 0:
        raise ValueError("steps_per_epoch must be positive")
    warmup = warmup_epochs * steps_per_epoch
    total = total_epochs * steps_per_epoch
    step = max(0, step)
    if step < warmup:
        return base_lr * step / warmup
    if total <= warmup:
        return base_lr
    progress = (min(step, total) - warmup) / (total - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    """Moments and hyperparameters for AdamW.

    ``groups`` maps a learning-rate group name to its base rate; ``param_group``
    assigns each parameter to a group. Only projection parameters exist here,
    so the encoder group (1e-5) stays empty unless a trainable encoder is added.
    """

    groups: dict = field(default_factory=lambda: {"default": 5e-5, "encoder": 1e-5})
    param_group: dict = field(default_factory=dict)
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    rejected: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def base_lr(self, name: str) -> float:
        return self.groups[self.param_group.get(name, "default")]


def adamw_step(params: dict, grads: dict, state: OptimizerState, lr_scale: float = 1.0) -> bool:
    """One in-place AdamW update of the arrays in ``params``.

    The effective rate of each parameter is its group base rate times
    ``lr_scale`` (the schedule multiplier). Returns False and leaves everything
    untouched if any gradient is non-finite.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"{name}: gradient shape {np.shape(g)} != parameter shape {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            state.rejected += 1
            return False

    b1, b2 = state.betas
    state.step += 1
    t = state.step
    for name, g in grads.items():
        p = params[name]
        g = np.asarray(g, dtype=np.float64)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        lr = state.base_lr(name) * lr_scale
        p *= 1.0 - lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return True


def _atomic_write_text(path, text: str):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, params: dict, state: OptimizerState, seed: int, extra=None):
    """JSON checkpoint; floats are written with full round-trip precision."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "step": state.step,
        "rejected": state.rejected,
        "groups": state.groups,
        "param_group": state.param_group,
        "betas": list(state.betas),
        "eps": state.eps,
        "weight_decay": state.weight_decay,
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in params.items()},
        "m": {k: v.ravel().tolist() for k, v in state.m.items()},
        "v": {k: v.ravel().tolist() for k, v in state.v.items()},
        "extra": extra or {},
    }
    _atomic_write_text(path, json.dumps(doc))


def load_checkpoint(path):
    """Returns ``(params, state, seed, extra)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {
        k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()
    }
    state = OptimizerState(
        groups=doc["groups"],
        param_group=doc["param_group"],
        betas=tuple(doc["betas"]),
        eps=doc["eps"],
        weight_decay=doc["weight_decay"],
        step=doc["step"],
        rejected=doc["rejected"],
        m={k: np.asarray(v, dtype=np.float64).reshape(params[k].shape) for k, v in doc["m"].items()},
        v={k: np.asarray(v, dtype=np.float64).reshape(params[k].shape) for k, v in doc["v"].items()},
    )
    return params, state, doc["seed"], doc["extra"]
