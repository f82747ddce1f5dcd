"""Cross-modal attention and gated fusion with hand-written gradients.

Forward pass for one record::

    H_v    = F @ W_h                              (n, d_k)
    P      = softmax_rows(H_t @ H_v.T / sqrt(d_k))  (T, n)
    H_attn = P @ H_v                              (T, d_k)
    lam    = H_t @ W_t + H_attn @ W_v             (T, d_k)
    H_fuse = H_t + tanh(lam) * H_attn             (T, d_k)

``F`` holds the pooled image embeddings of the selected patches, one per
pyramid layer, and ``H_t`` the token embeddings of the generation prompt.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, LinearMap, ShapeError, as_matrix, gaussian_init, matmul, softmax_axis

PARAM_NAMES = ("W_h", "W_t", "W_v")


def build_qg_prompt(target: str, concept: str, knowledge) -> str:
    """Generation prompt; ``knowledge`` is a list of sentences in selection order."""
    if not target.strip() or not concept.strip():
        raise ConfigError("target and concept must be non-empty")
    texts = getattr(knowledge, "texts", knowledge)
    joined = " ".join(texts)
    return (
        f"Generate the question including Target: {target} to assess Concept: {concept} "
        f"with the knowledge: {joined}"
    )


@dataclass
class FusionParams:
    W_h: LinearMap
    W_t: LinearMap
    W_v: LinearMap

    def __post_init__(self):
        d_k = self.W_h.out_dim
        for lm in (self.W_t, self.W_v):
            if lm.weights.shape != (d_k, d_k):
                raise ShapeError(f"{lm.name} must be ({d_k}, {d_k}), got {lm.weights.shape}")

    @classmethod
    def init(cls, d_v: int, d_k: int, rng, std: float = 0.02) -> "FusionParams":
        return cls(
            W_h=LinearMap("W_h", gaussian_init((d_v, d_k), rng, std=std)),
            W_t=LinearMap("W_t", gaussian_init((d_k, d_k), rng, std=std)),
            W_v=LinearMap("W_v", gaussian_init((d_k, d_k), rng, std=std)),
        )

    @property
    def d_v(self) -> int:
        return self.W_h.in_dim

    @property
    def d_k(self) -> int:
        return self.W_h.out_dim

    def arrays(self) -> dict:
        return {name: getattr(self, name).weights for name in PARAM_NAMES}

    def copy(self) -> "FusionParams":
        return FusionParams(*(LinearMap(n, getattr(self, n).weights.copy()) for n in PARAM_NAMES))


def project_visual(patch_embs, w_h: LinearMap) -> np.ndarray:
    f = as_matrix(patch_embs, "patch embeddings")
    if f.shape[1] != w_h.in_dim:
        raise ShapeError(f"patch embeddings have width {f.shape[1]}, W_h expects {w_h.in_dim}")
    return matmul(f, w_h.weights)


def attention_weights(h_t, h_v) -> np.ndarray:
    """Row-stochastic ``(T, n)`` weights of text tokens over visual rows."""
    h_t = np.asarray(h_t, dtype=np.float64)
    h_v = np.asarray(h_v, dtype=np.float64)
    if h_t.ndim != 2 or h_v.ndim != 2 or h_t.shape[1] != h_v.shape[1]:
        raise ShapeError(f"text {h_t.shape} and visual {h_v.shape} widths differ")
    if h_t.shape[0] < 1 or h_v.shape[0] < 1:
        raise ShapeError("cross-modal attention needs at least one text and one visual row")
    return softmax_axis(matmul(h_t, h_v.T) / np.sqrt(h_t.shape[1]), axis="rows")


def cross_modal_attention(h_t, h_v) -> np.ndarray:
    return matmul(attention_weights(h_t, h_v), np.asarray(h_v, dtype=np.float64))


@dataclass
class FusionTrace:
    """Intermediates of one forward pass, kept for the backward pass."""

    F: np.ndarray
    H_t: np.ndarray
    H_v: np.ndarray
    P: np.ndarray
    H_v_attn: np.ndarray
    lam: np.ndarray
    gate: np.ndarray
    H_fuse: np.ndarray
    # dropout keep-masks already divided by the keep probability; None at inference
    mask_t: np.ndarray = None
    mask_v: np.ndarray = None
    weights: dict = field(default=None, repr=False)


def gated_fusion(h_t, h_v_attn, w_t: LinearMap, w_v: LinearMap):
    """``H_t + tanh(H_t W_t + H_attn W_v) * H_attn``; returns ``(H_fuse, trace)``.

    The returned trace only carries the gating intermediates; use ``forward`` for a
    trace that supports ``fusion_backward``.
    """
    h_t = np.asarray(h_t, dtype=np.float64)
    h_v_attn = np.asarray(h_v_attn, dtype=np.float64)
    if h_t.shape != h_v_attn.shape:
        raise ShapeError(f"H_t {h_t.shape} and H_v_attn {h_v_attn.shape} differ")
    d_k = h_t.shape[1]
    for lm in (w_t, w_v):
        if lm.weights.shape != (d_k, d_k):
            raise ShapeError(f"{lm.name} must be ({d_k}, {d_k}), got {lm.weights.shape}")
    lam = matmul(h_t, w_t.weights) + matmul(h_v_attn, w_v.weights)
    gate = np.tanh(lam)
    h_fuse = h_t + gate * h_v_attn
    trace = FusionTrace(
        F=None, H_t=h_t, H_v=None, P=None, H_v_attn=h_v_attn, lam=lam, gate=gate, H_fuse=h_fuse
    )
    return h_fuse, trace


def forward(params: FusionParams, patch_embs, h_t, dropout: float = 0.0, rng=None) -> FusionTrace:
    """Full projection, attention and gating pass.

    With ``dropout > 0`` (training only) rows of ``H_t`` and ``H_v_attn`` entering
    the gate are zeroed with that probability using ``rng``.
    """
    f = as_matrix(patch_embs, "patch embeddings")
    h_t = as_matrix(h_t, "H_t")
    h_v = project_visual(f, params.W_h)
    p = attention_weights(h_t, h_v)
    h_attn = matmul(p, h_v)
    mask_t = mask_v = None
    t_in, a_in = h_t, h_attn
    if dropout > 0.0:
        if rng is None:
            raise ValueError("dropout needs an rng")
        keep = 1.0 - dropout
        mask_t = (rng.random((h_t.shape[0], 1)) < keep) / keep
        mask_v = (rng.random((h_attn.shape[0], 1)) < keep) / keep
        t_in, a_in = h_t * mask_t, h_attn * mask_v
    h_fuse, gtrace = gated_fusion(t_in, a_in, params.W_t, params.W_v)
    return FusionTrace(
        F=f,
        H_t=h_t,
        H_v=h_v,
        P=p,
        H_v_attn=h_attn,
        lam=gtrace.lam,
        gate=gtrace.gate,
        H_fuse=h_fuse,
        mask_t=mask_t,
        mask_v=mask_v,
        weights={k: v.copy() for k, v in params.arrays().items()},
    )


def fusion_backward(trace: FusionTrace, d_fuse, params: FusionParams) -> dict:
    """Gradients of a scalar loss w.r.t. ``W_h``, ``W_t``, ``W_v`` and ``H_t``,
    given ``d_fuse = dL/dH_fuse``."""
    if trace.weights is None:
        raise ValueError("trace has no cached weights; build it with forward()")
    for name, w in params.arrays().items():
        if not np.array_equal(w, trace.weights[name]):
            raise RuntimeError(f"stale trace: {name} changed since the forward pass")
    d_fuse = np.asarray(d_fuse, dtype=np.float64)
    if d_fuse.shape != trace.H_fuse.shape:
        raise ShapeError(f"upstream gradient {d_fuse.shape} != H_fuse {trace.H_fuse.shape}")

    w_t, w_v = params.W_t.weights, params.W_v.weights
    mask_t = 1.0 if trace.mask_t is None else trace.mask_t
    mask_v = 1.0 if trace.mask_v is None else trace.mask_v
    t_in = trace.H_t * mask_t
    a_in = trace.H_v_attn * mask_v
    g = trace.gate

    d_lam = d_fuse * a_in * (1.0 - g * g)
    d_w_t = t_in.T @ d_lam
    d_w_v = a_in.T @ d_lam
    d_t_in = d_fuse + d_lam @ w_t.T
    d_a_in = d_fuse * g + d_lam @ w_v.T

    d_attn = d_a_in * mask_v
    d_h_t = d_t_in * mask_t

    # H_attn = P @ H_v
    d_p = d_attn @ trace.H_v.T
    d_h_v = trace.P.T @ d_attn
    # P = softmax_rows(S), S = H_t H_v^T / sqrt(d_k)
    d_s = trace.P * (d_p - np.sum(d_p * trace.P, axis=1, keepdims=True))
    scale = 1.0 / np.sqrt(trace.H_t.shape[1])
    d_h_t = d_h_t + scale * (d_s @ trace.H_v)
    d_h_v = d_h_v + scale * (d_s.T @ trace.H_t)
    # H_v = F W_h
    d_w_h = trace.F.T @ d_h_v
    return {"W_h": d_w_h, "W_t": d_w_t, "W_v": d_w_v, "H_t": d_h_t}


def surrogate_loss(trace: FusionTrace, target_vec):
    """Squared distance between the mean-pooled fused rows and a target vector,
    averaged over features. Returns ``(loss, dL/dH_fuse)``."""
    target_vec = np.asarray(target_vec, dtype=np.float64).ravel()
    rows, d = trace.H_fuse.shape
    diff = trace.H_fuse.mean(axis=0) - target_vec
    loss = float(np.dot(diff, diff) / d)
    grad = np.broadcast_to(2.0 * diff / (d * rows), trace.H_fuse.shape).copy()
    return loss, grad
