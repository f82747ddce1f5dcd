"""Central finite-difference checks of the fusion gradients."""
from __future__ import annotations

import numpy as np

from . import fusion
from .core import LinearMap, make_rng

FD_STEP = 1e-4
REL_TOL = 1e-4
_FLOOR = 1e-8


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), _FLOOR)


def random_instance(rng, max_t=5, max_n=4, max_dk=8, max_dv=8, scale=0.5, dropout=0.0):
    t = int(rng.integers(1, max_t + 1))
    n = int(rng.integers(1, max_n + 1))
    d_k = int(rng.integers(1, max_dk + 1))
    d_v = int(rng.integers(1, max_dv + 1))
    params = fusion.FusionParams(
        W_h=LinearMap("W_h", rng.normal(0, scale, (d_v, d_k))),
        W_t=LinearMap("W_t", rng.normal(0, scale, (d_k, d_k))),
        W_v=LinearMap("W_v", rng.normal(0, scale, (d_k, d_k))),
    )
    f = rng.normal(0, 1, (n, d_v))
    h_t = rng.normal(0, 1, (t, d_k))
    readout = rng.normal(0, 1, (t, d_k))
    masks = None
    if dropout:
        keep = 1.0 - dropout
        masks = ((rng.random((t, 1)) < keep) / keep, (rng.random((t, 1)) < keep) / keep)
    return params, f, h_t, readout, masks


def reference_loss(w_h, w_t, w_v, f, h_t, readout, masks=None) -> float:
    """Readout loss ``sum(readout * H_fuse)`` evaluated in extended precision.

    Written independently of ``fusion.forward`` so the finite-difference oracle
    shares no code with the path it checks; ``longdouble`` keeps round-off in
    the difference quotient well below the tolerance.
    """
    ld = np.longdouble
    w_h, w_t, w_v, f, h_t = (np.asarray(x, dtype=ld) for x in (w_h, w_t, w_v, f, h_t))
    h_v = f @ w_h
    scores = (h_t @ h_v.T) / np.sqrt(ld(h_t.shape[1]))
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    attn = (e / e.sum(axis=1, keepdims=True)) @ h_v
    t_in, a_in = h_t, attn
    if masks is not None:
        t_in = h_t * np.asarray(masks[0], dtype=ld)
        a_in = attn * np.asarray(masks[1], dtype=ld)
    fused = t_in + np.tanh(t_in @ w_t + a_in @ w_v) * a_in
    return np.sum(np.asarray(readout, dtype=ld) * fused)


def _analytic(params, f, h_t, readout, masks):
    trace = fusion.forward(params, f, h_t)
    if masks is not None:
        mask_t, mask_v = masks
        _, g = fusion.gated_fusion(trace.H_t * mask_t, trace.H_v_attn * mask_v, params.W_t, params.W_v)
        trace.lam, trace.gate, trace.H_fuse = g.lam, g.gate, g.H_fuse
        trace.mask_t, trace.mask_v = mask_t, mask_v
    return fusion.fusion_backward(trace, readout, params)


def check_instance(params, f, h_t, readout, masks=None, step=FD_STEP) -> dict:
    """Max relative error per gradient (``W_h``, ``W_t``, ``W_v``, ``H_t``)."""
    analytic = _analytic(params, f, h_t, readout, masks)
    arrays = {name: getattr(params, name).weights.astype(np.longdouble) for name in fusion.PARAM_NAMES}
    arrays["H_t"] = np.asarray(h_t, dtype=np.longdouble)

    def loss():
        return reference_loss(arrays["W_h"], arrays["W_t"], arrays["W_v"], f, arrays["H_t"], readout, masks)

    out = {}
    for name, array in arrays.items():
        grad = np.zeros(array.shape, dtype=np.longdouble)
        for idx in np.ndindex(array.shape):
            orig = array[idx]
            array[idx] = orig + step
            up = loss()
            array[idx] = orig - step
            down = loss()
            array[idx] = orig
            grad[idx] = (up - down) / (2 * np.longdouble(step))
        out[name] = float(relative_error(analytic[name], grad.astype(np.float64)).max())
    return out


def run_checks(seed=0, trials=50, dropout=0.0):
    """Returns a list of ``(shape, errors)`` rows for ``trials`` random instances."""
    rng = make_rng(seed)
    rows = []
    for _ in range(trials):
        params, f, h_t, readout, masks = random_instance(rng, dropout=dropout)
        errors = check_instance(params, f, h_t, readout, masks)
        shape = {"T": h_t.shape[0], "n": f.shape[0], "d_k": h_t.shape[1], "d_v": f.shape[1]}
        rows.append((shape, errors))
    return rows
