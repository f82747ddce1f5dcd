"""
Cross-modal attention, the tanh gate, and checking the gradients
=================================================================

Text rows attend over the projected visual rows, and the attended features are
added back to the text through a gate in (-1, 1). The backward pass is written
by hand, so it is compared against central finite differences.
"""
import numpy as np

from hkidqg.core import LinearMap, make_rng
from hkidqg.fusion import FusionParams, forward, fusion_backward, surrogate_loss
from hkidqg.gradcheck import REL_TOL, run_checks

rng = make_rng(3)
params = FusionParams.init(d_v=8, d_k=6, rng=rng, std=0.5)
patches = rng.normal(size=(3, 8))   # one pooled embedding per pyramid layer
h_t = rng.normal(size=(5, 6))       # prompt token embeddings

trace = forward(params, patches, h_t)
print("attention rows sum to one:", np.allclose(trace.P.sum(axis=1), 1.0))
print("gate range:", trace.gate.min().round(3), trace.gate.max().round(3))

# %%
# With both gate maps at zero the fused output is the text, bit for bit.
closed = FusionParams(params.W_h, LinearMap("W_t", np.zeros((6, 6))), LinearMap("W_v", np.zeros((6, 6))))
print("closed gate returns H_t:", np.array_equal(forward(closed, patches, h_t).H_fuse, h_t))

# %%
# One gradient evaluation of the training objective.
loss, d_fuse = surrogate_loss(trace, rng.normal(size=6))
grads = fusion_backward(trace, d_fuse, params)
print(f"loss {loss:.4f}; gradient norms:", {k: float(np.linalg.norm(v).round(5)) for k, v in grads.items()})

# %%
# Finite-difference check on random small shapes.
rows = run_checks(seed=0, trials=10)
worst = max(max(e.values()) for _, e in rows)
print(f"worst relative error over 10 instances: {worst:.2e} (tolerance {REL_TOL:g})")
