"""
Patch pyramid and constraint-guided patch selection
====================================================

A diagram is cut into layers of 1x1, 2x2, ... grids. Every patch is scored
against the target text and the concept, and the best patch of each layer is
kept.
"""
import numpy as np

from hkidqg.backends import toy_backends
from hkidqg.core import LinearMap, make_rng
from hkidqg.pyramid import crop, decompose, score_patches, select_patches
from hkidqg.synthetic import draw_diagram

# %%
# A 96x96 synthetic diagram and its three-layer pyramid (1 + 4 + 9 patches).
rng = make_rng(0)
diagram = draw_diagram("demo", rng)
pyr = decompose(diagram.height, diagram.width, n=3)
print(f"{len(pyr.patches)} patches")
for ref in pyr.layer(2):
    print(ref.to_dict())

# %%
# Layers partition the image exactly, so re-stitching the crops of any layer
# gives back the original pixels.
canvas = np.zeros_like(diagram.pixels)
for ref in pyr.layer(3):
    r0, r1, c0, c1 = ref.rect
    canvas[r0:r1, c0:c1] = crop(diagram, ref).pixels
print("layer 3 restitches exactly:", np.array_equal(canvas, diagram.pixels))

# %%
# Score every patch: cosine of the projected patch embedding with the target
# embedding plus the same with the concept embedding.
backends = toy_backends(seed=0, image_dim=16, text_dim=16)
embs = np.stack([backends.image_encoder.encode(crop(diagram, p)) for p in pyr.patches])
w_h = LinearMap("W_h", rng.normal(0, 0.02, (16, 16)))
e_t = backends.text_encoder.encode_pooled("heart")
e_c = backends.text_encoder.encode_pooled("Circulation")
scores = score_patches(embs, w_h, e_t, e_c)
for ref, score in select_patches(pyr, scores).entries:
    print(f"layer {ref.layer}: patch ({ref.row}, {ref.col}) rect={ref.rect} score={score:+.3f}")
