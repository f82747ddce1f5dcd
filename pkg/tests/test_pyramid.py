import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hkidqg.core import ConfigError, Diagram, LinearMap, ShapeError, cosine_sim, make_rng
from hkidqg.pyramid import crop, decompose, score_patches, select_patches


def coverage(height, width, patches):
    counts = np.zeros((height, width), dtype=int)
    for p in patches:
        r0, r1, c0, c1 = p.rect
        counts[r0:r1, c0:c1] += 1
    return counts


def test_two_layer_example():
    pyr = decompose(100, 100, 2)
    assert [p.rect for p in pyr.patches] == [
        (0, 100, 0, 100), (0, 50, 0, 50), (0, 50, 50, 100), (50, 100, 0, 50), (50, 100, 50, 100),
    ]


def test_formula_substitution():
    pyr = decompose(300, 300, 3)
    ref = next(p for p in pyr.patches if (p.layer, p.row, p.col) == (3, 2, 1))
    assert ref.rect == (100, 200, 0, 100)
    assert len(pyr.patches) == 14


@settings(max_examples=60)
@given(st.integers(1, 8), st.integers(1, 120), st.integers(1, 120))
def test_layers_partition_image(n, h, w):
    if h < n or w < n:
        with pytest.raises(ConfigError):
            decompose(h, w, n)
        return
    pyr = decompose(h, w, n)
    assert len(pyr.patches) == sum(l * l for l in range(1, n + 1))
    for l in range(1, n + 1):
        layer = pyr.layer(l)
        assert len(layer) == l * l
        assert np.all(coverage(h, w, layer) == 1)
    if n > 1:
        assert len(pyr.patches) - len(decompose(h, w, n - 1).patches) == n * n


def test_rejects_bad_configuration():
    with pytest.raises(ConfigError):
        decompose(10, 10, 0)
    with pytest.raises(ConfigError):
        decompose(2, 10, 3)


def test_crop_identity_and_quadrant():
    rng = make_rng(5)
    d = Diagram("d", rng.integers(0, 256, (37, 23, 3), dtype=np.uint8))
    full = crop(d, decompose(37, 23, 1).patches[0])
    np.testing.assert_array_equal(full.pixels, d.pixels)

    board = np.zeros((100, 100, 3), dtype=np.uint8)
    board[:50, 50:] = 255
    board[50:, :50] = 255
    q = crop(Diagram("b", board), decompose(100, 100, 2).layer(2)[0])
    assert q.pixels.shape == (50, 50, 3) and np.all(q.pixels == 0)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_crop_restitch_is_bit_exact(n):
    rng = make_rng(n)
    d = Diagram("d", rng.integers(0, 256, (41, 29, 3), dtype=np.uint8))
    pyr = decompose(41, 29, n)
    for l in range(1, n + 1):
        canvas = np.zeros_like(d.pixels)
        for ref in pyr.layer(l):
            r0, r1, c0, c1 = ref.rect
            canvas[r0:r1, c0:c1] = crop(d, ref).pixels
        assert canvas.tobytes() == d.pixels.tobytes()


def test_crop_out_of_bounds():
    d = Diagram("d", np.zeros((10, 10, 3), dtype=np.uint8))
    ref = decompose(20, 20, 1).patches[0]
    with pytest.raises(AssertionError):
        crop(d, ref)


def test_score_examples():
    eye = LinearMap("W_h", np.eye(2))
    assert score_patches([[1.0, 0.0]], eye, [1, 0], [0, 1])[0] == pytest.approx(1.0)
    assert score_patches([[0.3, 0.4]], eye, [0.3, 0.4], [0.6, 0.8])[0] == pytest.approx(2.0)
    with pytest.raises(ShapeError):
        score_patches([[1.0, 0.0, 0.0]], eye, [1, 0], [0, 1])


def test_score_matches_scalar_oracle(rng):
    f = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 4))
    e_t, e_c = rng.normal(size=4), rng.normal(size=4)

    def cos(u, v):
        dot = sum(a * b for a, b in zip(u, v))
        return dot / (sum(a * a for a in u) ** 0.5 * sum(b * b for b in v) ** 0.5)

    expected = []
    for row in f:
        proj = [sum(row[k] * w[k][j] for k in range(4)) for j in range(4)]
        expected.append(cos(proj, e_t) + cos(proj, e_c))
    np.testing.assert_allclose(score_patches(f, LinearMap("W_h", w), e_t, e_c), expected, atol=1e-12, rtol=0)


def test_select_single_layer_and_tie_break():
    pyr = decompose(10, 10, 1)
    assert select_patches(pyr, [-1.5]).entries[0][0] == pyr.patches[0]
    pyr = decompose(10, 10, 2)
    sel = select_patches(pyr, [0.0, 0.1, 0.9, 0.9, 0.2])
    ref, score = sel.entries[1]
    assert (ref.row, ref.col, score) == (1, 2, 0.9)


def brute_force(pyr, scores):
    best = {}
    for p, s in zip(pyr.patches, scores):
        cur = best.get(p.layer)
        if cur is None or s > cur[1] or (s == cur[1] and (p.row, p.col) < (cur[0].row, cur[0].col)):
            best[p.layer] = (p, s)
    return [best[l] for l in sorted(best)]


def test_select_matches_brute_force(rng):
    pyr = decompose(90, 90, 3)
    for _ in range(100):
        scores = rng.integers(0, 4, len(pyr.patches)) / 4.0  # many ties on purpose
        assert list(select_patches(pyr, scores).entries) == brute_force(pyr, scores)


def test_selection_permutation_stable(rng):
    pyr = decompose(60, 60, 3)
    scores = rng.integers(0, 3, len(pyr.patches)).astype(float)
    sel = select_patches(pyr, scores)
    perm = rng.permutation(len(pyr.patches))
    shuffled = [pyr.patches[i] for i in perm]
    by_ref = dict(zip(pyr.patches, scores))
    assert list(sel.entries) == brute_force(pyr, [by_ref[p] for p in pyr.patches])
    assert {(p.layer, p.row, p.col) for p, _ in brute_force_shuffled(shuffled, by_ref)} == \
        {(p.layer, p.row, p.col) for p in sel.refs}


def brute_force_shuffled(patches, by_ref):
    best = {}
    for p in patches:
        s = by_ref[p]
        cur = best.get(p.layer)
        if cur is None or s > cur[1] or (s == cur[1] and (p.row, p.col) < (cur[0].row, cur[0].col)):
            best[p.layer] = (p, s)
    return list(best.values())


@pytest.mark.parametrize("alpha", [0.1, 10.0])
def test_selection_scale_invariant(rng, alpha):
    pyr = decompose(64, 64, 3)
    f = rng.normal(size=(len(pyr.patches), 6))
    w = LinearMap("W_h", rng.normal(size=(6, 5)))
    e_t, e_c = rng.normal(size=5), rng.normal(size=5)
    base = select_patches(pyr, score_patches(f, w, e_t, e_c)).refs
    assert select_patches(pyr, score_patches(alpha * f, w, e_t, e_c)).refs == base
