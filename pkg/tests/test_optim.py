import json
import math

import numpy as np
import pytest

from hkidqg.optim import OptimizerState, adamw_step, load_checkpoint, lr_schedule, save_checkpoint


def test_schedule_examples():
    spe = 10
    assert lr_schedule(20, spe, 5e-5) == 5e-5
    assert lr_schedule(10, spe, 5e-5) == pytest.approx(2.5e-5)
    assert lr_schedule(0, spe, 5e-5) == 0.0
    assert lr_schedule(200, spe, 5e-5) == pytest.approx(0.0, abs=1e-20)
    assert lr_schedule(10_000, spe, 5e-5) == lr_schedule(200, spe, 5e-5)
    mid = lr_schedule(110, spe, 1.0)
    assert mid == pytest.approx(0.5)
    with pytest.raises(ValueError):
        lr_schedule(1, 0, 1.0)


def test_schedule_continuous_at_junction():
    spe = 1000
    left = lr_schedule(2 * spe - 1, spe, 1.0)
    right = lr_schedule(2 * spe + 1, spe, 1.0)
    assert abs(left - 1.0) < 2e-3 and abs(right - 1.0) < 2e-3


def scalar_adamw(p, grads_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8, wd=0.01):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grads_fn(p)
        p = p - lr * wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p = p - lr * mh / (math.sqrt(vh) + eps)
        out.append(p)
    return out


def test_adamw_matches_scalar_reference_on_quadratic():
    start = np.array([[1.5, -0.7], [0.2, 3.0]])
    curv = np.array([[1.0, 2.0], [0.5, 4.0]])
    params = {"w": start.copy()}
    state = OptimizerState(groups={"default": 0.1})
    history = []
    for _ in range(10):
        assert adamw_step(params, {"w": curv * params["w"]}, state)
        history.append(params["w"].copy())
    for idx in np.ndindex(start.shape):
        ref = scalar_adamw(float(start[idx]), lambda x, c=float(curv[idx]): c * x, 0.1, 10)
        for step in range(10):
            assert abs(history[step][idx] - ref[step]) < 1e-10


def test_adamw_decay_only_and_no_op():
    p = {"w": np.array([1.0, -2.0, 4.0])}
    state = OptimizerState(groups={"default": 0.5}, weight_decay=0.0)
    adamw_step(p, {"w": np.zeros(3)}, state)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0, 4.0])

    p = {"w": np.array([1.0, -2.0, 4.0])}
    state = OptimizerState(groups={"default": 0.5}, weight_decay=0.01)
    for k in range(1, 4):
        adamw_step(p, {"w": np.zeros(3)}, state)
        np.testing.assert_array_equal(p["w"], np.array([1.0, -2.0, 4.0]) * (1 - 0.5 * 0.01) ** k)


def test_adamw_rejects_non_finite():
    p = {"w": np.ones(2)}
    state = OptimizerState()
    assert not adamw_step(p, {"w": np.array([1.0, np.nan])}, state)
    assert state.rejected == 1 and state.step == 0
    np.testing.assert_array_equal(p["w"], np.ones(2))
    with pytest.raises(ValueError):
        adamw_step(p, {"w": np.ones(3)}, state)


def test_group_rates():
    state = OptimizerState(param_group={"enc": "encoder"})
    assert state.base_lr("enc") == 1e-5 and state.base_lr("W_h") == 5e-5


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"W_h": rng.normal(size=(3, 2)), "W_t": rng.normal(size=(2, 2))}
    state = OptimizerState()
    adamw_step(params, {k: rng.normal(size=v.shape) for k, v in params.items()}, state)
    path = tmp_path / "ck.json"
    save_checkpoint(path, params, state, seed=9, extra={"epoch": 3})
    p2, s2, seed, extra = load_checkpoint(path)
    assert seed == 9 and extra == {"epoch": 3} and s2.step == 1
    for k in params:
        assert p2[k].tobytes() == params[k].tobytes()
        assert s2.m[k].tobytes() == state.m[k].tobytes()
        assert s2.v[k].tobytes() == state.v[k].tobytes()
    assert [f.name for f in tmp_path.iterdir()] == ["ck.json"]

    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)
