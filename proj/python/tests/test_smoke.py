import math

import numpy as np
import pytest

import lktcn

SMALL = {"M": 3, "L": 48, "T": 12, "P": 8, "S": 4, "D": 4, "K": 2, "large_k": 7, "small_k": 3}


def naive_conv(x, w, b, stride):
    B, _, N = x.shape
    Cout, _, k = w.shape
    n_out = (N - k) // stride + 1
    y = np.empty((B, Cout, n_out))
    for n in range(n_out):
        window = x[:, :, n * stride : n * stride + k]
        y[:, :, n] = np.einsum("bck,ock->bo", window, w) + b
    return y


def test_conv1d_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 4, 11))
    w = rng.standard_normal((6, 4, 3))
    b = rng.standard_normal(6)
    np.testing.assert_allclose(lktcn.conv1d(x, w, b, stride=2), naive_conv(x, w, b, 2), atol=1e-12)


def test_conv1d_repeat_last_padding():
    x = np.arange(5, dtype=float).reshape(1, 1, 5)
    w = np.ones((1, 1, 2))
    y = lktcn.conv1d(x, w, np.zeros(1), stride=2, pad_right=1, repeat_last=True)
    np.testing.assert_array_equal(y.ravel(), [1.0, 5.0, 8.0])


def test_gelu_reference_value():
    y = lktcn.gelu(np.array([1.0, 0.0, -1.0]))
    assert y[0] == pytest.approx(0.8413447460685429, abs=1e-12)
    assert y[1] == 0.0
    assert y[2] == pytest.approx(-0.15865525393145707, abs=1e-12)


def test_forward_shape_and_param_count():
    model = lktcn.Model(SMALL, seed=1)
    x = np.random.default_rng(1).standard_normal((2, 3, 48))
    assert model.forward(x).shape == (2, 3, 12)
    assert model.param_count == lktcn.param_count(SMALL)
    assert model.param_count == sum(v.size for k, v in model.state().items() if "running" not in k)
    assert model.config["large_k"] == "7"


def test_unknown_or_invalid_config_is_rejected():
    with pytest.raises(KeyError):
        lktcn.Model({"bogus": 1})
    with pytest.raises(ValueError):
        lktcn.Model({**SMALL, "large_k": 4})


def test_merged_forward_matches_after_calibration():
    model = lktcn.Model(SMALL, seed=2)
    rng = np.random.default_rng(2)
    with pytest.raises(RuntimeError):
        model.forward_merged(rng.standard_normal((1, 3, 48)))
    model.forward(rng.standard_normal((8, 3, 48)), train=True, seed=3)
    x = rng.standard_normal((4, 3, 48))
    np.testing.assert_allclose(model.forward_merged(x), model.forward(x), atol=1e-10)


def test_shift_equivariance_without_affine():
    model = lktcn.Model({**SMALL, "revin_affine": False}, seed=3)
    x = np.random.default_rng(3).standard_normal((2, 3, 48))
    np.testing.assert_allclose(model.forward(x + 5.0), model.forward(x) + 5.0, atol=1e-10)


def test_checkpoint_roundtrip(tmp_path):
    model = lktcn.Model(SMALL, seed=4)
    path = str(tmp_path / "m.lktc")
    model.save(path)
    back = lktcn.Model.load(path)
    x = np.random.default_rng(4).standard_normal((1, 3, 48))
    np.testing.assert_allclose(back.forward(x), model.forward(x), rtol=1e-6, atol=1e-6)
    with pytest.raises(OSError):
        lktcn.Model.load(str(tmp_path / "missing.lktc"))
    (tmp_path / "bad.lktc").write_bytes(b"nope")
    with pytest.raises(ValueError):
        lktcn.Model.load(str(tmp_path / "bad.lktc"))


def test_gradcheck_passes():
    passed, cases, uncovered = lktcn.gradcheck()
    assert passed
    assert not uncovered
    assert all(err < thr for _, _, err, thr in cases)
    assert all(math.isfinite(err) for _, _, err, _ in cases)
