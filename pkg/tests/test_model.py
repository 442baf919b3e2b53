"""Toy segmentation net: shape contract, init, equivariance, gradients."""

import numpy as np
import pytest

from structseg.model import PARAM_CAP, SegNetDescriptor, init_segnet
from structseg.tensor import backward, softmax, tmean
from structseg.verification import max_rel_error, numerical_gradient


class TestInit:
    def test_same_seed_identical(self):
        d = SegNetDescriptor()
        a = init_segnet(np.random.default_rng(0), d)
        b = init_segnet(np.random.default_rng(0), d)
        for pa, pb in zip(a.params, b.params):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_different_seeds_differ(self):
        d = SegNetDescriptor()
        a = init_segnet(np.random.default_rng(0), d)
        b = init_segnet(np.random.default_rng(1), d)
        assert any(not np.array_equal(pa.data, pb.data)
                   for pa, pb in zip(a.params, b.params))

    def test_default_parameter_count_formula(self):
        # 3x3 kernels, widths (32, 32, 32, C): 9*(3*32 + 32*32*2 + 32*C) + biases
        c = 4
        d = SegNetDescriptor(in_channels=3, widths=(32, 32, 32, c))
        net = init_segnet(np.random.default_rng(0), d)
        expected = 9 * (3 * 32 + 32 * 32 * 2 + 32 * c) + (32 + 32 + 32 + c)
        assert net.param_count == expected
        assert net.param_count < PARAM_CAP

    def test_biases_start_at_zero(self):
        net = init_segnet(np.random.default_rng(0), SegNetDescriptor())
        for b in net.biases:
            np.testing.assert_array_equal(b.data, 0.0)

    def test_param_cap_enforced(self):
        d = SegNetDescriptor(in_channels=3, widths=(128, 128, 128, 4))
        with pytest.raises(ValueError, match="cap"):
            init_segnet(np.random.default_rng(0), d)

    def test_descriptor_round_trip(self):
        d = SegNetDescriptor(in_channels=2, widths=(8, 5), kernel_size=5, pad_mode="wrap")
        assert SegNetDescriptor.from_dict(d.to_dict()) == d


class TestForward:
    def test_zero_final_layer_gives_uniform_softmax(self):
        rng = np.random.default_rng(0)
        net = init_segnet(rng, SegNetDescriptor(in_channels=3, widths=(8, 4)))
        net.kernels[-1].data[:] = 0.0
        net.biases[-1].data[:] = 0.0
        probs = softmax(net.forward(rng.random((10, 10, 3)))).data
        np.testing.assert_allclose(probs, 0.25, rtol=0, atol=0)

    def test_output_shape_and_fully_convolutional(self):
        rng = np.random.default_rng(1)
        net = init_segnet(rng, SegNetDescriptor(in_channels=3, widths=(8, 8, 5)))
        assert net.forward(rng.random((32, 32, 3))).shape == (32, 32, 5)
        assert net.forward(rng.random((64, 48, 3))).shape == (64, 48, 5)

    def test_translation_equivariance_with_wrap_padding(self):
        rng = np.random.default_rng(2)
        net = init_segnet(rng, SegNetDescriptor(in_channels=2, widths=(6, 6, 3),
                                                pad_mode="wrap"))
        img = rng.random((12, 12, 2))
        out = net.forward(img).data
        for shift in ((1, 0), (0, 1), (3, 5)):
            rolled = np.roll(img, shift, axis=(0, 1))
            out_rolled = net.forward(rolled).data
            np.testing.assert_allclose(out_rolled, np.roll(out, shift, axis=(0, 1)),
                                       rtol=0, atol=1e-12)

    def test_channel_mismatch_errors(self):
        net = init_segnet(np.random.default_rng(0), SegNetDescriptor(in_channels=3,
                                                                     widths=(4, 2)))
        with pytest.raises(ValueError, match="H,W,3"):
            net.forward(np.zeros((8, 8, 1)))

    def test_forward_deterministic(self):
        rng = np.random.default_rng(3)
        net = init_segnet(rng, SegNetDescriptor(in_channels=3, widths=(4, 2)))
        img = rng.random((9, 9, 3))
        np.testing.assert_array_equal(net.forward(img).data, net.forward(img).data)

    def test_substitute_params_used(self):
        rng = np.random.default_rng(4)
        d = SegNetDescriptor(in_channels=2, widths=(4, 3))
        net = init_segnet(rng, d)
        other = init_segnet(np.random.default_rng(99), d)
        img = rng.random((6, 6, 2))
        np.testing.assert_array_equal(
            net.forward(img, params=other.params).data, other.forward(img).data)


def test_mean_logit_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    net = init_segnet(rng, SegNetDescriptor(in_channels=2, widths=(3, 2)))
    img = rng.random((6, 6, 2))
    backward(tmean(net.forward(img)))
    grads = [p.grad.copy() for p in net.params]
    values = [p.data.copy() for p in net.params]
    for k, p in enumerate(net.params):
        def f(x):
            for q, v in zip(net.params, values):
                q.data[:] = v
            p.data[:] = x
            out = tmean(net.forward(img)).item()
            for q, v in zip(net.params, values):
                q.data[:] = v
            return out

        err = max_rel_error(grads[k], numerical_gradient(f, values[k]))
        assert err < 1e-4, f"param {k}"
