import json
import math

import numpy as np
import pytest

from oodbench.core import CapabilityError, DataError, FormatError, Sample, ShapeError, TaskType
from oodbench.frtd import save_tensor
from oodbench.methods import argmax_label
from oodbench.model import LogitReplayModel, MicroNet, build_model, micro_net_init

from conftest import finite_difference_check, reference_logits, relative_error, seeded_image

SEG, CLS = TaskType.SEGMENTATION, TaskType.CLASSIFICATION


def zero_net(task, C=1, K=3, bias=(0.5, -1.0, 2.0)):
    return MicroNet(task, np.zeros((8, C, 3, 3)), np.zeros(8), np.zeros((K, 8)), np.asarray(bias))


class TestForward:
    @pytest.mark.parametrize("task", [SEG, CLS])
    def test_zero_weights_give_bias(self, task):
        net = zero_net(task)
        out = net.forward(seeded_image(0, (1, 5, 6)))
        expected = np.float32([0.5, -1.0, 2.0])
        if task is SEG:
            assert out.shape == (3, 5, 6)
            np.testing.assert_array_equal(out, np.broadcast_to(expected[:, None, None], (3, 5, 6)))
        else:
            np.testing.assert_array_equal(out, expected)

    def test_identity_kernel_passthrough(self):
        # center tap 1 from channel 1 into hidden unit 0; head copies hidden 0 into class 0
        w1 = np.zeros((8, 2, 3, 3))
        w1[0, 1, 1, 1] = 1.0
        w2 = np.zeros((2, 8))
        w2[0, 0] = 1.0
        net = MicroNet(SEG, w1, np.zeros(8), w2, np.zeros(2))
        x = seeded_image(1, (2, 4, 4))
        out = net.forward(x)
        np.testing.assert_array_equal(out[0], x[1])
        np.testing.assert_array_equal(out[1], np.zeros((4, 4)))

    def test_hand_computed_3x3(self):
        # one channel, all-ones kernel: each output = sum of the 3x3 neighbourhood (zero padded)
        w1 = np.zeros((8, 1, 3, 3))
        w1[0, 0] = 1.0
        w2 = np.zeros((2, 8))
        w2[0, 0] = 1.0
        net = MicroNet(SEG, w1, np.zeros(8), w2, np.zeros(2))
        x = np.arange(9, dtype=np.float32).reshape(1, 3, 3) / 10
        expected = np.array([[0.8, 1.5, 1.2], [2.1, 3.6, 2.7], [2.0, 3.3, 2.4]])
        np.testing.assert_allclose(net.forward(x)[0], expected, atol=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("task", [SEG, CLS])
    def test_matches_reference(self, seed, task):
        net = micro_net_init(seed, 3, 4, task)
        x = seeded_image(seed, (3, 7, 5))
        np.testing.assert_allclose(net.raw_forward(x), reference_logits(net, x), rtol=1e-12, atol=1e-12)

    def test_classification_is_pooled_segmentation(self):
        seg = micro_net_init(3, 3, 4, SEG)
        cls = MicroNet(CLS, seg.conv1_weight, seg.conv1_bias, seg.head_weight, seg.head_bias)
        for x in (np.full((3, 6, 6), 0.4, dtype=np.float32), seeded_image(2, (3, 6, 6))):
            np.testing.assert_allclose(cls.raw_forward(x), seg.raw_forward(x).mean(axis=(1, 2)), atol=1e-12)

    def test_constant_input_constant_interior(self):
        net = micro_net_init(5, 3, 3, SEG)
        out = net.forward(np.full((3, 9, 9), 0.6, dtype=np.float32))
        interior = out[:, 1:-1, 1:-1]
        assert (interior == interior[:, :1, :1]).all()

    def test_deterministic(self):
        net = micro_net_init(5, 3, 3, SEG)
        x = seeded_image(5, (3, 9, 9))
        assert net.forward(x).tobytes() == net.forward(x).tobytes()
        assert net.forward(x).dtype == np.float32

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            micro_net_init(0, 3, 2, SEG).forward(np.zeros((1, 4, 4), dtype=np.float32))


class TestInit:
    def test_same_seed(self):
        a, b = micro_net_init(9, 3, 2, SEG), micro_net_init(9, 3, 2, SEG)
        for k in a.weights():
            assert a.weights()[k].tobytes() == b.weights()[k].tobytes()

    def test_bounds(self):
        net = micro_net_init(1, 3, 5, CLS)
        assert np.abs(net.conv1_weight).max() <= 1 / math.sqrt(27)
        assert np.abs(net.conv1_weight).max() > 0.9 / math.sqrt(27)
        assert np.abs(net.head_weight).max() <= 1 / math.sqrt(8)
        assert net.conv1_weight.shape == (8, 3, 3, 3)
        assert net.head_weight.shape == (5, 8)

    def test_layers_independent_streams(self):
        net = micro_net_init(1, 1, 8, SEG)
        assert net.conv1_bias.tobytes() != net.head_bias.tobytes()

    def test_invalid(self):
        with pytest.raises(ShapeError):
            micro_net_init(0, 0, 2, SEG)
        with pytest.raises(ShapeError):
            micro_net_init(0, 1, 1, SEG)


class TestBundle:
    def test_round_trip(self, tmp_path):
        net = micro_net_init(4, 3, 3, SEG)
        net.save(tmp_path / "net")
        back = MicroNet.load(tmp_path / "net")
        x = seeded_image(6, (3, 5, 5))
        assert back.forward(x).tobytes() == net.forward(x).tobytes()
        manifest = json.loads((tmp_path / "net" / "manifest.json").read_text())
        assert manifest["C"] == 3 and manifest["K"] == 3 and manifest["task"] == "segmentation"
        assert manifest["layers"]["conv1.weight"]["dims"] == [8, 3, 3, 3]

    def test_shape_mismatch(self, tmp_path):
        micro_net_init(4, 3, 3, SEG).save(tmp_path / "net")
        save_tensor(tmp_path / "net" / "head.bias.frtd", np.zeros(4, dtype=np.float32))
        with pytest.raises(FormatError):
            MicroNet.load(tmp_path / "net")

    def test_build_model(self, tmp_path):
        micro_net_init(4, 1, 2, CLS).save(tmp_path / "net")
        assert isinstance(build_model("bundle:net", tmp_path), MicroNet)
        assert build_model("init:3", C=1, K=2, task=CLS).num_classes == 2


def gradient_trial(seed, C, task, T=1.0):
    net = micro_net_init(seed, C, 3, task)
    x = seeded_image(seed, (C, 8, 8), tag="grad")
    labels = argmax_label(net.forward(x))
    analytic = net.input_gradient(x, labels, T)
    fd, crossed = finite_difference_check(net, x, labels, T)
    return analytic, fd, crossed


class TestInputGradient:
    def test_zero_first_layer(self):
        net = zero_net(SEG)
        g = net.input_gradient(seeded_image(0, (1, 4, 4)), np.zeros((4, 4), dtype=int), 1.0)
        assert not g.any()

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("task", [SEG, CLS])
    def test_finite_differences(self, seed, task):
        analytic, fd, crossed = gradient_trial(seed, 1 + 2 * (seed % 2), task)
        err = relative_error(analytic, fd)
        # components whose stencil straddles a ReLU kink have no derivative to compare against
        assert err[~crossed].max() <= 1e-3
        assert crossed.mean() < 0.5

    @pytest.mark.parametrize("T", [1.0, 2.0, 10.0])
    def test_temperature_scaling(self, T):
        analytic, fd, crossed = gradient_trial(0, 1, SEG, T)
        assert not crossed.any()
        assert relative_error(analytic, fd).max() <= 1e-3

    def test_doubling_temperature_all_active(self):
        # all hidden units strictly active (positive weights, bias): the loss is smooth in x and T enters
        # only through logits / T, so the T-specific gradient must equal FD of the T-specific loss
        rng = np.random.default_rng(0)
        w1 = rng.uniform(0.05, 0.3, size=(8, 1, 3, 3))
        net = MicroNet(SEG, w1, np.full(8, 0.5), rng.normal(size=(3, 8)), rng.normal(size=3))
        x = seeded_image(3, (1, 6, 6))
        labels = argmax_label(net.forward(x))
        g1 = net.input_gradient(x, labels, 1.0)
        g2 = net.input_gradient(x, labels, 2.0)
        fd2, crossed = finite_difference_check(net, x, labels, 2.0)
        assert not crossed.any()
        assert relative_error(g2, fd2).max() <= 1e-3
        assert not np.allclose(g1, g2)

    def test_label_shape_checked(self):
        net = micro_net_init(0, 1, 3, SEG)
        with pytest.raises(ShapeError):
            net.input_gradient(np.zeros((1, 4, 4), dtype=np.float32), np.zeros((3, 3), dtype=int), 1.0)


class TestLogitReplay:
    def _model(self, tmp_path, arrays, task="segmentation", k=3):
        files = {}
        for sid, arr in arrays.items():
            save_tensor(tmp_path / f"{sid}.frtd", arr)
            files[sid] = f"{sid}.frtd"
        (tmp_path / "replay.json").write_text(json.dumps({"task": task, "class_count": k, "logits": files}))
        return LogitReplayModel.load(tmp_path / "replay.json")

    def test_bit_exact(self, tmp_path):
        arr = np.random.default_rng(1).normal(size=(3, 4, 4)).astype(np.float32)
        model = self._model(tmp_path, {"a": arr})
        out = model.logits_for(Sample(np.zeros((1, 4, 4)), meta={"id": "a"}))
        assert out.tobytes() == arr.tobytes()

    def test_missing_id(self, tmp_path):
        model = self._model(tmp_path, {"a": np.zeros((3, 4, 4), dtype=np.float32)})
        with pytest.raises(DataError, match="'zz'"):
            model.logits_for(Sample(np.zeros((1, 4, 4)), meta={"id": "zz"}))

    def test_spatial_mismatch(self, tmp_path):
        model = self._model(tmp_path, {"a": np.zeros((3, 4, 4), dtype=np.float32)})
        with pytest.raises(ShapeError):
            model.logits_for(Sample(np.zeros((1, 5, 5)), meta={"id": "a"}))

    def test_class_count_mismatch(self, tmp_path):
        with pytest.raises(ShapeError):
            self._model(tmp_path, {"a": np.zeros((2, 4, 4), dtype=np.float32)})

    def test_no_gradients(self, tmp_path):
        model = self._model(tmp_path, {"a": np.zeros(3, dtype=np.float32)}, task="classification")
        assert not model.supports_gradients
        with pytest.raises(CapabilityError):
            model.input_gradient(np.zeros((1, 2, 2)), 0, 1.0)
        with pytest.raises(CapabilityError):
            model.forward(np.zeros((1, 2, 2)))
