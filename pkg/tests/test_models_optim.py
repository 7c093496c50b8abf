"""Model init, SGD recurrence/schedule, and checkpoint format tests."""

import numpy as np
import pytest

from fatlab.checkpoint import load_checkpoint, load_model, save_checkpoint
from fatlab.errors import ConfigError, FormatError, NumericError
from fatlab.models import Model, init_model, param_shapes
from fatlab.optim import SGDState, default_schedule, make_sgd, sgd_step
from fatlab.tensor import Tensor

MLP_DESC = {"kind": "mlp", "in_dim": 20, "hidden": 16, "classes": 4}
CNN_DESC = {"kind": "smallcnn", "in_channels": 1, "image_hw": [8, 8],
            "channels": [4, 8], "fc_dim": 16, "classes": 3}


class TestInitModel:
    def test_same_seed_is_identical(self):
        a = init_model(MLP_DESC, seed=3)
        b = init_model(MLP_DESC, seed=3)
        for name in a.params:
            assert a.params[name].data.tobytes() == b.params[name].data.tobytes()

    def test_different_seed_differs(self):
        a = init_model(MLP_DESC, seed=3)
        b = init_model(MLP_DESC, seed=4)
        assert a.params["fc1.w"].data.tobytes() != b.params["fc1.w"].data.tobytes()

    def test_kaiming_fan_in_std(self):
        desc = {"kind": "mlp", "in_dim": 100, "hidden": 200, "classes": 10}
        model = init_model(desc, seed=0)
        std = model.params["fc1.w"].data.std()
        target = np.sqrt(2.0 / 100)
        assert abs(std - target) / target < 0.2

    def test_zero_layer_descriptor_is_error(self):
        with pytest.raises(ConfigError):
            init_model({"kind": "mlp", "in_dim": 0, "hidden": 8, "classes": 2}, seed=0)
        with pytest.raises(ConfigError):
            init_model({"kind": "smallcnn", "in_channels": 1, "image_hw": [8, 8],
                        "channels": [], "fc_dim": 4, "classes": 2}, seed=0)

    def test_unknown_kind_is_error(self):
        with pytest.raises(ConfigError):
            init_model({"kind": "resnet18"}, seed=0)

    def test_param_count_matches_descriptor(self):
        model = init_model(CNN_DESC, seed=1)
        expected = sum(int(np.prod(s)) for s in param_shapes(CNN_DESC).values())
        assert model.param_count() == expected

    def test_forward_shapes(self):
        model = init_model(CNN_DESC, seed=1)
        out = model.forward(Tensor(np.random.default_rng(0).random((5, 1, 8, 8))))
        assert out.shape == (5, 3)


class TestSGD:
    def _one_param_model(self, value):
        p = Tensor(np.array([float(value)]), requires_grad=True)
        return Model({"kind": "mlp", "in_dim": 1, "hidden": 1, "classes": 1}, {"w": p})

    def test_plain_step_decreases_by_lr_times_grad(self):
        model = self._one_param_model(5.0)
        model.params["w"].grad = np.array([1.0])
        sgd_step(model, SGDState(lr=1.0, momentum=0.0, weight_decay=0.0))
        assert model.params["w"].data[0] == pytest.approx(4.0)

    def test_momentum_recurrence_two_steps(self):
        # v1 = 1, v2 = 0.9 + 1 = 1.9, total step = 2.9
        model = self._one_param_model(0.0)
        state = SGDState(lr=1.0, momentum=0.9, weight_decay=0.0)
        for _ in range(2):
            model.params["w"].grad = np.array([1.0])
            sgd_step(model, state)
        assert model.params["w"].data[0] == pytest.approx(-2.9)

    def test_zero_grad_zero_wd_is_identity(self):
        model = self._one_param_model(3.0)
        state = SGDState(lr=0.5, momentum=0.9, weight_decay=0.0)
        model.params["w"].grad = np.array([0.0])
        sgd_step(model, state)
        assert model.params["w"].data[0] == 3.0

    def test_nan_grad_aborts_naming_parameter(self):
        model = self._one_param_model(1.0)
        model.params["w"].grad = np.array([np.nan])
        with pytest.raises(NumericError, match="'w'"):
            sgd_step(model, SGDState())

    def test_full_110_epoch_lr_trace(self):
        state = make_sgd(lr=0.1, epochs=110)
        trace = [state.lr_at(e) for e in range(110)]
        assert all(lr == pytest.approx(0.1) for lr in trace[:100])
        assert all(lr == pytest.approx(0.01) for lr in trace[100:105])
        assert all(lr == pytest.approx(0.001) for lr in trace[105:110])

    def test_schedule_scales_with_epoch_count(self):
        sched = default_schedule(30)
        assert sched == [(27, 0.1), (29, 0.1)]
        assert default_schedule(0) == []


class TestCheckpoint:
    def test_round_trip_identical_bytes(self, tmp_path):
        model = init_model(MLP_DESC, seed=7)
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(p1, model, extras={"prior/eta": np.float32([[0.1, -0.2]])})
        loaded, extras = load_model(p1)
        save_checkpoint(p2, loaded, extras=extras)
        assert p1.read_bytes() == p2.read_bytes()

    def test_params_survive_exactly(self, tmp_path):
        model = init_model(CNN_DESC, seed=2)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        loaded, _ = load_model(path)
        for name, p in model.named_parameters().items():
            assert loaded.params[name].data.tobytes() == p.data.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_corrupted_payload_fails_checksum(self, tmp_path):
        model = init_model(MLP_DESC, seed=7)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        blob = bytearray(path.read_bytes())
        blob[40] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="checksum"):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"FATCKPT\x00\x01")
        with pytest.raises(FormatError):
            load_checkpoint(path)
