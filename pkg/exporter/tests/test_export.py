import numpy as np
import pytest
import torch
from torch import nn

from qnt_exporter.container import read_container, write_container
from qnt_exporter.export import ExportManifest, convert_layers, export_model
from qnt_exporter.fixtures import (
    OUTLIER_TRAIN_SEED,
    build_outlier_params,
    digit_datasets,
    make_mlp_fixture,
    make_oracle_fixture,
    make_resnet_shape_fixture,
)
from qnt_exporter.models import DigitData, mlp_net, set_deterministic, train


@pytest.fixture(scope="module")
def digits():
    return DigitData(0)


class TestContainer:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "t.qnt"
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4)).astype(np.float32)
        b = rng.normal(size=(7,))
        write_container(path, {"a": a, "b": b}, {"kind": "model"}, dtypes={"b": "f8"})
        header, tensors = read_container(path)
        assert header["kind"] == "model"
        np.testing.assert_array_equal(tensors["a"], a.astype(np.float64))
        np.testing.assert_array_equal(tensors["b"], b)

    def test_header_before_nul_is_json(self, tmp_path):
        import json

        path = tmp_path / "t.qnt"
        write_container(path, {"x": np.zeros(2, np.float32)}, {})
        raw = path.read_bytes()
        nul = raw.index(b"\x00")
        header = json.loads(raw[:nul])
        assert header["format_version"] == 1
        assert header["tensors"]["x"]["length"] == 8


class TestConvertLayers:
    def test_unsupported_layer_listed(self):
        module = nn.Sequential(nn.Linear(4, 4), nn.Sigmoid())
        with pytest.raises(ValueError, match="Sigmoid"):
            convert_layers(module)

    def test_shapes_and_names(self):
        set_deterministic(0)
        module = nn.Sequential(
            nn.Conv2d(1, 4, 3, padding=1), nn.BatchNorm2d(4), nn.ReLU(),
            nn.MaxPool2d(2, 2), nn.Flatten(), nn.Linear(4 * 4 * 4, 10))
        module.eval()
        entries, tensors, golden, layer_map = convert_layers(module)
        assert [e["type"] for e in entries] == [
            "conv2d", "batchnorm", "relu", "maxpool", "flatten", "fc"]
        assert tensors["conv1.weight"].shape == (4, 1, 3, 3)
        assert tensors["fc1.weight"].shape == (10, 64)
        assert len(layer_map) == 6

    def test_golden_twin_matches_f4_params(self):
        set_deterministic(1)
        module = nn.Sequential(nn.Linear(6, 5), nn.ReLU(), nn.Linear(5, 3)).eval()
        _, tensors, golden, _ = convert_layers(module)
        x = torch.randn(4, 6, dtype=torch.float64)
        with torch.no_grad():
            out = golden(x).numpy()
        w1 = tensors["fc1.weight"].astype(np.float64)
        b1 = tensors["fc1.bias"].astype(np.float64)
        w2 = tensors["fc2.weight"].astype(np.float64)
        b2 = tensors["fc2.bias"].astype(np.float64)
        h = np.maximum(x.numpy() @ w1.T + b1, 0.0)
        np.testing.assert_allclose(out, h @ w2.T + b2, rtol=1e-12)


class TestExportModel:
    def test_writes_model_and_golden(self, tmp_path, digits):
        set_deterministic(2)
        net = train(mlp_net((64, 16, 10)), digits.flat(digits.train_x),
                    digits.train_y, epochs=10, seed=2)
        manifest = ExportManifest(
            source="test", output=tmp_path / "m.qnt",
            golden_output=tmp_path / "g.qnt", golden_samples=4,
            input_shape=(64,))
        manifest = export_model(net, manifest,
                                golden_inputs=digits.flat(digits.eval_x),
                                eval_data=(digits.flat(digits.eval_x), digits.eval_y))
        assert manifest.float_accuracy is not None
        header, tensors = read_container(tmp_path / "m.qnt")
        assert header["metadata"]["float_accuracy"] == manifest.float_accuracy
        gheader, gtensors = read_container(tmp_path / "g.qnt")
        assert gtensors["input_003"].shape == (64,)
        assert gtensors["output_003"].shape == (10,)
        # goldens are stored at full precision
        assert gheader["tensors"]["output_000"]["dtype"] == "f8"

    def test_golden_without_inputs_rejected(self, tmp_path):
        net = nn.Sequential(nn.Linear(4, 2)).eval()
        manifest = ExportManifest(source="t", output=tmp_path / "m.qnt",
                                  golden_output=tmp_path / "g.qnt", input_shape=(4,))
        with pytest.raises(ValueError, match="golden"):
            export_model(net, manifest)


class TestFixtures:
    def test_mlp_fixture_deterministic(self, tmp_path, digits):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        d1.mkdir(), d2.mkdir()
        make_mlp_fixture(d1, digits, seed=0)
        make_mlp_fixture(d2, digits, seed=0)
        assert (d1 / "mlp.qnt").read_bytes() == (d2 / "mlp.qnt").read_bytes()
        assert (d1 / "mlp_golden.qnt").read_bytes() == (d2 / "mlp_golden.qnt").read_bytes()

    def test_datasets_have_disjoint_splits(self, tmp_path):
        digit_datasets(tmp_path, seed=0)
        _, tensors = read_container(tmp_path / "mlp_data.qnt")
        split = tensors["split"]
        assert int((split == 0).sum()) == 512
        assert int((split == 1).sum()) == 200

    def test_outlier_properties(self, digits):
        params, base_acc, ratios = build_outlier_params(digits, OUTLIER_TRAIN_SEED)
        assert all(r >= 5.0 for r in ratios.values())
        w1, b1, w2, b2, w3, b3 = [p.astype(np.float32).astype(np.float64) for p in params]
        x = digits.flat(digits.eval_x)
        h1 = np.maximum(x @ w1.T + b1, 0.0)
        h2 = np.maximum(h1 @ w2.T + b2, 0.0)
        pred = (h2 @ w3.T + b3).argmax(axis=1)
        acc = float((pred == digits.eval_y).mean() * 100.0)
        assert abs(acc - base_acc) <= 1.0

    def test_oracle_fixture_rotates_hot_channels(self, tmp_path):
        make_oracle_fixture(tmp_path, seed=0)
        _, tensors = read_container(tmp_path / "oracle_data.qnt")
        inputs, split = tensors["inputs"], tensors["split"]
        profile_hot = set(np.argmax(inputs[split == 0], axis=1).tolist())
        eval_hot = set(np.argmax(inputs[split == 1], axis=1).tolist())
        assert profile_hot == set(range(8))
        assert eval_hot == set(range(8, 16))

    def test_resnet_shape_widths(self, tmp_path):
        make_resnet_shape_fixture(tmp_path, seed=0)
        header, tensors = read_container(tmp_path / "resnet50_shape.qnt")
        convs = [e for e in header["layers"] if e["type"] == "conv2d"]
        assert len(convs) == 49
        assert tensors["conv1.weight"].shape == (64, 3, 1, 1)
        assert tensors["conv49.weight"].shape == (2048, 512, 1, 1)
        assert tensors["fc.weight"].shape == (1000, 2048)
        # activations stay bounded through the whole chain
        h = tensors["inputs"] if "inputs" in tensors else None
        _, data = read_container(tmp_path / "resnet50_data.qnt")
        x = data["inputs"].reshape(-1, 3)
        for i in range(1, 50):
            w = tensors[f"conv{i}.weight"].reshape(tensors[f"conv{i}.weight"].shape[:2])
            x = x @ w.T
            assert np.isfinite(x).all()
            assert 1e-6 < np.max(np.abs(x)) < 1e3
