import numpy as np
import pytest

from energycomp import FormatError, Model, build_cnn, build_mlp, load_model, \
    save_model, svd, truncate
from energycomp.lowrank import assemble_factorized, build_rank_plan
from energycomp.model import dense


def assert_models_bitwise_equal(a: Model, b: Model):
    assert a.input_shape == b.input_shape
    assert a.class_count == b.class_count
    assert len(a.layers) == len(b.layers)
    for la, lb in zip(a.layers, b.layers):
        assert la.kind == lb.kind
        assert la.activation == lb.activation
        assert la.kernel_geom == lb.kernel_geom
        if la.weights is None:
            assert lb.weights is None
        else:
            assert np.array_equal(
                la.weights.view(np.uint32), lb.weights.view(np.uint32))
        assert np.array_equal(la.bias.view(np.uint32), lb.bias.view(np.uint32))
        if la.mask is None:
            assert lb.mask is None
        else:
            assert np.array_equal(la.mask, lb.mask)
        if la.factor is None:
            assert lb.factor is None
        else:
            assert la.factor.rank == lb.factor.rank
            assert np.array_equal(la.factor.u_fold.view(np.uint32),
                                  lb.factor.u_fold.view(np.uint32))
            assert np.array_equal(la.factor.v_t.view(np.uint32),
                                  lb.factor.v_t.view(np.uint32))


class TestRoundTrip:
    def test_mlp(self, tmp_path):
        model = build_mlp(input_dim=20, hidden=(12, 6), classes=4, seed=0)
        path = tmp_path / "m.nncm"
        save_model(model, path)
        assert_models_bitwise_equal(model, load_model(path))

    def test_cnn(self, tmp_path):
        model = build_cnn(input_shape=(1, 8, 8), channels=(3, 5), classes=3, seed=1)
        path = tmp_path / "c.nncm"
        save_model(model, path)
        assert_models_bitwise_equal(model, load_model(path))

    def test_masked_model(self, tmp_path):
        model = build_mlp(input_dim=10, hidden=(8,), classes=3, seed=2)
        layer = model.layers[0]
        layer.mask = np.random.default_rng(0).random(layer.weights.shape) > 0.3
        layer.weights = layer.weights * layer.mask
        path = tmp_path / "masked.nncm"
        save_model(model, path)
        assert_models_bitwise_equal(model, load_model(path))

    def test_factorized_model_preserves_ranks(self, tmp_path):
        model = build_mlp(input_dim=12, hidden=(10,), classes=4, seed=3)
        plan = build_rank_plan(model, {0: 5, 1: 2})
        fact = assemble_factorized(model, plan)
        path = tmp_path / "fact.nncm"
        save_model(fact, path)
        loaded = load_model(path)
        assert_models_bitwise_equal(fact, loaded)
        assert [l.factor.rank for l in loaded.layers] == [5, 2]

    def test_factorized_conv_round_trip(self, tmp_path):
        model = build_cnn(input_shape=(1, 6, 6), channels=(4,), classes=2, seed=4)
        plan = build_rank_plan(model, {0: 2})
        fact = assemble_factorized(model, plan)
        path = tmp_path / "fc.nncm"
        save_model(fact, path)
        assert_models_bitwise_equal(fact, load_model(path))


class TestCorruption:
    @pytest.fixture
    def saved(self, tmp_path):
        model = build_mlp(input_dim=6, hidden=(4,), classes=2, seed=5)
        path = tmp_path / "ok.nncm"
        save_model(model, path)
        return path

    def test_wrong_magic(self, saved):
        data = bytearray(saved.read_bytes())
        data[:4] = b"XXXX"
        saved.write_bytes(data)
        with pytest.raises(FormatError, match="magic"):
            load_model(saved)

    def test_wrong_version(self, saved):
        data = bytearray(saved.read_bytes())
        data[4:8] = (99).to_bytes(4, "little")
        saved.write_bytes(data)
        with pytest.raises(FormatError, match="version"):
            load_model(saved)

    def test_truncated(self, saved):
        data = saved.read_bytes()
        saved.write_bytes(data[: len(data) // 2])
        with pytest.raises(FormatError, match="truncated"):
            load_model(saved)

    def test_trailing_garbage(self, saved):
        saved.write_bytes(saved.read_bytes() + b"junk")
        with pytest.raises(FormatError, match="trailing"):
            load_model(saved)

    def test_unknown_kind_tag(self, saved):
        data = bytearray(saved.read_bytes())
        # first layer's kind byte sits right after magic, version,
        # input-shape (1 dim), class_count, layer count
        offset = 4 + 4 + 1 + 4 + 4 + 4
        data[offset] = 200
        saved.write_bytes(data)
        with pytest.raises(FormatError, match="kind"):
            load_model(saved)
