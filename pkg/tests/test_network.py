"""Presets, shape audits, initialization, classification head, config format."""

import numpy as np
import pytest

import gmprop
from gmprop import (
    ConfigError,
    GaussianVector,
    Network,
    build,
    classify,
    encode_target,
    format_config,
    insert_normalization,
    parse_config,
    preset,
    preset_names,
)
from gmprop.layers import LayerKind

# Verbatim rows of the shipped architecture tables:
# (kind, declared DxWxH, K, P, S, activation). For rows whose declared value
# is internally inconsistent, `table` carries the verbatim shape and `shape`
# the functional one actually built.
AUDIT = {
    "mnist-cnn": [
        ("conv", (32, 27, 27), 4, 1, 1, "relu"),
        ("pool", (32, 13, 13), 3, 0, 2, "-"),
        ("conv", (64, 9, 9), 5, 0, 1, "relu"),
        ("pool", (64, 4, 4), 3, 0, 2, "-"),
        ("fc", (150, 1, 1), None, None, None, "relu"),
        ("output", (10, 1, 1), None, None, None, "-", (11, 1, 1)),
    ],
    "cifar10-3conv": [
        ("conv", (32, 32, 32), 5, 2, 1, "relu"),
        ("pool", (32, 16, 16), 3, 1, 2, "-"),
        ("conv", (32, 16, 16), 5, 2, 1, "relu"),
        ("pool", (32, 8, 8), 3, 1, 2, "-"),
        ("conv", (64, 8, 8), 5, 2, 1, "relu"),
        ("pool", (64, 4, 4), 3, 1, 2, "-"),
        ("fc", (64, 1, 1), None, None, None, "relu"),
        ("output", (10, 1, 1), None, None, None, "-", (11, 1, 1)),
    ],
    "mnist-infogan-dnet": [
        ("conv", (32, 28, 28), 3, 1, 1, "lrelu"),
        ("bnorm", (32, 28, 28), None, None, None, "-"),
        ("pool", (32, 14, 14), 3, 1, 2, "-"),
        ("conv", (64, 14, 14), 3, 1, 1, "lrelu"),
        ("bnorm", (64, 14, 14), None, None, None, "-"),
        ("pool", (64, 7, 7), 3, 1, 2, "-"),
        ("output", (512, 1, 1), None, None, None, "lrelu"),
    ],
    "mnist-infogan-pnet": [
        ("output", (1, 1, 1), None, None, None, "-"),
    ],
    "mnist-infogan-qnet": [
        ("fc", (300, 1, 1), None, None, None, "relu"),
        ("output", (12, 1, 1), None, None, None, "-", (13, 1, 1)),
    ],
    "mnist-infogan-gnet": [
        ("fc", (3136, 1, 1), None, None, None, "relu", (3072, 1, 1)),
        ("reshape", (64, 7, 7), None, None, None, "-"),
        ("tconv", (64, 7, 7), 3, 1, 1, "relu"),
        ("tconv", (32, 14, 14), 3, 1, 2, "relu"),
        ("output", (1, 28, 28), 3, 1, 2, "-"),
    ],
    "celeba-infogan-dnet": [
        ("conv", (32, 32, 32), 3, 1, 1, "lrelu"),
        ("bnorm", (32, 32, 32), None, None, None, "-"),
        ("pool", (32, 16, 16), 3, 1, 2, "-"),
        ("conv", (32, 16, 16), 3, 1, 1, "lrelu"),
        ("bnorm", (32, 16, 16), None, None, None, "-"),
        ("pool", (32, 8, 8), 3, 1, 2, "-"),
        ("conv", (64, 8, 8), 3, 1, 1, "lrelu"),
        ("bnorm", (64, 8, 8), None, None, None, "-"),
        ("pool", (64, 4, 4), 3, 1, 2, "-"),
        ("output", (256, 1, 1), None, None, None, "lrelu"),
    ],
    "celeba-infogan-pnet": [
        ("output", (1, 1, 1), None, None, None, "-"),
    ],
    "celeba-infogan-qnet": [
        ("fc", (256, 1, 1), None, None, None, "relu"),
        ("output", (100, 1, 1), None, None, None, "-", (110, 1, 1)),
    ],
    "celeba-infogan-gnet": [
        ("fc", (1024, 1, 1), None, None, None, "relu"),
        ("reshape", (64, 4, 4), None, None, None, "-"),
        ("tconv", (64, 4, 4), 3, 1, 1, "relu"),
        ("tconv", (64, 8, 8), 3, 1, 2, "relu"),
        ("tconv", (32, 16, 16), 3, 1, 2, "relu"),
        ("tconv", (32, 32, 32), 3, 1, 2, "relu"),
        ("tconv", (32, 32, 32), 3, 1, 1, "relu"),
        ("output", (3, 32, 32), 3, 1, 1, "-", (3, 32, 32)),
    ],
}

INPUT_SHAPES = {
    "mnist-cnn": (1, 28, 28),
    "cifar10-3conv": (3, 32, 32),
    "mnist-infogan-dnet": (1, 28, 28),
    "mnist-infogan-pnet": (512, 1, 1),
    "mnist-infogan-qnet": (512, 1, 1),
    "mnist-infogan-gnet": (75, 1, 1),
    "celeba-infogan-dnet": (3, 32, 32),
    "celeba-infogan-pnet": (256, 1, 1),
    "celeba-infogan-qnet": (256, 1, 1),
    "celeba-infogan-gnet": (238, 1, 1),
}

_KIND_NAMES = {
    LayerKind.CONV2D: "conv", LayerKind.TRANSPOSED_CONV2D: "tconv",
    LayerKind.AVG_POOL: "pool", LayerKind.FULLY_CONNECTED: "fc",
    LayerKind.OUTPUT: "output", LayerKind.LAYER_NORM: "lnorm",
    LayerKind.BATCH_NORM: "bnorm",
}


class TestPresetShapeAudit:
    @pytest.mark.parametrize("name", sorted(AUDIT))
    def test_rows_match_tables(self, name):
        cfg = preset(name)
        assert cfg.input_shape == INPUT_SHAPES[name]
        rows = AUDIT[name]
        assert len(cfg.layers) == len(rows)
        for spec, row in zip(cfg.layers, rows):
            kind, shape, k, p, s, act = row[:6]
            if spec.kind == "reshape":
                assert kind == "reshape"
            else:
                tok = "output" if spec.is_output else _KIND_NAMES[spec.kind]
                if kind == "output":
                    assert spec.is_output
                else:
                    assert tok == kind
            assert spec.out_shape == shape
            if k is not None:
                assert (spec.kernel, spec.padding, spec.stride) == (k, p, s)
            want_act = act if act != "-" else "identity"
            assert spec.activation.name == want_act
            table = row[6] if len(row) > 6 else None
            if table is not None:
                assert spec.table_shape == table

    @pytest.mark.parametrize("name", sorted(AUDIT))
    def test_chain_builds_and_connects(self, name):
        cfg = preset(name)
        net = Network(cfg)
        # every stage consumes exactly the previous stage's output size
        sizes = [net.n_in] + [s.n_out for s in net.stages]
        for stage, expect_in in zip(net.stages, sizes[:-1]):
            assert stage.n_in == expect_in

    def test_all_presets_listed(self):
        assert set(preset_names()) == set(AUDIT)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("resnet18")


class TestBuildAndInit:
    def test_shape_chain_violation_reports_layer(self):
        with pytest.raises(ConfigError) as err:
            parse_config("""
input 1x8x8
conv 4x5x5 3 0 1 relu
output 10x1x1 - - - -
""")
        assert "layer 0" in str(err.value)

    def test_seed_determinism_byte_for_byte(self):
        cfg = preset("mnist-cnn")
        _, p1 = build(cfg, seed=123)
        _, p2 = build(cfg, seed=123)
        assert p1.equal(p2)
        _, p3 = build(cfg, seed=124)
        assert not p1.equal(p3)

    def test_he_init_statistics(self):
        """Empirical variance of drawn means within 10% of 2/fan_in for
        large fan-in; variances set to exactly 2/fan_in."""
        cfg = parse_config("""
input 512x1x1
fc 256x1x1 - - - relu
output 10x1x1 - - - -
""")
        net, params = build(cfg, seed=0, dtype=np.float64)
        target = 2.0 / 512
        got = float(params[0].w_mean.var())
        assert abs(got - target) / target < 0.10
        assert np.all(params[0].w_var == np.float64(target))
        assert np.all(params[0].b_var == np.float64(target))
        assert np.all(params[0].b_mean == 0)

    def test_dtype_switch(self):
        cfg = preset("mnist-cnn")
        _, p32 = build(cfg, seed=0, dtype=np.float32)
        _, p64 = build(cfg, seed=0, dtype=np.float64)
        assert p32[0].w_mean.dtype == np.float32
        assert p64[0].w_mean.dtype == np.float64


class TestClassifyAndTargets:
    def test_dominant_mean_wins(self):
        z = GaussianVector(np.array([0.1, 5.0, 0.2]), np.ones(3))
        label, scores = classify(z)
        assert label == 1
        assert scores.argmax() == 1

    def test_tie_breaks_to_lowest_index(self):
        z = GaussianVector(np.array([2.0, 2.0, 1.0]), np.ones(3))
        label, _ = classify(z)
        assert label == 0

    def test_argmax_consistency_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            means = rng.normal(size=10)
            label, scores = classify(GaussianVector(means, np.ones(10)))
            best, best_i = -np.inf, -1
            for i, v in enumerate(means):
                if v > best:
                    best, best_i = v, i
            assert label == best_i
            assert scores.shape == (10,)
            assert scores.sum() == pytest.approx(1.0, rel=1e-9)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        means = rng.normal(size=10)
        l1, _ = classify(GaussianVector(means, np.ones(10)))
        l2, _ = classify(GaussianVector(means + 100.0, np.ones(10)))
        assert l1 == l2

    def test_encode_one_hot(self):
        t = encode_target(3, 10)
        assert t[3] == 1.0 and t.sum() == 1.0

    def test_encode_symmetry(self):
        a = encode_target(0, 2)
        b = encode_target(1, 2)
        np.testing.assert_array_equal(a, b[::-1])

    def test_round_trip(self):
        for label in range(10):
            t = encode_target(label, 10)
            got, _ = classify(GaussianVector(t, np.ones(10)))
            assert got == label

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            encode_target(10, 10)


class TestConfigFormat:
    def test_round_trip(self):
        cfg = preset("mnist-infogan-gnet")
        text = format_config(cfg)
        cfg2 = parse_config(text, output_kind=cfg.output_kind)
        assert [s.out_shape for s in cfg2.layers] == [s.out_shape for s in cfg.layers]
        assert [s.table_shape for s in cfg2.layers] == [s.table_shape for s in cfg.layers]
        assert cfg2.config_hash() == cfg.config_hash()

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("input 2x1x1\nmaxpool 2x1x1 2 0 2 -\noutput 1x1x1 - - - -")

    def test_unknown_activation_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("input 2x1x1\noutput 1x1x1 - - - softplus")

    def test_two_output_rows_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("""
input 2x1x1
output 2x1x1 - - - -
output 1x1x1 - - - -
""")

    def test_insert_normalization(self):
        cfg = insert_normalization(preset("mnist-cnn"), "layer")
        kinds = [s.kind for s in cfg.layers]
        assert kinds.count(LayerKind.LAYER_NORM) == 2
        # normalization lands right after each convolution row
        for i, s in enumerate(cfg.layers):
            if s.kind is LayerKind.LAYER_NORM:
                assert cfg.layers[i - 1].kind is LayerKind.CONV2D
        Network(cfg)  # compiles

    def test_norm_cannot_be_last(self):
        cfg = preset("mnist-cnn")
        from gmprop.layers import LayerSpec

        bad = parse_config("""
input 2x1x1
output 2x1x1 - - - -
""")
        bad.layers.append(LayerSpec(LayerKind.LAYER_NORM, (2, 1, 1)))
        with pytest.raises(ConfigError):
            Network(bad)
