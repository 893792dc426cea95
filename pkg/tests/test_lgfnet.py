import numpy as np
import pytest

from aero_fusion.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from aero_fusion.dataset import NormStats
from aero_fusion.layers import sinusoidal_table
from aero_fusion.lgfnet import (ArchConfig, LGFNetModel, PARAMETER_GROUPS, fgdl_loss,
                                fuse_inference, window_table)
from aero_fusion.tensor import ShapeError, Tensor, backward, mul, sum_all
from aero_fusion.training import OptimizerState, adam_step

__author__ = "aero_fusion developers"
__license__ = "mit"

SCENARIO_1 = [32, 64, 128, 256, 512]
SCENARIO_2 = [8, 16, 32, 64, 128]


def _model(arch, seed=42):
    return LGFNetModel(arch, seed=seed)


def _softmax(values):
    exponent = np.exp(values - values.max(axis=-1, keepdims=True))
    return exponent / exponent.sum(axis=-1, keepdims=True)


@pytest.mark.parametrize("kwargs, message", [
    (dict(channels=[8, 16, 32]), "5 channel counts"),
    (dict(channels=[8, 16, 32, 64, 100]), "double"),
    (dict(window_length=100), "multiple of 16"),
    (dict(stride=0), "Stride"),
    (dict(heads=3, input_width=8), "do not divide"),
    (dict(dropout=1.0), "Dropout"),
])
def test_invalid_architectures_are_rejected(kwargs, message):
    with pytest.raises(ValueError, match=message):
        ArchConfig(**kwargs)


def test_ablation_presets():
    arch = ArchConfig.from_ablation("no_sw_att")
    assert not arch.use_sliding_window and not arch.use_attention
    assert arch.ablation == "no_sw_att"
    assert ArchConfig().ablation == "full"
    with pytest.raises(ValueError, match="Please pick one of"):
        ArchConfig.from_ablation("no_conv")


def test_width_must_be_known_before_building():
    with pytest.raises(ValueError, match="feature width"):
        LGFNetModel(ArchConfig())


def test_scenario_1_bottleneck_shape(rng):
    model = _model(ArchConfig(channels=SCENARIO_1, input_width=8))
    bottleneck, skips = model.spl_forward(Tensor(rng.normal(size=(2, 1, 112, 8))))
    assert bottleneck.shape == (2, 512, 7, 8)
    assert [skip.shape for skip in skips] == [(2, 32, 112, 8), (2, 64, 56, 8), (2, 128, 28, 8),
                                              (2, 256, 14, 8)]


@pytest.mark.slow
def test_scenario_1_output_shape(rng):
    model = _model(ArchConfig(channels=SCENARIO_1, input_width=8)).eval()
    assert model(rng.normal(size=(1, 112, 8))).shape == (1, 1, 112, 1)


def test_scenario_2_shapes(rng):
    model = _model(ArchConfig(channels=SCENARIO_2, input_width=8))
    x = Tensor(rng.normal(size=(2, 1, 112, 8)))
    bottleneck, _ = model.spl_forward(x)
    assert bottleneck.shape == (2, 128, 7, 8)
    assert model(x).shape == (2, 1, 112, 1)


def test_input_shape_is_checked(tiny_arch, rng):
    model = _model(tiny_arch)
    with pytest.raises(ShapeError, match="does not match"):
        model.spl_forward(Tensor(rng.normal(size=(2, 1, 32, 2))))


def test_zero_input_gives_zero_bottleneck(tiny_arch):
    model = _model(tiny_arch)
    bottleneck, _ = model.spl_forward(Tensor(np.zeros((2, 1, 16, 2))))
    assert not np.any(bottleneck.data)


def test_zero_query_and_key_give_uniform_attention(tiny_arch, rng):
    model = _model(tiny_arch).eval()
    model.projections["query"].data[...] = 0.0
    model.projections["key"].data[...] = 0.0
    bottleneck = Tensor(rng.normal(size=(2, 32, 1, 2)))
    out = model.rrl_forward(bottleneck)
    np.testing.assert_allclose(model.last_attention, 1 / 32, atol=1e-15)

    tokens = bottleneck.data.reshape(2, 32, 2) + sinusoidal_table(32, 2)
    value = tokens @ model.projections["value"].data
    attended = value.mean(axis=1, keepdims=True) @ model.projections["output"].data
    expected = bottleneck.data + np.broadcast_to(attended, (2, 32, 2)).reshape(2, 32, 1, 2)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_zero_output_projection_is_a_passthrough(tiny_arch, rng):
    model = _model(tiny_arch).eval()
    model.projections["output"].data[...] = 0.0
    bottleneck = Tensor(rng.normal(size=(2, 32, 1, 2)))
    assert np.array_equal(model.rrl_forward(bottleneck).data, bottleneck.data)


def test_three_token_attention_matches_hand_computation(tiny_arch, rng):
    model = _model(tiny_arch).eval()
    bottleneck = Tensor(rng.normal(size=(1, 3, 1, 2)))
    model.rrl_forward(bottleneck)

    tokens = bottleneck.data.reshape(3, 2) + sinusoidal_table(3, 2)
    query = tokens @ model.projections["query"].data
    key = tokens @ model.projections["key"].data
    expected = _softmax(query @ key.T / np.sqrt(2))
    attention = model.last_attention[0, 0]
    assert attention.shape == (3, 3)
    np.testing.assert_allclose(attention, expected, atol=1e-12)
    np.testing.assert_allclose(attention.sum(axis=-1), 1.0, atol=1e-12)


def test_attention_rows_are_stochastic(rng):
    arch = ArchConfig(channels=[2, 4, 8, 16, 32], window_length=32, stride=4, heads=2,
                      dropout=0.0, input_width=4)
    model = _model(arch)
    model(rng.normal(size=(3, 32, 4)))
    assert model.last_attention.shape == (3, 2, 64, 64)
    assert np.all(model.last_attention >= 0)
    np.testing.assert_allclose(model.last_attention.sum(axis=-1), 1.0, atol=1e-12)


def test_disabled_attention_is_the_identity(tiny_arch, rng):
    tiny_arch.use_attention = False
    model = _model(tiny_arch)
    bottleneck = Tensor(rng.normal(size=(2, 32, 1, 2)))
    assert model.rrl_forward(bottleneck) is bottleneck
    assert model.parameter_groups()["rrl"] == []


def test_disabled_sliding_window_cuts_chunks(tiny_arch):
    table = np.zeros((40, 2))
    assert window_table(table, tiny_arch).starts.tolist() == list(range(0, 25, 4))
    tiny_arch.use_sliding_window = False
    assert window_table(table, tiny_arch).starts.tolist() == [0, 16, 32]


def _zero_skips(batch, arch):
    return [Tensor(np.zeros((batch, channels, arch.window_length // 2 ** i_stage, 2)))
            for i_stage, channels in enumerate(arch.channels[:4])]


def test_zero_decoder_input_gives_zero_output(tiny_arch):
    model = _model(tiny_arch)
    out = model.fsl_forward(Tensor(np.zeros((2, 32, 1, 2))), _zero_skips(2, tiny_arch))
    assert out.shape == (2, 1, 16, 1)
    assert not np.any(out.data)


def test_skip_mismatch_names_the_stage(tiny_arch):
    model = _model(tiny_arch)
    skips = _zero_skips(2, tiny_arch)
    skips[2] = Tensor(np.zeros((2, 8, 3, 2)))
    with pytest.raises(ShapeError, match="Decoder stage 2"):
        model.fsl_forward(Tensor(np.zeros((2, 32, 1, 2))), skips)


def test_decoder_weight_gradient(tiny_arch, rng, finite_difference, gradient_error):
    model = _model(tiny_arch)
    features = Tensor(rng.normal(size=(2, 32, 1, 2)))
    skips = [Tensor(rng.normal(size=skip.shape)) for skip in _zero_skips(2, tiny_arch)]
    projection = Tensor(rng.normal(size=(2, 1, 16, 1)))
    weight = model.decoder[-1].weights[0]
    assert weight.name == "fsl.stage1.conv1.weight"

    def forward():
        return sum_all(mul(model.fsl_forward(features, skips), projection))

    (grad,) = backward(forward(), [weight])
    # check a single 3x3 kernel
    numeric = finite_difference(lambda: forward().item(), weight.data[0, 0])
    assert gradient_error(grad[0, 0], numeric) < 1e-4


def test_fgdl_loss_examples(rng):
    target = rng.normal(size=(2, 1, 16, 1))
    assert fgdl_loss(Tensor(target), target).item() == 0.0
    assert fgdl_loss(Tensor(target + 0.5), target).item() == pytest.approx(0.25, abs=1e-15)
    prediction = rng.normal(size=target.shape)
    reference = np.mean((prediction - target) ** 2)
    assert fgdl_loss(Tensor(prediction), target).item() == pytest.approx(reference, abs=1e-12)
    with pytest.raises(ShapeError, match="fgdl_loss"):
        fgdl_loss(Tensor(prediction), target[:, :, :8])


def test_every_subnetwork_receives_gradient(tiny_arch, rng):
    model = _model(tiny_arch)
    params = model.parameters()
    before = {param.name: param.data.copy() for param in params}
    loss = fgdl_loss(model(rng.normal(size=(4, 16, 2))), rng.normal(size=(4, 1, 16, 1)))
    adam_step(OptimizerState.create(params, 1e-3), params, backward(loss, params))
    for group, group_params in model.parameter_groups().items():
        assert group in PARAMETER_GROUPS
        assert any(not np.array_equal(param.data, before[param.name])
                   for param in group_params), f"no change in {group}"


def test_parameter_count_depends_on_the_architecture_only(tiny_arch):
    assert _model(tiny_arch, seed=1).count_parameters() == \
        _model(tiny_arch, seed=2).count_parameters()
    full = _model(tiny_arch).count_parameters()
    tiny_arch.use_attention = False
    assert _model(tiny_arch).count_parameters() == full - 4 * 2 * 2


def test_same_seed_gives_identical_output(tiny_arch, rng):
    windows = rng.normal(size=(3, 16, 2))
    first = _model(tiny_arch, seed=5)(windows).data
    second = _model(tiny_arch, seed=5)(windows).data
    assert np.array_equal(first, second)


def test_zeroed_head_returns_the_low_fidelity_response(tiny_arch, rng):
    model = _model(tiny_arch)
    model.zero_head()
    states = np.linspace(0.0, 1.0, 40).reshape(-1, 1)
    y_low = np.sin(6 * states)
    result = fuse_inference(model, states, y_low)
    assert np.array_equal(result.fused, y_low)
    assert not np.any(result.delta)


def test_fusion_is_an_exact_superposition(tiny_arch, rng):
    model = _model(tiny_arch)
    model.residual_stats = NormStats(mean=np.array([0.3]), std=np.array([2.0]))
    states = rng.uniform(size=(37, 1))
    y_low = rng.normal(size=(37, 1))
    result = fuse_inference(model, states, y_low)
    assert result.fused.shape == (37, 1)
    assert np.array_equal(result.fused, y_low + result.delta)


def test_one_dimensional_states_are_read_as_rows(tiny_arch, rng):
    model = _model(tiny_arch)
    x = np.linspace(0.0, 1.0, 40)
    y_low = rng.normal(size=40)
    flat = fuse_inference(model, x, y_low)
    column = fuse_inference(model, x.reshape(-1, 1), y_low.reshape(-1, 1))
    assert flat.fused.shape == (40, 1)
    assert np.array_equal(flat.fused, column.fused)


def test_short_sequence_is_rejected(tiny_arch):
    model = _model(tiny_arch)
    with pytest.raises(ValueError, match="Pad the sequence"):
        fuse_inference(model, np.zeros((10, 1)), np.zeros((10, 1)))


def test_checkpoint_round_trip_is_bit_reproducible(tiny_arch, rng, tmp_path):
    model = _model(tiny_arch, seed=9)
    model(rng.normal(size=(3, 16, 2)))
    model.input_stats = NormStats(mean=np.array([0.5, -1.0]), std=np.array([0.2, 3.0]))
    states = rng.uniform(size=(30, 1))
    y_low = rng.normal(size=(30, 1))
    expected = fuse_inference(model, states, y_low).fused

    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert not loaded.training
    assert np.array_equal(fuse_inference(loaded, states, y_low).fused, expected)

    copy = tmp_path / "copy.ckpt"
    save_checkpoint(loaded, copy)
    assert path.read_bytes() == copy.read_bytes()


def test_foreign_file_is_not_a_checkpoint(tmp_path):
    path = tmp_path / "model.ckpt"
    path.write_text("x,y\n0,1\n")
    with pytest.raises(CheckpointError, match="not a model checkpoint"):
        load_checkpoint(path)


def test_parameters_carry_their_subnetwork_prefix(tiny_arch):
    names = [name for name, _ in _model(tiny_arch).named_parameters()]
    assert len(names) == len(set(names))
    assert all(name.split(".")[0] in PARAMETER_GROUPS for name in names)
    assert "rrl.query" in names
