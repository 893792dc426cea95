import numpy as np
import pytest

from aero_fusion.dataset import (AlignedPair, Column, DataSet, NormStats, SchemaError, STATE,
                                 RESPONSE, PASSTHROUGH, as_matrix, chunk_windows, concat_datasets,
                                 cyclic_block_assignment, cyclic_block_rows, denormalize,
                                 forrester_high, gen_synthetic, leave_half_out_rows, load_aligned,
                                 load_csv, mach_block_boundaries, mach_block_rows, normalize,
                                 reconstruct_from_windows, save_aligned, save_csv, save_schema,
                                 sliding_windows, split_cyclic_blocks, split_leave_half_out,
                                 split_mach_blocks)

__author__ = "aero_fusion developers"
__license__ = "mit"

STATE_NAMES = ["Ma", "alpha", "phi", "Dx", "Dy", "Dz"]


def _wind_schema():
    return [Column(name, STATE) for name in STATE_NAMES] + [Column("Cx", RESPONSE)]


def _write_wind_file(path, rng, n_rows=5):
    values = rng.normal(size=(n_rows, 7))
    lines = [",".join(STATE_NAMES + ["Cx"])]
    lines += [",".join(repr(float(value)) for value in row) for row in values]
    path.write_text("\n".join(lines) + "\n")
    return values


def _case(n_rows, offset=0.0, name=None):
    columns = [Column("x", STATE), Column("y", RESPONSE)]
    x = np.arange(n_rows, dtype=float) + offset
    return DataSet(columns, np.column_stack([x, x ** 2]), name=name)


def test_load_csv_with_wind_tunnel_header(tmp_path, rng):
    path = tmp_path / "wind.csv"
    values = _write_wind_file(path, rng)
    data = load_csv(path, _wind_schema())
    assert data.states.shape == (5, 6)
    assert data.responses.shape == (5, 1)
    assert data.state_names == STATE_NAMES
    np.testing.assert_array_equal(data.values, values)


def test_load_csv_reads_a_schema_sidecar(tmp_path, rng):
    path = tmp_path / "wind.csv"
    _write_wind_file(path, rng)
    schema_path = tmp_path / "wind.yml"
    save_schema(_wind_schema(), schema_path, fidelity="HF")
    data = load_csv(path, schema_path)
    assert data.fidelity == "HF"
    assert data.response_names == ["Cx"]


def test_load_csv_rejects_empty_body(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text(",".join(STATE_NAMES + ["Cx"]) + "\n")
    with pytest.raises(SchemaError, match="no data rows"):
        load_csv(path, _wind_schema())


def test_load_csv_rejects_missing_column(tmp_path, rng):
    path = tmp_path / "wind.csv"
    _write_wind_file(path, rng)
    schema = _wind_schema() + [Column("Cy", RESPONSE)]
    with pytest.raises(SchemaError, match="Cy"):
        load_csv(path, schema)


@pytest.mark.parametrize("cell", ["abc", "nan", "inf"])
def test_load_csv_reports_bad_cell_coordinates(tmp_path, cell):
    path = tmp_path / "bad.csv"
    path.write_text(f"x,y\n0.0,1.0\n1.0,{cell}\n")
    schema = [Column("x", STATE), Column("y", RESPONSE)]
    with pytest.raises(SchemaError, match=r"line 3, column 'y'"):
        load_csv(path, schema)


def test_save_load_round_trip_is_bit_exact(tmp_path, rng):
    columns = [Column("x", STATE), Column("y", RESPONSE), Column("Re", PASSTHROUGH)]
    data = DataSet(columns, rng.normal(size=(20, 3)) * np.array([1e-7, 1.0, 1e7]))
    path = tmp_path / "data.csv"
    save_csv(data, path)
    loaded = load_csv(path, columns)
    assert np.array_equal(loaded.values, data.values)


def test_dataset_schema_checks():
    with pytest.raises(SchemaError):
        Column("x", "target")
    with pytest.raises(SchemaError, match="precede"):
        DataSet([Column("y", RESPONSE), Column("x", STATE)], np.ones((2, 2)))
    with pytest.raises(SchemaError, match="Non-finite"):
        DataSet([Column("x", STATE), Column("y", RESPONSE)], [[0.0, np.nan]])


def test_one_dimensional_states_are_samples_of_one_column():
    x = np.linspace(0.0, 1.0, 5)
    pair = AlignedPair(states=x, y_low=np.sin(x), y_high=np.cos(x), state_names=["x"],
                       response_names=["y"])
    assert len(pair) == 5
    assert pair.states.shape == (5, 1)
    assert pair.delta.shape == (5, 1)
    with pytest.raises(SchemaError, match="response rows"):
        AlignedPair(states=x, y_low=np.ones(4), y_high=np.ones(4), state_names=["x"],
                    response_names=["y"])
    with pytest.raises(SchemaError, match="N x k"):
        as_matrix(np.ones((2, 2, 2)), "states")


def test_aligned_pair_round_trip(tmp_path, smooth_aligned):
    path = tmp_path / "aligned.csv"
    schema_path = tmp_path / "aligned.yml"
    save_aligned(smooth_aligned, path, schema_path)
    loaded = load_aligned(path, schema_path)
    assert np.array_equal(loaded.states, smooth_aligned.states)
    assert np.array_equal(loaded.y_low, smooth_aligned.y_low)
    assert np.array_equal(loaded.y_high, smooth_aligned.y_high)
    assert np.array_equal(loaded.observed_high, smooth_aligned.observed_high)
    assert loaded.response_names == ["y"]


@pytest.mark.parametrize("n_rows, length, stride, expected", [
    (5, 3, 1, [0, 1, 2]),
    (112, 112, 14, [0]),
    (11, 4, 3, [0, 3, 6, 7]),
])
def test_sliding_window_starts(n_rows, length, stride, expected):
    batch = sliding_windows(np.zeros((n_rows, 2)), length, stride)
    assert batch.starts.tolist() == expected
    assert batch.blocks.shape == (len(expected), length, 2)


def test_sliding_windows_reject_short_sequence():
    with pytest.raises(ValueError, match="Pad the sequence"):
        sliding_windows(np.zeros((3, 2)), 4, 1)


@pytest.mark.parametrize("n_rows", [16, 17, 40, 113])
@pytest.mark.parametrize("length, stride", [(16, 1), (16, 4), (16, 7), (16, 16)])
def test_windows_cover_every_row_and_reconstruct_exactly(n_rows, length, stride, rng):
    table = rng.normal(size=(n_rows, 3))
    batch = sliding_windows(table, length, stride)
    assert batch.starts.min() >= 0
    assert batch.starts.max() <= n_rows - length
    covered = np.zeros(n_rows, dtype=bool)
    for start in batch.starts:
        covered[start:start + length] = True
    assert covered.all()
    assert np.array_equal(reconstruct_from_windows(batch, batch.blocks), table)


def test_overlap_is_averaged():
    batch = sliding_windows(np.zeros((3, 1)), 2, 1)
    outputs = np.array([[[0.0], [1.0]], [[3.0], [0.0]]])
    reconstructed = reconstruct_from_windows(batch, outputs)
    assert reconstructed[1, 0] == 2.0


def test_reconstruction_conserves_the_window_sum(rng):
    batch = sliding_windows(np.zeros((23, 1)), 8, 3)
    outputs = rng.normal(size=(len(batch), 8, 2))
    reconstructed = reconstruct_from_windows(batch, outputs)
    count = np.zeros((23, 1))
    for start in batch.starts:
        count[start:start + 8] += 1
    np.testing.assert_allclose((count * reconstructed).sum(axis=0), outputs.sum(axis=(0, 1)),
                               rtol=1e-12)


def test_chunk_windows_pad_the_tail():
    table = np.arange(10.0).reshape(-1, 1)
    batch = chunk_windows(table, 4)
    assert batch.starts.tolist() == [0, 4, 8]
    assert batch.padded
    np.testing.assert_array_equal(batch.blocks[-1, :, 0], [8, 9, 9, 9])
    assert np.array_equal(reconstruct_from_windows(batch, batch.blocks), table)


def test_leave_half_out_sizes():
    cases = [_case(100, offset=100.0 * i) for i in range(3)]
    train, test = split_leave_half_out(cases, 1)
    assert len(train) == 250
    assert len(test) == 50
    np.testing.assert_array_equal(test.states[:, 0], np.arange(150.0, 200.0))


def test_leave_half_out_is_disjoint_for_identical_cases():
    train_rows, test_rows = leave_half_out_rows([40, 40], target_case=0)
    assert not set(train_rows) & set(test_rows)
    assert sorted(np.concatenate([train_rows, test_rows]).tolist()) == list(range(80))


def test_leave_half_out_odd_case_uses_ceiling():
    train_rows, test_rows = leave_half_out_rows([101, 10], target_case=0)
    assert np.sum(train_rows < 101) == 51
    assert len(test_rows) == 50


def test_leave_half_out_by_name_and_missing_target():
    cases = [_case(10, name="case_a"), _case(10, name="case_b")]
    train, test = split_leave_half_out(cases, "case_b")
    assert len(train) == 15
    with pytest.raises(ValueError, match="not found"):
        split_leave_half_out(cases, "case_c")
    with pytest.raises(ValueError):
        split_leave_half_out(cases, 2)


def test_cyclic_assignment_sends_every_fifth_block_to_test():
    is_test = cyclic_block_assignment(10, "4:1")
    assert np.flatnonzero(is_test).tolist() == [4, 9]


def test_mach_without_jumps_is_rejected():
    mach = np.linspace(0.5, 0.6, 50)
    with pytest.raises(ValueError, match="1 block"):
        mach_block_rows(mach)


def test_mach_block_boundaries_match_construction(rng):
    lengths = rng.integers(5, 15, size=10)
    mach = np.concatenate([0.4 + 0.1 * i_block + 0.001 * np.arange(length)
                           for i_block, length in enumerate(lengths)])
    expected = np.cumsum(lengths)[:-1].tolist()
    assert mach_block_boundaries(mach) == expected

    train_rows, test_rows = mach_block_rows(mach, ratio=(4, 1))
    test_blocks = {int(np.searchsorted(expected, row, side="right")) for row in test_rows}
    assert test_blocks == {4, 9}
    assert sorted(np.concatenate([train_rows, test_rows]).tolist()) == list(range(len(mach)))


def test_split_mach_blocks_finds_the_mach_column():
    mach = np.repeat(np.arange(5) * 0.1 + 0.5, 4)
    columns = [Column("Ma", STATE), Column("Cp", RESPONSE)]
    data = DataSet(columns, np.column_stack([mach, np.zeros_like(mach)]))
    train, test = split_mach_blocks(data)
    assert len(train) == 16
    np.testing.assert_allclose(test.column("Ma"), 0.9)


def test_cyclic_blocks_partition_the_rows():
    train_rows, test_rows = cyclic_block_rows(103, n_blocks=10, ratio="4:1")
    assert not set(train_rows) & set(test_rows)
    assert len(train_rows) + len(test_rows) == 103
    train, test = split_cyclic_blocks(_case(103))
    assert len(test) == len(test_rows)


def test_concat_requires_equal_schemas():
    first = _case(3)
    other = DataSet([Column("x", STATE), Column("z", RESPONSE)], np.ones((2, 2)))
    assert len(concat_datasets([first, first])) == 6
    with pytest.raises(SchemaError):
        concat_datasets([first, other])


def test_smooth_generator_value_at_zero():
    low, high = gen_synthetic("smooth", n_lf=40, n_hf=10)
    assert high.responses[0, 0] == pytest.approx(3.02721, abs=1e-5)
    assert forrester_high(0.0) == pytest.approx(4 * np.sin(-4.0))
    assert low.fidelity == "LF"
    assert high.fidelity == "HF"


def test_generator_is_deterministic():
    first = gen_synthetic("shock", n_lf=50, n_hf=10, noise=0.1, seed=3)
    second = gen_synthetic("shock", n_lf=50, n_hf=10, noise=0.1, seed=3)
    for one, two in zip(first, second):
        assert np.array_equal(one.values, two.values)


def test_generator_adds_noise_to_high_fidelity_only():
    clean_low, clean_high = gen_synthetic("smooth", n_lf=50, n_hf=10, noise=0.0)
    noisy_low, noisy_high = gen_synthetic("smooth", n_lf=50, n_hf=10, noise=0.1)
    assert np.array_equal(clean_low.values, noisy_low.values)
    assert not np.array_equal(clean_high.values, noisy_high.values)


def test_generator_rejects_bad_arguments():
    with pytest.raises(ValueError, match="Please pick one of"):
        gen_synthetic("vortex")
    with pytest.raises(ValueError):
        gen_synthetic("smooth", n_lf=10, n_hf=20)


def _residual(kind, n_rows=400):
    low, high = gen_synthetic(kind, n_lf=n_rows, n_hf=n_rows)
    return high.responses[:, 0] - low.responses[:, 0]


def test_smooth_residual_has_bounded_second_differences():
    delta = _residual("smooth")
    x = np.linspace(0.0, 1.0, 400)
    expected = 0.5 * forrester_high(x) - 10 * (x - 0.5) + 5
    np.testing.assert_allclose(delta, expected, atol=1e-12)
    assert np.max(np.abs(np.diff(delta, n=2))) < 0.05


def test_shock_residual_has_a_sharp_front():
    steps = np.abs(np.diff(_residual("shock")))
    assert steps.max() > 10 * np.median(steps)


def test_shock_residual_vanishes_away_from_the_front():
    delta = _residual("shock")
    x = np.linspace(0.0, 1.0, 400)
    far = (x < 0.25) | (x > 0.85)
    np.testing.assert_allclose(delta[far], 0.0, atol=1e-5)
    assert np.abs(delta).max() > 0.5


def test_normalize_training_rows(rng):
    values = rng.normal(loc=5.0, scale=3.0, size=(50, 3))
    stats = NormStats.from_values(values)
    scaled = normalize(values, stats)
    np.testing.assert_allclose(scaled.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(scaled.var(axis=0), 1.0, atol=1e-12)
    assert np.max(np.abs(denormalize(scaled, stats) - values)) < 1e-12


def test_constant_column_is_left_untouched(caplog):
    values = np.column_stack([np.full(5, 2.5), np.arange(5.0)])
    stats = NormStats.from_values(values, names=["const", "ramp"])
    assert "const" in caplog.text
    np.testing.assert_array_equal(normalize(values, stats)[:, 0], 2.5)


def test_normalize_keeps_the_dataset_schema(rng):
    data = _case(10)
    stats = NormStats.from_values(data.values)
    scaled = normalize(data, stats)
    assert isinstance(scaled, DataSet)
    assert scaled.column_names == data.column_names


def test_stats_do_not_depend_on_test_rows(rng):
    values = rng.normal(size=(100, 2))
    train_rows, test_rows = cyclic_block_rows(100)
    before = NormStats.from_values(values[train_rows])
    values[test_rows] = 1e6
    after = NormStats.from_values(values[train_rows])
    assert np.array_equal(before.mean, after.mean)
    assert np.array_equal(before.std, after.std)
