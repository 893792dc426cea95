"""
Data sets, windows, splits and synthetic benchmarks

A :class:`DataSet` is a numeric table whose columns carry a role: *state* columns hold the
aerodynamic state vector x (Mach number, angle of attack, chord position, ...), *response*
columns hold the measured or simulated quantity y and *passthrough* columns (Reynolds number,
case labels) are carried along without being used by the model. State columns always come first.

CSV is the only on-disk format. Values are written with 17 significant digits so a
save/load round trip is bit exact. The column roles are described by a YAML schema sidecar::

    fidelity: LF
    columns:
      - name: Ma
        role: state
      - name: Cx
        role: response
        unit: "-"
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml
import yamlloader

from aero_fusion.labels import ColumnLabels

logger = logging.getLogger(__name__)

STATE = "state"
RESPONSE = "response"
PASSTHROUGH = "passthrough"
ROLES = (STATE, RESPONSE, PASSTHROUGH)

LOW_FIDELITY = "LF"
HIGH_FIDELITY = "HF"
FIDELITIES = (LOW_FIDELITY, HIGH_FIDELITY)

FLOAT_FORMAT = "%.17g"
SYNTHETIC_KINDS = ("smooth", "shock")
MACH_NAMES = ("ma", "mach")


class SchemaError(ValueError):
    """Raised when a table does not match its schema"""


def as_matrix(values, what="values"):
    """
    Float64 copy of *values* as an N x k matrix

    A 1-D vector holds N samples of a single column, never one sample of N columns
    """
    matrix = np.array(values, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2:
        raise SchemaError(f"The {what} must form an N x k matrix, got shape {matrix.shape}")
    return matrix


@dataclass
class Column:
    name: str
    role: str = STATE
    unit: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"Role '{self.role}' of column '{self.name}' is not one of {ROLES}")


def order_columns(columns):
    """Put state columns first, then responses, then passthrough columns"""
    return [column for role in ROLES for column in columns if column.role == role]


class DataSet:
    """
    Table of state vectors and responses of one fidelity

    Parameters
    ----------
    columns: list of Column
        The schema. Must list state columns before response columns and passthrough columns last
    values: array_like
        N x (p + q [+ passthrough]) matrix of finite values
    fidelity: str
        Either "LF" or "HF"
    name: str or None
        Optional label, used to identify cases in the leave-half-out split
    """

    def __init__(self, columns, values, fidelity=LOW_FIDELITY, name=None):
        self.columns = list(columns)
        self.values = np.array(values, dtype=np.float64, ndmin=2)
        self.fidelity = fidelity
        self.name = name

        if fidelity not in FIDELITIES:
            raise SchemaError(f"Fidelity must be one of {FIDELITIES}, got {fidelity}")
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise SchemaError(f"Table of shape {self.values.shape} does not match the "
                              f"{len(self.columns)} columns of the schema")
        if order_columns(self.columns) != self.columns:
            raise SchemaError("State columns must precede response columns, passthrough "
                              "columns come last")
        if not self.state_names or not self.response_names:
            raise SchemaError("A data set needs at least one state and one response column")
        if not np.all(np.isfinite(self.values)):
            row, col = np.argwhere(~np.isfinite(self.values))[0]
            raise SchemaError(f"Non-finite value at row {row}, column '{self.columns[col].name}'")

    def __len__(self):
        return self.values.shape[0]

    def __repr__(self):
        return (f"DataSet(name={self.name}, fidelity={self.fidelity}, rows={len(self)}, "
                f"states={self.state_names}, responses={self.response_names})")

    def _names(self, role):
        return [column.name for column in self.columns if column.role == role]

    @property
    def column_names(self):
        return [column.name for column in self.columns]

    @property
    def state_names(self):
        return self._names(STATE)

    @property
    def response_names(self):
        return self._names(RESPONSE)

    @property
    def states(self):
        return self.values[:, :len(self.state_names)]

    @property
    def responses(self):
        n_states = len(self.state_names)
        return self.values[:, n_states:n_states + len(self.response_names)]

    def column(self, name):
        try:
            index = self.column_names.index(name)
        except ValueError:
            raise KeyError(f"Column '{name}' not found. Please pick one of: {self.column_names}")
        return self.values[:, index]

    def subset(self, rows):
        return DataSet(self.columns, self.values[np.asarray(rows, dtype=int)],
                       fidelity=self.fidelity, name=self.name)

    def to_frame(self):
        return pd.DataFrame(self.values, columns=self.column_names)


def concat_datasets(datasets, name=None):
    """Stack the rows of data sets sharing one schema"""
    first = datasets[0]
    for dataset in datasets[1:]:
        if dataset.columns != first.columns:
            raise SchemaError(f"Cannot stack {dataset} onto {first}: schemas differ")
    values = np.concatenate([dataset.values for dataset in datasets], axis=0)
    return DataSet(first.columns, values, fidelity=first.fidelity, name=name)


def load_schema(path):
    """
    Read a YAML schema sidecar

    Returns
    -------
    tuple:
        (list of Column, fidelity or None)
    """
    with open(path, "r", encoding="utf-8") as stream:
        settings = yaml.load(stream=stream, Loader=yamlloader.ordereddict.CSafeLoader)
    try:
        column_items = settings["columns"]
    except (KeyError, TypeError):
        raise SchemaError(f"Schema file {path} needs a 'columns' section")

    columns = list()
    if isinstance(column_items, dict):
        # short form: name: role
        for name, role in column_items.items():
            if isinstance(role, dict):
                columns.append(Column(name=name, role=role.get("role", STATE),
                                      unit=role.get("unit", "")))
            else:
                columns.append(Column(name=name, role=role))
    else:
        for item in column_items:
            columns.append(Column(name=item["name"], role=item.get("role", STATE),
                                  unit=item.get("unit", "")))
    return columns, settings.get("fidelity")


def save_schema(columns, path, fidelity=None):
    settings = dict()
    if fidelity is not None:
        settings["fidelity"] = fidelity
    settings["columns"] = [{"name": column.name, "role": column.role, "unit": column.unit}
                           for column in columns]
    with open(path, "w", encoding="utf-8") as stream:
        yaml.dump(settings, stream, sort_keys=False)


def load_csv(path, schema, fidelity=None, name=None):
    """
    Read a CSV file into a :class:`DataSet`

    Parameters
    ----------
    path: str or Path
        The CSV file, with a header row, comma separated and '.' as decimal sign
    schema: list of Column or str or Path
        The columns to read, or the path of a YAML schema sidecar
    fidelity: str or None
        Fidelity tag. If None, it is taken from the schema file and defaults to "LF"
    name: str or None
        Name given to the data set

    Returns
    -------
    DataSet:
        The parsed table with its rows in file order
    """
    schema_fidelity = None
    if not isinstance(schema, (list, tuple)):
        schema, schema_fidelity = load_schema(schema)
    columns = order_columns(schema)
    fidelity = fidelity or schema_fidelity or LOW_FIDELITY

    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    missing = [column.name for column in columns if column.name not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}; header has "
                          f"{list(frame.columns)}")
    extra = [name for name in frame.columns if name not in [c.name for c in columns]]
    if extra:
        logger.warning(f"{path}: ignoring column(s) not in the schema: {extra}")
    if frame.empty:
        raise SchemaError(f"{path}: the file has a header but no data rows")

    values = np.empty((len(frame), len(columns)))
    for i_col, column in enumerate(columns):
        cells = frame[column.name].to_numpy(dtype=object)
        for i_row, cell in enumerate(cells):
            try:
                value = float(cell)
            except ValueError:
                # line numbers count the header as line 1
                raise SchemaError(f"{path}: non-numeric cell '{cell}' at line {i_row + 2}, "
                                  f"column '{column.name}'")
            if not math.isfinite(value):
                raise SchemaError(f"{path}: non-finite value '{cell}' at line {i_row + 2}, "
                                  f"column '{column.name}'")
            values[i_row, i_col] = value

    logger.debug(f"Read {len(frame)} rows from {path}")
    return DataSet(columns, values, fidelity=fidelity, name=name)


def save_csv(dataset, path):
    """Write a data set with full precision so that loading it back is bit exact"""
    dataset.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT,
                              lineterminator="\n")


@dataclass
class AlignedPair:
    """
    Low and high fidelity responses on one shared state grid

    The ground-truth fidelity gap ``delta = y_high - y_low`` is computed on construction.
    *observed_low* and *observed_high* flag the rows whose value was measured in that source
    rather than interpolated.
    """
    states: np.ndarray
    y_low: np.ndarray
    y_high: np.ndarray
    state_names: list
    response_names: list
    observed_low: np.ndarray = None
    observed_high: np.ndarray = None
    delta: np.ndarray = field(init=False)

    def __post_init__(self):
        self.states = as_matrix(self.states, "states")
        self.y_low = as_matrix(self.y_low, "low fidelity responses")
        self.y_high = as_matrix(self.y_high, "high fidelity responses")
        if self.y_low.shape != self.y_high.shape:
            raise SchemaError(f"Low fidelity {self.y_low.shape} and high fidelity "
                              f"{self.y_high.shape} responses differ in shape")
        if len(self.y_low) != len(self.states):
            raise SchemaError(f"Got {len(self.states)} states but {len(self.y_low)} response rows")
        if self.observed_low is None:
            self.observed_low = np.ones(len(self.states), dtype=bool)
        if self.observed_high is None:
            self.observed_high = np.ones(len(self.states), dtype=bool)
        self.delta = self.y_high - self.y_low

    def __len__(self):
        return self.states.shape[0]

    @property
    def table(self):
        """The network input [x, y_L] as an N x (p + q) matrix"""
        return np.hstack([self.states, self.y_low])

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        return AlignedPair(states=self.states[rows], y_low=self.y_low[rows],
                           y_high=self.y_high[rows], state_names=list(self.state_names),
                           response_names=list(self.response_names),
                           observed_low=self.observed_low[rows],
                           observed_high=self.observed_high[rows])

    def to_frame(self):
        labels = ColumnLabels(self.response_names)
        blocks = [self.states, self.y_low, self.y_high, self.delta]
        names = (list(self.state_names) + labels.aligned_columns())
        frame = pd.DataFrame(np.hstack(blocks), columns=names)
        frame[labels.observed_low] = self.observed_low.astype(int)
        frame[labels.observed_high] = self.observed_high.astype(int)
        return frame

    def columns(self):
        """Schema of the aligned table: the states and one response per fidelity label"""
        return ([Column(name, STATE) for name in self.state_names]
                + [Column(name, RESPONSE) for name in self.response_names])


def save_aligned(aligned, path, schema_path=None):
    """Write the aligned pair as CSV, with the state and response names in a schema sidecar"""
    aligned.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    if schema_path is not None:
        save_schema(aligned.columns(), schema_path)


def load_aligned(path, schema):
    """
    Read an aligned pair written by :func:`save_aligned`

    Parameters
    ----------
    path: str or Path
        The aligned CSV file
    schema: str or Path or list of Column
        The schema sidecar, or its columns
    """
    if not isinstance(schema, (list, tuple)):
        schema, _ = load_schema(schema)
    state_names = [column.name for column in schema if column.role == STATE]
    response_names = [column.name for column in schema if column.role == RESPONSE]
    labels = ColumnLabels(response_names)
    frame = pd.read_csv(path, float_precision="round_trip")
    needed = (state_names + labels.per_response(labels.low) + labels.per_response(labels.high))
    missing = [name for name in needed if name not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing aligned column(s) {missing}")
    observed = dict()
    for label in (labels.observed_low, labels.observed_high):
        observed[label] = (frame[label].to_numpy(dtype=bool) if label in frame.columns
                           else None)
    return AlignedPair(states=frame[state_names].to_numpy(dtype=np.float64),
                       y_low=frame[labels.per_response(labels.low)].to_numpy(dtype=np.float64),
                       y_high=frame[labels.per_response(labels.high)].to_numpy(dtype=np.float64),
                       state_names=state_names, response_names=response_names,
                       observed_low=observed[labels.observed_low],
                       observed_high=observed[labels.observed_high])


@dataclass
class NormStats:
    """Per-column mean and standard deviation, computed on training rows only"""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, width):
        return cls(mean=np.zeros(width), std=np.ones(width))

    @classmethod
    def from_values(cls, values, names=None):
        """
        Compute the statistics of the columns of *values*

        Constant columns get a zero mean and unit deviation, so they pass normalization untouched
        """
        values = as_matrix(values)
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        constant = std == 0
        if np.any(constant):
            labels = np.arange(values.shape[1]) if names is None else np.asarray(names)
            logger.warning(f"Constant column(s) {list(labels[constant])} are left untouched by "
                           f"the normalization")
            mean = np.where(constant, 0.0, mean)
            std = np.where(constant, 1.0, std)
        return cls(mean=mean, std=std)


def _apply_to(data, function):
    if isinstance(data, DataSet):
        return DataSet(data.columns, function(data.values), fidelity=data.fidelity,
                       name=data.name)
    return function(np.asarray(data, dtype=np.float64))


def normalize(data, stats):
    """Z-score every column of *data* (a DataSet or an array) with *stats*"""
    return _apply_to(data, lambda values: (values - stats.mean) / stats.std)


def denormalize(data, stats):
    """Inverse of :func:`normalize`"""
    return _apply_to(data, lambda values: values * stats.std + stats.mean)


@dataclass
class WindowBatch:
    """
    Stack of windows cut from a sequence

    Attributes
    ----------
    blocks: np.ndarray
        K x L x d array with the windows
    starts: np.ndarray
        Start row of every window
    window_length: int
        L
    stride: int
        Distance between consecutive starts
    source_length: int
        Number of rows N of the original table
    padded: bool
        True for the non-overlapping chunks whose tail was padded past row N
    """
    blocks: np.ndarray
    starts: np.ndarray
    window_length: int
    stride: int
    source_length: int
    padded: bool = False

    def __len__(self):
        return len(self.starts)


def _check_window_arguments(n_rows, window_length, stride):
    if window_length < 1 or stride < 1:
        raise ValueError(f"Window length ({window_length}) and stride ({stride}) must be >= 1")
    if n_rows < window_length:
        raise ValueError(f"The sequence has {n_rows} rows, fewer than the window length "
                         f"{window_length}. Pad the sequence or reduce the window length")


def sliding_windows(table, window_length, stride):
    """
    Cut overlapping windows ``table[s:s + L]`` with starts 0, S, 2S, ...

    If the strides do not tile the table, one extra window starting at N - L is appended so the
    last rows are covered as well.
    """
    table = as_matrix(table, "table")
    n_rows = table.shape[0]
    _check_window_arguments(n_rows, window_length, stride)
    starts = list(range(0, n_rows - window_length + 1, stride))
    if (n_rows - window_length) % stride != 0:
        starts.append(n_rows - window_length)
    starts = np.asarray(starts, dtype=int)
    blocks = np.stack([table[start:start + window_length] for start in starts])
    return WindowBatch(blocks=blocks, starts=starts, window_length=window_length, stride=stride,
                       source_length=n_rows)


def chunk_windows(table, window_length):
    """
    Cut non-overlapping windows of length L

    The table is padded by repeating its last row until its length is a multiple of L
    """
    table = as_matrix(table, "table")
    n_rows = table.shape[0]
    _check_window_arguments(n_rows, window_length, window_length)
    n_chunks = -(-n_rows // window_length)
    padding = n_chunks * window_length - n_rows
    padded = np.pad(table, ((0, padding), (0, 0)), mode="edge")
    starts = np.arange(n_chunks, dtype=int) * window_length
    blocks = padded.reshape(n_chunks, window_length, table.shape[1])
    return WindowBatch(blocks=blocks, starts=starts, window_length=window_length,
                       stride=window_length, source_length=n_rows, padded=padding > 0)


def reconstruct_from_windows(batch, window_outputs):
    """
    Average the window outputs back onto the rows of the source table

    Parameters
    ----------
    batch: WindowBatch
        The windows the outputs belong to
    window_outputs: array_like
        K x L x d_y outputs, one block per window

    Returns
    -------
    np.ndarray:
        N x d_y matrix; every row is the mean of all window outputs covering it
    """
    outputs = np.asarray(window_outputs, dtype=np.float64)
    if outputs.ndim == 2:
        outputs = outputs[:, :, None]
    if outputs.shape[:2] != (len(batch), batch.window_length):
        raise ValueError(f"Expected {len(batch)} blocks of length {batch.window_length}, got "
                         f"outputs of shape {outputs.shape}")

    length = max(batch.source_length, int(batch.starts.max()) + batch.window_length)
    mean = np.zeros((length, outputs.shape[2]))
    count = np.zeros((length, 1))
    for start, block in zip(batch.starts, outputs):
        rows = slice(start, start + batch.window_length)
        count[rows] += 1
        # running mean, exact when all contributions to a row are equal
        mean[rows] += (block - mean[rows]) / count[rows]

    if np.any(count[:batch.source_length] == 0):
        gap = int(np.argmax(count[:batch.source_length, 0] == 0))
        raise ValueError(f"Row {gap} is not covered by any window")
    return mean[:batch.source_length]


def _parse_ratio(ratio):
    if isinstance(ratio, str):
        ratio = [int(part) for part in ratio.split(":")]
    n_train, n_test = (int(part) for part in ratio)
    if n_train < 1 or n_test < 1:
        raise ValueError(f"Ratio parts must be >= 1, got {n_train}:{n_test}")
    return n_train, n_test


def cyclic_block_assignment(n_blocks, ratio):
    """Return a boolean array flagging the blocks assigned to the test set"""
    n_train, n_test = _parse_ratio(ratio)
    period = n_train + n_test
    if n_blocks < period:
        raise ValueError(f"Found {n_blocks} block(s), need at least {period} for a "
                         f"{n_train}:{n_test} cyclic split")
    return np.arange(n_blocks) % period >= n_train


def _split_by_blocks(n_rows, boundaries, ratio):
    edges = [0] + list(boundaries) + [n_rows]
    is_test = cyclic_block_assignment(len(edges) - 1, ratio)
    train_rows, test_rows = list(), list()
    for i_block, (start, stop) in enumerate(zip(edges[:-1], edges[1:])):
        target = test_rows if is_test[i_block] else train_rows
        target.extend(range(start, stop))
    return np.asarray(train_rows, dtype=int), np.asarray(test_rows, dtype=int)


def find_mach_column(names, mach_column=None):
    if mach_column is not None:
        if mach_column not in names:
            raise KeyError(f"Mach column '{mach_column}' not found. Please pick one of: {names}")
        return mach_column
    for name in names:
        if name.lower() in MACH_NAMES:
            return name
    raise KeyError(f"No Mach column found among {names}; name it explicitly")


def mach_block_boundaries(mach, threshold=0.05):
    """Row indices where the Mach number jumps by more than *threshold*"""
    mach = np.asarray(mach, dtype=np.float64)
    return list(np.nonzero(np.abs(np.diff(mach)) > threshold)[0] + 1)


def mach_block_rows(mach, ratio=(4, 1), threshold=0.05):
    boundaries = mach_block_boundaries(mach, threshold)
    return _split_by_blocks(len(mach), boundaries, ratio)


def split_mach_blocks(data, ratio=(4, 1), threshold=0.05, mach_column=None):
    """
    Block-wise cyclical split at Mach number jumps

    The rows, in recorded order, are cut into contiguous blocks wherever the Mach number jumps
    by more than *threshold*. With ratio 4:1 every 5th block goes to the test set.

    Returns
    -------
    tuple:
        (train, test) data sets
    """
    name = find_mach_column(data.column_names, mach_column)
    train_rows, test_rows = mach_block_rows(data.column(name), ratio, threshold)
    return data.subset(train_rows), data.subset(test_rows)


def cyclic_block_rows(n_rows, n_blocks=10, ratio=(4, 1)):
    if n_blocks > n_rows:
        raise ValueError(f"Cannot cut {n_rows} rows into {n_blocks} blocks")
    boundaries = [int(round(i_block * n_rows / n_blocks)) for i_block in range(1, n_blocks)]
    return _split_by_blocks(n_rows, boundaries, ratio)


def split_cyclic_blocks(data, n_blocks=10, ratio=(4, 1)):
    """Cut the rows into equal contiguous blocks and assign them cyclically"""
    train_rows, test_rows = cyclic_block_rows(len(data), n_blocks, ratio)
    return data.subset(train_rows), data.subset(test_rows)


def leave_half_out_rows(case_lengths, target_case):
    """
    Row indices of the leave-half-out split of stacked cases

    The non-target cases go to training in full, together with the first ceil(n/2) rows of the
    target case; the remaining rows of the target case form the test set.
    """
    if len(case_lengths) < 2:
        raise ValueError(f"Leave-half-out needs at least 2 cases, got {len(case_lengths)}")
    if not 0 <= target_case < len(case_lengths):
        raise ValueError(f"Target case {target_case} not among the {len(case_lengths)} cases")
    offsets = np.concatenate([[0], np.cumsum(case_lengths)])
    train_rows, test_rows = list(), list()
    for i_case, length in enumerate(case_lengths):
        rows = range(offsets[i_case], offsets[i_case] + length)
        if i_case == target_case:
            half = -(-length // 2)
            train_rows.extend(rows[:half])
            test_rows.extend(rows[half:])
        else:
            train_rows.extend(rows)
    return np.asarray(train_rows, dtype=int), np.asarray(test_rows, dtype=int)


def split_leave_half_out(cases, target_case):
    """
    Case-wise rotating split

    Parameters
    ----------
    cases: list of DataSet
        The operating cases, sharing one schema
    target_case: int or str
        Index or name of the case that is split in half

    Returns
    -------
    tuple:
        (train, test) data sets
    """
    if not isinstance(target_case, (int, np.integer)):
        names = [case.name for case in cases]
        if target_case not in names:
            raise ValueError(f"Target case '{target_case}' not found among {names}")
        target_case = names.index(target_case)
    train_rows, test_rows = leave_half_out_rows([len(case) for case in cases], target_case)
    stacked = concat_datasets(cases)
    return stacked.subset(train_rows), stacked.subset(test_rows)


def forrester_high(x):
    return (6 * x - 2) ** 2 * np.sin(12 * x - 4)


def forrester_low(x):
    return 0.5 * forrester_high(x) + 10 * (x - 0.5) - 5


@dataclass
class ShockSettings:
    """Parameters of the shock benchmark: a tanh front on a smooth pressure-like carrier"""
    position: float = 0.5
    width: float = 0.01
    shift: float = 0.03
    amplitude: float = 0.6
    smear_factor: float = 4.0


def shock_carrier(x):
    return -0.8 * np.sin(np.pi * x) + 0.3 * x


def shock_high(x, settings):
    front = np.tanh((x - settings.position) / settings.width)
    return shock_carrier(x) + settings.amplitude * front


def shock_low(x, settings):
    front = np.tanh((x - settings.position - settings.shift) /
                    (settings.smear_factor * settings.width))
    return shock_carrier(x) + settings.amplitude * front


def gen_synthetic(kind="smooth", n_lf=400, n_hf=40, noise=0.0, seed=42, shock=None):
    """
    Generate a low/high fidelity pair on [0, 1]

    Parameters
    ----------
    kind: str
        "smooth" for the Forrester pair, "shock" for a sharp front that the low fidelity source
        smears and shifts
    n_lf: int
        Number of low fidelity samples (dense)
    n_hf: int
        Number of high fidelity samples (sparse)
    noise: float
        Standard deviation of the Gaussian noise added to the high fidelity responses
    seed: int
        Seed of the noise
    shock: ShockSettings or None
        Shape of the front for the shock kind

    Returns
    -------
    tuple:
        (D_L, D_H) data sets with one state column 'x' and one response column 'y'
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"Unknown synthetic kind '{kind}'. Please pick one of: "
                         f"{SYNTHETIC_KINDS}")
    if not n_lf >= n_hf >= 4:
        raise ValueError(f"Need n_lf >= n_hf >= 4, got n_lf={n_lf}, n_hf={n_hf}")

    rng = np.random.default_rng(seed)
    x_low = np.linspace(0.0, 1.0, n_lf)
    x_high = np.linspace(0.0, 1.0, n_hf)
    if kind == "smooth":
        y_low = forrester_low(x_low)
        y_high = forrester_high(x_high)
    else:
        shock = shock or ShockSettings()
        y_low = shock_low(x_low, shock)
        y_high = shock_high(x_high, shock)
    if noise > 0:
        y_high = y_high + rng.normal(0.0, noise, size=n_hf)

    columns = [Column("x", STATE), Column("y", RESPONSE)]
    low = DataSet(columns, np.column_stack([x_low, y_low]), fidelity=LOW_FIDELITY,
                  name=f"{kind}_lf")
    high = DataSet(columns, np.column_stack([x_high, y_high]), fidelity=HIGH_FIDELITY,
                   name=f"{kind}_hf")
    return low, high
