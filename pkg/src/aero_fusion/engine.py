# -*- coding: utf-8 -*-
"""
Pipeline orchestration

:class:`FusionEngine` runs one command of the fusion pipeline (synth, align, train, infer,
evaluate, uq) on a fully resolved settings tree and writes its artifacts below a fixed output
layout. Every command also writes the resolved settings to ``reports/<command>_config.yml``;
passing that file back as settings replays the run.
"""
import logging
from collections import OrderedDict
from pathlib import Path

import numpy as np
import pandas as pd

from aero_fusion.checkpoint import save_checkpoint, load_checkpoint
from aero_fusion.dataset import (gen_synthetic, save_csv, save_schema, load_csv, save_aligned,
                                 load_aligned, cyclic_block_rows, mach_block_rows,
                                 find_mach_column, leave_half_out_rows, FLOAT_FORMAT,
                                 load_schema, LOW_FIDELITY, HIGH_FIDELITY, RESPONSE)
from aero_fusion.gpr import GPRConfig, fit_gpr, report_uncertainty, predict_grid
from aero_fusion.kriging import KrigingConfig, AlignConfig, align_datasets
from aero_fusion.labels import ColumnLabels, METRIC_NAMES, UNCERTAINTY_SUMMARY_COLUMNS
from aero_fusion.lgfnet import ArchConfig, fuse_inference
from aero_fusion.training import TrainConfig, evaluate_metrics, run_split_experiment
from aero_fusion.utils import OutputLayout, write_settings, resolve_section

try:
    from aero_fusion import __version__
except ModuleNotFoundError:
    __version__ = "unknown"

logger = logging.getLogger(__name__)

COMMANDS = ("synth", "align", "train", "infer", "evaluate", "uq")
SPLIT_STRATEGIES = ("cyclic_blocks", "mach_blocks", "leave_half_out", "none")
TRAIN = "train"
TEST = "test"


def default_settings():
    """Built-in defaults of every settings section"""
    return OrderedDict(
        general=OrderedDict(command=None, seed=42, output=None),
        inputs=OrderedDict(lf=None, hf=None, schema=None, aligned=None, aligned_schema=None,
                           checkpoint=None, predictions=None, truth=None),
        synth=OrderedDict(kind="smooth", n_lf=400, n_hf=40, noise=0.0),
        align=OrderedDict(keep_order=False),
        kriging=OrderedDict(n_starts=16, lengthscale_bounds=[1e-3, 3.0], max_iter=100),
        arch=OrderedDict(channels=[8, 16, 32, 64, 128], window_length=112, stride=14, heads=1,
                         dropout=0.1, ablation="full"),
        train=OrderedDict(TrainConfig().to_dict()),
        split=OrderedDict(strategy="cyclic_blocks", n_blocks=10, ratio="4:1",
                          mach_threshold=0.05, mach_column=None, case_column=None,
                          target_case=0),
        gpr=OrderedDict(mode="exact", n_starts=8, active_size=50, candidate_cap=2048,
                        alpha=0.05, grid=False, grid_points=50),
        evaluate=OrderedDict(prediction_column=None, truth_column=None),
    )


def resolve_settings(file_settings=None, overrides=None):
    """
    Merge the settings per section: command line over settings file over defaults

    Raises
    ------
    KeyError:
        If the settings file holds an unknown section or key
    """
    defaults = default_settings()
    file_settings = file_settings or {}
    overrides = overrides or {}
    for section in file_settings:
        if section not in defaults:
            raise KeyError(f"Unknown settings section '{section}'. Please pick one of: "
                           f"{list(defaults.keys())}")
    return OrderedDict((section, resolve_section(values, file_settings.get(section),
                                                 overrides.get(section), section))
                       for section, values in defaults.items())


def build_arch(arch_settings):
    settings = dict(arch_settings)
    ablation = settings.pop("ablation", "full")
    return ArchConfig.from_ablation(ablation, **settings)


def build_kriging(kriging_settings):
    return KrigingConfig(n_starts=int(kriging_settings["n_starts"]),
                         lengthscale_bounds=tuple(kriging_settings["lengthscale_bounds"]),
                         max_iter=int(kriging_settings["max_iter"]))


def build_gpr(gpr_settings, seed):
    return GPRConfig(mode=gpr_settings["mode"], n_starts=int(gpr_settings["n_starts"]),
                     active_size=int(gpr_settings["active_size"]),
                     candidate_cap=int(gpr_settings["candidate_cap"]), seed=seed)


def _case_groups(values):
    """Row indices per distinct value, in order of first appearance"""
    groups = OrderedDict()
    for row, value in enumerate(values):
        groups.setdefault(value, list()).append(row)
    return groups


def split_rows(aligned, split_settings):
    """
    Train and test rows of the aligned sequence for the configured split strategy

    Returns
    -------
    tuple:
        (train_rows, test_rows), both sorted ascending
    """
    strategy = split_settings["strategy"]
    n_rows = len(aligned)
    ratio = split_settings["ratio"]
    if strategy == "none":
        return np.arange(n_rows), np.array([], dtype=int)
    if strategy == "cyclic_blocks":
        return cyclic_block_rows(n_rows, int(split_settings["n_blocks"]), ratio)
    if strategy == "mach_blocks":
        name = find_mach_column(aligned.state_names, split_settings["mach_column"])
        mach = aligned.states[:, aligned.state_names.index(name)]
        return mach_block_rows(mach, ratio, float(split_settings["mach_threshold"]))
    if strategy == "leave_half_out":
        case_column = split_settings["case_column"]
        if case_column not in aligned.state_names:
            raise KeyError(f"Case column '{case_column}' not found. Please pick one of: "
                           f"{aligned.state_names}")
        groups = _case_groups(aligned.states[:, aligned.state_names.index(case_column)])
        case_rows = list(groups.values())
        target_case = split_settings["target_case"]
        case_keys = list(groups.keys())
        if not isinstance(target_case, int):
            if float(target_case) not in case_keys:
                raise ValueError(f"Target case {target_case} not found among {case_keys}")
            target_case = case_keys.index(float(target_case))
        order = np.concatenate([np.asarray(rows, dtype=int) for rows in case_rows])
        train, test = leave_half_out_rows([len(rows) for rows in case_rows], target_case)
        return np.sort(order[train]), np.sort(order[test])
    raise ValueError(f"Unknown split strategy '{strategy}'. Please pick one of: "
                     f"{SPLIT_STRATEGIES}")


def save_split(train_rows, test_rows, path):
    labels = ColumnLabels([])
    frame = pd.DataFrame({labels.row: np.concatenate([train_rows, test_rows]),
                          labels.split: [TRAIN] * len(train_rows) + [TEST] * len(test_rows)})
    frame.sort_values(labels.row).to_csv(path, index=False, lineterminator="\n")


def load_split(path):
    labels = ColumnLabels([])
    frame = pd.read_csv(path)
    rows = frame[labels.row].to_numpy(dtype=int)
    is_test = frame[labels.split].to_numpy() == TEST
    return rows[~is_test], rows[is_test]


def _write_frame(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


class FusionEngine(object):
    """
    Run one command of the fusion pipeline

    Parameters
    ----------
    command: str
        One of synth, align, train, infer, evaluate or uq
    settings: OrderedDict
        Fully resolved settings, see :func:`resolve_settings`
    output_directory: str or Path
        Root of the output layout
    """

    def __init__(self, command, settings, output_directory):
        if command not in COMMANDS:
            raise ValueError(f"Unknown command '{command}'. Please pick one of: {COMMANDS}")
        self.command = command
        self.settings = settings
        self.settings["general"]["command"] = command
        self.settings["general"]["output"] = str(output_directory)
        self.seed = int(settings["general"]["seed"])
        self.layout = OutputLayout(output_directory)
        self.layout.make(self.layout.root, self.layout.reports)

        logger.info(f"Starting fusion engine (v: {__version__}) for command '{command}'")
        logger.debug("With debugging on")

    @property
    def inputs(self):
        return self.settings["inputs"]

    def _input(self, key, default):
        """Resolve an input path and record it in the settings so the echo can replay it"""
        path = self.inputs.get(key) or default
        if path is None:
            raise ValueError(f"No '{key}' input given")
        if not Path(path).exists():
            raise FileNotFoundError(f"Input '{key}' not found: {path}")
        self.inputs[key] = str(path)
        return Path(path)

    def run(self):
        getattr(self, self.command)()
        echo = self.layout.report(f"{self.command}_config.yml")
        write_settings(self.settings, echo)
        logger.info(f"Wrote resolved settings to {echo}")
        logger.info("Done. Goodbye...")

    def synth(self):
        synth = self.settings["synth"]
        low, high = gen_synthetic(kind=synth["kind"], n_lf=int(synth["n_lf"]),
                                  n_hf=int(synth["n_hf"]), noise=float(synth["noise"]),
                                  seed=self.seed)
        self.layout.make(self.layout.data)
        save_csv(low, self.layout.lf_csv)
        save_csv(high, self.layout.hf_csv)
        save_schema(low.columns, self.layout.data_schema)
        logger.info(f"Wrote {len(low)} LF and {len(high)} HF rows to {self.layout.data}")

    def _load_sources(self):
        schema = self._input("schema", self.layout.data_schema)
        low = load_csv(self._input("lf", self.layout.lf_csv), schema, fidelity=LOW_FIDELITY,
                       name="lf")
        high = load_csv(self._input("hf", self.layout.hf_csv), schema, fidelity=HIGH_FIDELITY,
                        name="hf")
        return low, high

    def align(self):
        low, high = self._load_sources()
        config = AlignConfig(kriging=build_kriging(self.settings["kriging"]),
                             keep_order=bool(self.settings["align"]["keep_order"]))
        aligned = align_datasets(low, high, config)
        self.layout.make(self.layout.aligned)
        save_aligned(aligned, self.layout.aligned_csv, self.layout.aligned_schema)
        logger.info(f"Wrote the aligned pair to {self.layout.aligned_csv}")

    def _load_aligned(self):
        return load_aligned(self._input("aligned", self.layout.aligned_csv),
                            self._input("aligned_schema", self.layout.aligned_schema))

    def train(self):
        aligned = self._load_aligned()
        train_rows, test_rows = split_rows(aligned, self.settings["split"])
        logger.info(f"Split '{self.settings['split']['strategy']}': {len(train_rows)} train "
                    f"and {len(test_rows)} test rows")
        arch = build_arch(self.settings["arch"])
        config = TrainConfig(**self.settings["train"])
        result = run_split_experiment(aligned, train_rows, test_rows, arch, config, self.seed)

        self.layout.make(self.layout.checkpoints)
        save_checkpoint(result.model, self.layout.checkpoint)
        result.report.to_csv(self.layout.report("train_history.csv"),
                             self.layout.report("train_summary.csv"))
        save_split(train_rows, test_rows, self.layout.split_csv)
        for prefix, metrics in (("train", result.report.train_metrics),
                                ("test", result.report.test_metrics)):
            if metrics is not None:
                logger.info(f"{prefix}: RMSE {metrics.rmse:.6g}, MAE {metrics.mae:.6g}, "
                            f"R2 {metrics.r2:.6g}")

    def infer(self):
        model = load_checkpoint(self._input("checkpoint", self.layout.checkpoint))
        if self.inputs.get("lf") is not None:
            # a low fidelity table on its own: build the database over its states
            schema = self._input("schema", self.layout.data_schema)
            low = load_csv(self._input("lf", None), schema, fidelity=LOW_FIDELITY)
            states, y_low, state_names = low.states, low.responses, low.state_names
            response_names = low.response_names
        else:
            aligned = self._load_aligned()
            states, y_low, state_names = aligned.states, aligned.y_low, aligned.state_names
            response_names = aligned.response_names

        result = fuse_inference(model, states, y_low)
        labels = ColumnLabels(response_names)
        frame = pd.DataFrame(np.hstack([states, y_low, result.delta, result.fused]),
                             columns=list(state_names) + labels.fused_columns())
        self.layout.make(self.layout.fused)
        _write_frame(frame, self.layout.fused_csv)
        logger.info(f"Wrote the fused database with {len(frame)} rows to "
                    f"{self.layout.fused_csv}")

    def _response_names(self, truth, truth_path):
        """Response names from the aligned schema, else from the per-response truth columns"""
        schema_path = self.inputs.get("aligned_schema")
        if schema_path is None and truth_path == self.layout.aligned_csv:
            schema_path = self.layout.aligned_schema
        if schema_path is not None and Path(schema_path).exists():
            columns, _ = load_schema(schema_path)
            names = [column.name for column in columns if column.role == RESPONSE]
            if names:
                return names
        prefix = ColumnLabels([]).high + "_"
        names = [column[len(prefix):] for column in truth.columns if column.startswith(prefix)]
        return names or ["y"]

    def evaluate(self):
        prediction_path = self._input("predictions", self.layout.fused_csv)
        truth_path = self._input("truth", self.layout.aligned_csv)
        explicit = (prediction_path != self.layout.fused_csv
                    or truth_path != self.layout.aligned_csv)
        predictions = pd.read_csv(prediction_path, float_precision="round_trip")
        truth = pd.read_csv(truth_path, float_precision="round_trip")
        if len(predictions) != len(truth):
            raise ValueError(f"Predictions ({len(predictions)} rows) and truth ({len(truth)} "
                             f"rows) differ in length")

        response_names = self._response_names(truth, truth_path)
        labels = ColumnLabels(response_names)
        settings = self.settings["evaluate"]
        pairs = list(zip(response_names, labels.per_response(labels.fused),
                         labels.per_response(labels.high)))
        if settings["prediction_column"] or settings["truth_column"]:
            pairs = [(response_names[0], settings["prediction_column"] or pairs[0][1],
                      settings["truth_column"] or pairs[0][2])]
        for _, prediction_column, truth_column in pairs:
            for frame, column, role in ((predictions, prediction_column, "prediction"),
                                        (truth, truth_column, "truth")):
                if column not in frame.columns:
                    raise KeyError(f"{role.capitalize()} column '{column}' not found. Please "
                                   f"pick one of: {list(frame.columns)}")

        subsets = OrderedDict(all=np.arange(len(truth)))
        if not explicit and self.layout.split_csv.exists():
            subsets[TRAIN], subsets[TEST] = load_split(self.layout.split_csv)

        rows = list()
        for response, prediction_column, truth_column in pairs:
            for subset, indices in subsets.items():
                if len(indices) < 2:
                    logger.warning(f"Skipping subset '{subset}' with {len(indices)} row(s)")
                    continue
                metrics = evaluate_metrics(predictions[prediction_column].to_numpy()[indices],
                                           truth[truth_column].to_numpy()[indices])
                row = OrderedDict(subset=subset, n=len(indices))
                if len(pairs) > 1:
                    row["response"] = response
                row.update(metrics.as_dict())
                row["r2_defined"] = metrics.r2_defined
                rows.append(row)
                logger.info(f"{prediction_column} on {subset}: "
                            + ", ".join(f"{name} {row[name]:.6g}" for name in METRIC_NAMES))
        _write_frame(pd.DataFrame(rows), self.layout.report("metrics.csv"))

    def uq(self):
        aligned = self._load_aligned()
        fused = pd.read_csv(self._input("predictions", self.layout.fused_csv),
                            float_precision="round_trip")
        if len(fused) != len(aligned):
            raise ValueError(f"The fused table has {len(fused)} rows, the aligned pair "
                             f"{len(aligned)}")
        test_rows = np.arange(len(aligned))
        if self.layout.split_csv.exists():
            _, split_test = load_split(self.layout.split_csv)
            if len(split_test) > 0:
                test_rows = split_test
        queries = aligned.states[test_rows]

        gpr_settings = self.settings["gpr"]
        config = build_gpr(gpr_settings, self.seed)
        alpha = float(gpr_settings["alpha"])
        labels = ColumnLabels(aligned.response_names)
        observed = aligned.observed_high
        summary = list()
        for i_resp, response in enumerate(aligned.response_names):
            suffix = "" if len(aligned.response_names) == 1 else f"_{response}"
            sources = OrderedDict(
                hf=(aligned.states[observed], aligned.y_high[observed, i_resp]),
                fused=(aligned.states, fused[labels.per_response(labels.fused)[i_resp]]
                       .to_numpy(dtype=np.float64)))
            for source, (states, targets) in sources.items():
                logger.info(f"Fitting a {config.mode} GPR on {len(targets)} {source} values "
                            f"of '{response}'")
                model = fit_gpr(states, targets, config)
                report = report_uncertainty(model, queries, alpha)
                report.to_csv(self.layout.report(f"uncertainty_{source}{suffix}.csv"))
                summary.append(OrderedDict([("source", source), ("response", response)]
                                           + list(report.summary().items())))
                logger.info(f"U({source}, {response}) = {report.uncertainty:.6g}")
                if gpr_settings["grid"]:
                    grid = predict_grid(model, aligned.state_names,
                                        n_points=int(gpr_settings["grid_points"]))
                    _write_frame(grid, self.layout.report(f"uq_grid_{source}{suffix}.csv"))

        columns = ["source", "response"] + list(UNCERTAINTY_SUMMARY_COLUMNS)
        _write_frame(pd.DataFrame(summary, columns=columns),
                     self.layout.report("uncertainty_summary.csv"))
