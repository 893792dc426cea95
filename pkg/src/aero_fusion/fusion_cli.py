"""
Command line interface of the fusion pipeline

Usage:
    aero_fusion synth --kind smooth --n_lf 400 --n_hf 40 --seed 42
    aero_fusion align
    aero_fusion train --channels 8 16 32 64 128
    aero_fusion infer
    aero_fusion evaluate
    aero_fusion uq --grid

All commands share one output root (``--output``, ``$AERO_FUSION_OUTPUT`` or ./fusion_output).
Settings are taken from the command line first, then from the yaml file given with
``--settings``, then from the built-in defaults.
"""

import argparse
import logging
import os
import sys
from collections import OrderedDict
from datetime import datetime

from aero_fusion.engine import FusionEngine, COMMANDS, SPLIT_STRATEGIES, resolve_settings
from aero_fusion.lgfnet import ABLATIONS
from aero_fusion.dataset import SYNTHETIC_KINDS
from aero_fusion.gpr import MODES
from aero_fusion.utils import default_output_directory, read_settings, OutputLayout

try:
    from aero_fusion import __version__
except ModuleNotFoundError:
    __version__ = "unknown"

logger = logging.getLogger()

# settings section and key per command line destination
OVERRIDES = OrderedDict(
    seed=("general", "seed"),
    lf=("inputs", "lf"),
    hf=("inputs", "hf"),
    schema=("inputs", "schema"),
    aligned=("inputs", "aligned"),
    aligned_schema=("inputs", "aligned_schema"),
    checkpoint=("inputs", "checkpoint"),
    predictions=("inputs", "predictions"),
    truth=("inputs", "truth"),
    kind=("synth", "kind"),
    n_lf=("synth", "n_lf"),
    n_hf=("synth", "n_hf"),
    noise=("synth", "noise"),
    keep_order=("align", "keep_order"),
    kriging_starts=("kriging", "n_starts"),
    channels=("arch", "channels"),
    window_length=("arch", "window_length"),
    stride=("arch", "stride"),
    heads=("arch", "heads"),
    dropout=("arch", "dropout"),
    ablation=("arch", "ablation"),
    learning_rate=("train", "learning_rate"),
    batch_size=("train", "batch_size"),
    epochs=("train", "epochs"),
    factor=("train", "factor"),
    patience=("train", "patience"),
    min_lr=("train", "min_lr"),
    split=("split", "strategy"),
    n_blocks=("split", "n_blocks"),
    ratio=("split", "ratio"),
    mach_threshold=("split", "mach_threshold"),
    mach_column=("split", "mach_column"),
    case_column=("split", "case_column"),
    target_case=("split", "target_case"),
    gpr_mode=("gpr", "mode"),
    active_size=("gpr", "active_size"),
    alpha=("gpr", "alpha"),
    grid=("gpr", "grid"),
    grid_points=("gpr", "grid_points"),
    prediction_column=("evaluate", "prediction_column"),
    truth_column=("evaluate", "truth_column"),
)


def _channel_list(values):
    """Accept '8 16 32' as well as '8,16,32'"""
    channels = list()
    for value in values:
        channels.extend(int(part) for part in str(value).split(",") if part.strip())
    return channels


def _case_label(value):
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            continue
    return value


def _add_option(parser, name, **kwargs):
    """Add ``--name`` together with its dashed spelling ``--na-me``"""
    flags = [f"--{name}"]
    if "_" in name:
        flags.append(f"--{name.replace('_', '-')}")
    parser.add_argument(*flags, dest=name, **kwargs)


def _logging_parser():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "-d",
        "--debug",
        help="Print lots of debugging statements",
        action="store_const",
        dest="log_level",
        const=logging.DEBUG,
        default=logging.INFO,
    )
    parser.add_argument(
        "-v",
        "--verbose",
        help="Be verbose",
        action="store_const",
        dest="log_level",
        const=logging.INFO,
    )
    parser.add_argument(
        "-q",
        "--quiet",
        help="Be quiet: no output",
        action="store_const",
        dest="log_level",
        const=logging.WARNING,
    )
    parser.add_argument(
        "--write_log_to_file",
        action="store_true",
        help="Write the logging information to reports/<command>.log",
    )
    parser.add_argument(
        "--log_file_debug",
        help="Be very verbose to file",
        action="store_const",
        dest="log_level_file",
        const=logging.DEBUG,
    )
    parser.add_argument(
        "--log_file_verbose",
        help="Be verbose to file",
        action="store_const",
        dest="log_level_file",
        const=logging.INFO,
        default=logging.INFO,
    )
    parser.add_argument(
        "--log_file_quiet",
        help="Be quiet: no output to file",
        action="store_const",
        dest="log_level_file",
        const=logging.WARNING,
    )
    _add_option(parser, "settings", help="Yaml settings file; command line options override it")
    _add_option(parser, "output", help="Output root directory (default: $AERO_FUSION_OUTPUT "
                                       "or ./fusion_output)")
    _add_option(parser, "seed", type=int, help="Seed of all random draws (default 42)")
    return parser


def _parse_the_command_line_arguments(args):
    # ~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~
    # parse the command line to set some options
    # ~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~
    parser = argparse.ArgumentParser(
        description="Fuse low and high fidelity aerodynamic data",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "--version",
        help="Show the current version",
        action="version",
        version=f"{__version__}",
    )
    common = _logging_parser()
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    synth = commands.add_parser("synth", parents=[common],
                                help="Generate a synthetic low/high fidelity pair")
    _add_option(synth, "kind", choices=SYNTHETIC_KINDS, help="Benchmark kind")
    _add_option(synth, "n_lf", type=int, help="Number of low fidelity samples")
    _add_option(synth, "n_hf", type=int, help="Number of high fidelity samples")
    _add_option(synth, "noise", type=float, help="Noise level of the high fidelity samples")

    align = commands.add_parser("align", parents=[common],
                                help="Align the two sources on one state grid with Kriging")
    _add_option(align, "lf", help="Low fidelity csv (default: data/lf.csv)")
    _add_option(align, "hf", help="High fidelity csv (default: data/hf.csv)")
    _add_option(align, "schema", help="Schema sidecar (default: data/schema.yml)")
    _add_option(align, "keep_order", action="store_const", const=True,
                help="Keep the recorded row order instead of sorting the grid")
    _add_option(align, "kriging_starts", type=int, help="Starts of the lengthscale search")

    train = commands.add_parser("train", parents=[common],
                                help="Train the network on the aligned pair")
    _add_aligned_options(train)
    _add_option(train, "channels", nargs="+", help="Five channel counts, doubling")
    _add_option(train, "window_length", type=int, help="Window length, multiple of 16")
    _add_option(train, "stride", type=int, help="Stride of the sliding windows")
    _add_option(train, "heads", type=int, help="Number of attention heads")
    _add_option(train, "dropout", type=float, help="Attention dropout rate")
    _add_option(train, "ablation", choices=list(ABLATIONS.keys()),
                help="Network variant: full, without sliding windows and/or attention")
    _add_option(train, "learning_rate", type=float, help="Initial Adam learning rate")
    _add_option(train, "batch_size", type=int, help="Windows per batch")
    _add_option(train, "epochs", type=int, help="Maximum number of epochs")
    _add_option(train, "factor", type=float, help="Learning rate decay factor")
    _add_option(train, "patience", type=int, help="Epochs without improvement before decay")
    _add_option(train, "min_lr", type=float, help="Learning rate floor")
    _add_option(train, "split", choices=SPLIT_STRATEGIES, help="Train/test split strategy")
    _add_option(train, "n_blocks", type=int, help="Blocks of the cyclic block split")
    _add_option(train, "ratio", help="Train:test ratio of the block splits, e.g. 4:1")
    _add_option(train, "mach_threshold", type=float, help="Mach jump that starts a new block")
    _add_option(train, "mach_column", help="Name of the Mach number column")
    _add_option(train, "case_column", help="State column identifying the cases")
    _add_option(train, "target_case", type=_case_label,
                help="Case split in half: an index, or a value of the case column")

    infer = commands.add_parser("infer", parents=[common],
                                help="Build the fused database by full-sequence inference")
    _add_aligned_options(infer)
    _add_option(infer, "checkpoint", help="Model checkpoint (default: checkpoints/lgfnet.ckpt)")
    _add_option(infer, "lf", help="Infer on this low fidelity csv instead of the aligned pair")
    _add_option(infer, "schema", help="Schema sidecar of --lf")

    evaluate = commands.add_parser("evaluate", parents=[common],
                                   help="Compute RMSE, MAE and R2 of predictions")
    _add_option(evaluate, "predictions", help="Prediction csv (default: fused/fused.csv)")
    _add_option(evaluate, "truth", help="Truth csv (default: aligned/aligned.csv)")
    _add_option(evaluate, "prediction_column", help="Column of the predictions (y_fused)")
    _add_option(evaluate, "truth_column", help="Column of the truth (y_H)")

    uq = commands.add_parser("uq", parents=[common],
                             help="Quantify the uncertainty of raw HF and fused data with GPR")
    _add_aligned_options(uq)
    _add_option(uq, "predictions", help="Fused csv (default: fused/fused.csv)")
    _add_option(uq, "gpr_mode", choices=MODES, help="Exact GPR or the FIC approximation")
    _add_option(uq, "active_size", type=int, help="Size of the FIC active subset")
    _add_option(uq, "alpha", type=float, help="1 - confidence level of the intervals")
    _add_option(uq, "grid", action="store_const", const=True,
                help="Also export mean and sigma on a uniform state grid")
    _add_option(uq, "grid_points", type=int, help="Grid points per axis")

    # parse the command line
    parsed_arguments = parser.parse_args(args)

    return parsed_arguments, parser


def _add_aligned_options(parser):
    _add_option(parser, "aligned", help="Aligned csv (default: aligned/aligned.csv)")
    _add_option(parser, "aligned_schema", help="Schema of the aligned csv")


def command_line_overrides(args):
    """Collect the options given on the command line into settings sections"""
    overrides = OrderedDict()
    for dest, (section, key) in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if dest == "channels":
            value = _channel_list(value)
        overrides.setdefault(section, OrderedDict())[key] = value
    return overrides


def setup_logging(loglevel):
    """Setup basic logging

    Args:
      loglevel (int): minimum loglevel for emitting messages
    """
    logformat = "%(levelname)-8s [%(filename)s:%(lineno)4d] %(message)s"
    logging.basicConfig(
        level=loglevel, stream=sys.stdout, format=logformat, datefmt="%Y-%m-%d %H:%M:%S"
    )


def add_file_logging(log_file, loglevel):
    """Write the log, with time stamps, to *log_file* as well"""
    handler = logging.FileHandler(log_file, mode="w", encoding="utf-8")
    handler.setLevel(loglevel)
    handler.setFormatter(logging.Formatter(
        "%(asctime)s %(levelname)-8s [%(filename)s:%(lineno)4d] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S"))
    logging.getLogger().addHandler(handler)
    if logging.getLogger().level > loglevel:
        logging.getLogger().setLevel(loglevel)
    return handler


def main(args_in):
    """
    Run one command

    Returns
    -------
    int:
        Exit status; 0 on success, 1 when the pipeline raised an error
    """
    args, parser = _parse_the_command_line_arguments(args_in)

    setup_logging(loglevel=args.log_level)

    handler = None
    try:
        output_directory = args.output
        file_settings = read_settings(args.settings)
        if output_directory is None:
            output_directory = file_settings.get("general", {}).get("output")
        if output_directory is None:
            output_directory = default_output_directory()

        if args.write_log_to_file:
            layout = OutputLayout(output_directory)
            layout.make(layout.reports)
            handler = add_file_logging(layout.report(f"{args.command}.log"),
                                       args.log_level_file)
            script_name = os.path.basename(sys.argv[0])
            start_time = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
            logger.info(f"Start {script_name} (v: {__version__}) at {start_time}: {args_in}")

        settings = resolve_settings(file_settings, command_line_overrides(args))
        FusionEngine(args.command, settings, output_directory).run()
    except Exception as err:
        logger.debug("Pipeline error", exc_info=True)
        message = " ".join(str(err).split())
        print(f"error: {type(err).__name__}: {message}", file=sys.stderr)
        return 1
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()
    return 0


def _run():
    """Entry point for console_scripts"""
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    _run()
