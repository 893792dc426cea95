"""
Model checkpoint file

A checkpoint is a single self-describing binary file::

    AERO_FUSION_CHECKPOINT 1
    <number of header bytes>
    <YAML header: architecture, seed and a table of tensors with name, shape and offset>
    <raw little-endian float64 values of all tensors>

The file contains no timestamps, so saving the same model twice gives identical bytes.
"""
import io
import logging

import numpy as np
import yaml
import yamlloader

from aero_fusion.dataset import NormStats
from aero_fusion.lgfnet import ArchConfig, LGFNetModel

logger = logging.getLogger(__name__)

MAGIC = "AERO_FUSION_CHECKPOINT"
VERSION = 1
DTYPE = np.dtype("<f8")
STATS_NAMES = ("input_stats.mean", "input_stats.std", "residual_stats.mean",
               "residual_stats.std")


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be interpreted"""


def _model_tensors(model):
    tensors = [(name, param.data) for name, param in model.named_parameters()]
    tensors += model.buffers()
    stats = (model.input_stats.mean, model.input_stats.std, model.residual_stats.mean,
             model.residual_stats.std)
    tensors += list(zip(STATS_NAMES, stats))
    return tensors


def save_checkpoint(model, path):
    """Write *model* with its architecture, normalization statistics and running statistics"""
    table = list()
    payload = io.BytesIO()
    offset = 0
    for name, values in _model_tensors(model):
        values = np.ascontiguousarray(values, dtype=DTYPE)
        table.append(dict(name=name, shape=list(values.shape), offset=offset))
        payload.write(values.tobytes())
        offset += values.size

    header = dict(version=VERSION, seed=int(model.seed), arch=model.arch.to_dict(),
                  tensors=table)
    header_bytes = yaml.dump(header, sort_keys=False, default_flow_style=None).encode("utf-8")
    with open(path, "wb") as stream:
        stream.write(f"{MAGIC} {VERSION}\n{len(header_bytes)}\n".encode("ascii"))
        stream.write(header_bytes)
        stream.write(payload.getvalue())
    logger.info(f"Wrote checkpoint with {len(table)} tensors to {path}")


def load_checkpoint(path):
    """
    Rebuild a model from a checkpoint file

    Returns
    -------
    LGFNetModel:
        The model in evaluation mode

    Raises
    ------
    CheckpointError:
        If the file is not a checkpoint or its tensors do not fit the architecture
    """
    with open(path, "rb") as stream:
        magic_line = stream.readline().decode("ascii", errors="replace").split()
        if len(magic_line) != 2 or magic_line[0] != MAGIC:
            raise CheckpointError(f"{path} is not a model checkpoint")
        if int(magic_line[1]) != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {magic_line[1]}")
        header_length = int(stream.readline())
        header = yaml.load(stream.read(header_length).decode("utf-8"),
                           Loader=yamlloader.ordereddict.CSafeLoader)
        payload = np.frombuffer(stream.read(), dtype=DTYPE)

    arch = ArchConfig(**dict(header["arch"]))
    model = LGFNetModel(arch, seed=header["seed"])
    params = dict(model.named_parameters())
    stats = dict()
    for entry in header["tensors"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=int))
        values = payload[entry["offset"]:entry["offset"] + size]
        if values.size != size:
            raise CheckpointError(f"{path}: tensor '{name}' is truncated")
        values = values.reshape(shape).copy()
        if name in params:
            if params[name].shape != shape:
                raise CheckpointError(f"{path}: tensor '{name}' has shape {shape}, the "
                                      f"architecture expects {params[name].shape}")
            params[name].data[...] = values
        elif name in STATS_NAMES:
            stats[name] = values
        else:
            try:
                model.set_buffer(name, values)
            except KeyError:
                raise CheckpointError(f"{path}: unexpected tensor '{name}'")

    model.input_stats = NormStats(mean=stats[STATS_NAMES[0]], std=stats[STATS_NAMES[1]])
    model.residual_stats = NormStats(mean=stats[STATS_NAMES[2]], std=stats[STATS_NAMES[3]])
    logger.info(f"Loaded {model} from {path}")
    return model.eval()
