#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
    Shared fixtures of the aero_fusion tests

    Long end-to-end benchmarks carry the ``slow`` marker and only run with ``pytest --runslow``.
    Read more about conftest.py under:
    https://pytest.org/latest/plugins.html
"""
import numpy as np
import pytest

from aero_fusion.dataset import gen_synthetic
from aero_fusion.kriging import align_datasets
from aero_fusion.lgfnet import ArchConfig

FD_STEP = 1e-5


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the slow end-to-end benchmarks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="need the --runslow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def central_difference(function, array, step=FD_STEP):
    """
    Central finite-difference gradient of the scalar *function* with respect to *array*

    *array* is perturbed in place, one element at a time, and restored afterwards
    """
    gradient = np.zeros(array.shape)
    flat = array.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + step
        upper = function()
        flat[index] = original - step
        lower = function()
        flat[index] = original
        gradient.reshape(-1)[index] = (upper - lower) / (2 * step)
    return gradient


def relative_error(analytic, numeric):
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-8)
    return np.max(np.abs(analytic - numeric)) / scale


@pytest.fixture
def finite_difference():
    return central_difference


@pytest.fixture
def gradient_error():
    return relative_error


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_arch():
    """Smallest architecture that still pools four times"""
    return ArchConfig(channels=[2, 4, 8, 16, 32], window_length=16, stride=4, heads=1,
                      dropout=0.0, input_width=2, output_width=1)


@pytest.fixture
def smooth_pair():
    return gen_synthetic("smooth", n_lf=64, n_hf=16, noise=0.0, seed=42)


@pytest.fixture
def smooth_aligned(smooth_pair):
    low, high = smooth_pair
    return align_datasets(low, high)
