import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from geomekf.groups import SE3, SE23, SO3, Euclidean


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def all_geometries():
    return [Euclidean(3), SO3(), SE3(), SE23()]


def group_geometries():
    return [SO3(), SE3(), SE23()]


@pytest.fixture(params=all_geometries(), ids=lambda g: g.name)
def geometry(request):
    return request.param


@pytest.fixture(params=group_geometries(), ids=lambda g: g.name)
def group(request):
    return request.param
