import os

import numpy as np
import pytest
from hypothesis import settings

from homogelast import checks

settings.register_profile("ci", max_examples=30, deadline=None)
settings.load_profile("ci")



@pytest.fixture(scope="session")
def ctx(tmp_path_factory):
    # set HOMOGELAST_CACHE to reuse calibrations across runs
    cache = os.environ.get("HOMOGELAST_CACHE") or str(tmp_path_factory.mktemp("calibration"))
    return checks.Context(cache_dir=cache, seed=0)


@pytest.fixture(scope="session")
def smooth(ctx):
    return ctx.model("smooth"), ctx.bound("smooth")


@pytest.fixture(scope="session")
def layered(ctx):
    return ctx.model("layered"), ctx.bound("layered")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
