import numpy as np
import pytest

from difflab import make_instance, tiny_instance
from difflab.oracle import bayes_denoiser
from difflab.rng import stream


@pytest.fixture(scope="session")
def desk():
    return make_instance()


@pytest.fixture(scope="session")
def desk_den(desk):
    return bayes_denoiser(desk)


@pytest.fixture(scope="session")
def fact():
    return make_instance(kind="factorized")


@pytest.fixture(scope="session")
def tiny():
    return tiny_instance(p0=0.3)


@pytest.fixture()
def rng():
    return stream(0, "tests")
