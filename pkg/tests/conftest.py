import numpy as np
import pytest

from gridverify.mlp import AffineLayer, Network
from gridverify.tables import generate_synthetic_table, make_cas_scheme


def random_network(rng, widths, precision="single", scale=0.5, name=""):
    layers = []
    for fan_in, fan_out in zip(widths, widths[1:]):
        w = rng.uniform(-scale, scale, size=(fan_out, fan_in))
        b = rng.uniform(-scale, scale, size=fan_out)
        layers.append(AffineLayer(w, b))
    meta = {"name": name} if name else {}
    return Network(layers, precision=precision, metadata=meta)


def constant_network(scores, input_dim=5, name=""):
    """Zero weights, biases equal to the requested output scores."""
    w = np.zeros((len(scores), input_dim))
    meta = {"name": name} if name else {}
    return Network([AffineLayer(w, np.asarray(scores, dtype=np.float64))], metadata=meta)


@pytest.fixture(scope="session")
def cas_scheme():
    return make_cas_scheme()


@pytest.fixture(scope="session")
def synthetic_table(cas_scheme):
    return generate_synthetic_table(cas_scheme)


@pytest.fixture(scope="session")
def large_net(cas_scheme):
    rng = np.random.default_rng(7)
    return random_network(rng, [5] + [100] * 7 + [5], name="cas_tau5_aprev_WR")
