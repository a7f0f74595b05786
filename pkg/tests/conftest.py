import json
import pathlib

import pytest

from fliplab import (
    derive_stream,
    empirical_process_sup,
    forward,
    make_activation,
    multilayer_layer_stats,
    sample_network,
)

DEEP_DIMS = (1500, 1500, 1500, 1500, 1)


@pytest.fixture(scope="session")
def fixtures():
    path = pathlib.Path(__file__).parent / "fixtures.json"
    return json.loads(path.read_text())


@pytest.fixture(scope="session")
def relu():
    return make_activation("relu")


@pytest.fixture(scope="session")
def tanh():
    return make_activation("tanh")


@pytest.fixture(scope="session")
def linear():
    return make_activation("linear")


@pytest.fixture(scope="session")
def deep_relu_trials(relu):
    """100 attacked deep relu nets at s_d=1: per-trial layer stats plus
    postactivation norm ratios ||h_m||^2 / d_m, shared by the multi-layer
    concentration tests and the acceptance recursion criterion."""
    trials = []
    for trial in range(100):
        net = sample_network(DEEP_DIMS, derive_stream(70, trial))
        x = derive_stream(71, trial).standard_normal(DEEP_DIMS[0])
        trace = forward(net, relu, x)
        ratios = tuple(
            float(h @ h) / DEEP_DIMS[m]
            for m, h in enumerate(trace.postactivations))
        rows = multilayer_layer_stats(net, relu, x, 1.0,
                                      derive_stream(72, trial))
        trials.append((rows, ratios))
    return trials


@pytest.fixture(scope="session")
def ep_growth_curve(relu):
    """Grid sups of the shift process at m=1e4 for doubling deltas, 50
    repetitions each with paired draws, shared by the envelope-shape test
    and the acceptance process criterion."""
    sups = {}
    for delta in (0.025, 0.05, 0.1):
        vals = []
        for rep in range(50):
            est = empirical_process_sup(relu, 10**4, delta, 5,
                                        derive_stream(80, rep))
            vals.append(est.sup_abs)
        sups[delta] = vals
    return sups
