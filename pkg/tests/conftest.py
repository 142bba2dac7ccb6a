import numpy as np
import pytest
from hypothesis import settings

from hefedrnn import reference, rnn
from hefedrnn.engine import Engine, EngineParams
from hefedrnn.packing import unpack

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")


def fd_gradients(arch, params, X, Y, eps=1e-5):
    """Central finite differences of the plaintext loss (exact activations)."""
    out = {}
    for name, W in params.items():
        g = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += eps
            minus[name][idx] -= eps
            g[idx] = (reference.loss(arch, plus, X, Y) - reference.loss(arch, minus, X, Y)) / (2 * eps)
        out[name] = g
    return out


def encrypted_gradients(arch, params, X, Y, ring_log=10, delta=4, parallel=2, quantize=False, exact=True,
                        mode="naive", cached=False, policy="eager"):
    eng = Engine(EngineParams(ring_log=ring_log, quantize=quantize))
    act = rnn.make_activation("tanh", exact=exact)
    rt = rnn.Runtime(eng, delta, parallel, act, mode=mode, cached=cached, policy=policy)
    model = rnn.pack_model(eng, arch, params, delta, parallel)
    grads, _ = rnn.local_iteration(rt, model, X, Y)
    return {k: unpack(v) for k, v in grads.items()}, eng


def random_problem(arch, b, d, h, T, o=1, kappa=1, seed=0, use_bias=True):
    rng = np.random.default_rng(seed)
    params = reference.init_weights(arch, d, h, o, rng, use_bias)
    for k in params:
        if k.startswith("b_"):
            params[k] = rng.normal(scale=0.1, size=params[k].shape)
    X = rng.normal(size=(b, T, d))
    Y = rng.normal(size=(b, kappa, o))
    return params, X, Y


@pytest.fixture
def problem():
    return random_problem


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
