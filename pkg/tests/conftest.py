import numpy as np
import pytest

from fedkws import nn


def random_model(rng, widths=(3, 5, 4), activation="tanh"):
    spec = nn.LayerSpec(tuple(widths), activation)
    model = nn.init_model(spec, rng)
    # nonzero biases so every parameter is exercised
    return model.map(lambda a: a + 0.1 * rng.standard_normal(a.shape))


def fd_gradient(loss_of_vector, vec, h=1e-5):
    """Central finite differences, one coordinate at a time."""
    grad = np.zeros_like(vec)
    for i in range(vec.size):
        up = vec.copy()
        dn = vec.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (loss_of_vector(up) - loss_of_vector(dn)) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-6):
    # floor keeps near-zero coordinates from dividing round-off by ~0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
