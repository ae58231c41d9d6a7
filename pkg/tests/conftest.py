import numpy as np
import pytest

from afm import autodiff as ad


def numeric_grad(loss_fn, tensors, h=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. every element of ``tensors``."""
    out = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            g.reshape(-1)[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def analytic_grad(loss_fn, tensors):
    ad.zero_grad(tensors)
    with ad.Tape() as tape:
        loss = loss_fn()
    ad.backward(tape, loss)
    return [t.grad.copy() for t in tensors]


def rel_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def max_grad_rel_error(loss_fn, tensors, h=1e-5):
    num = numeric_grad(loss_fn, tensors, h)
    ana = analytic_grad(loss_fn, tensors)
    return max(rel_error(a, n) for a, n in zip(ana, num))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance report ----------------------------------------------------------

ACCEPTANCE_LINES = []


def report_criterion(name: str, passed: bool, detail: str = "") -> bool:
    """Record one acceptance line; printed in the terminal summary."""
    line = f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
