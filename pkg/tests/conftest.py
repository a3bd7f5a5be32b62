import numpy as np
import pytest

from robust_cbf.config import load_scenario, resolve_config
from robust_cbf.sim import run_scenario

# acceptance results, filled by test_acceptance.py and printed at the end of the session
ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def fd_gradient(fn, x, step=1e-5):
    x = np.asarray(x, float)
    g = np.zeros(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = step
        g[i] = (fn(x + e) - fn(x - e)) / (2 * step)
    return g


def fd_jacobian(fn, x, step=1e-5):
    x = np.asarray(x, float)
    cols = []
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = step
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * step))
    return np.column_stack(cols)


def sample_ball(rng, n, radius, count):
    """Points in the closed ball: half on the sphere, half inside."""
    v = rng.normal(size=(count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = np.where(np.arange(count) % 2 == 0, 1.0, rng.uniform(0, 1, count) ** (1.0 / n))
    return radius * v * r[:, None]


_RUNS = {}


def bundled_run(name, *overrides):
    """Run a bundled scenario once per session."""
    key = (name,) + overrides
    if key not in _RUNS:
        cfg = load_scenario(resolve_config(name), list(overrides))
        _RUNS[key] = (cfg,) + run_scenario(cfg)
    return _RUNS[key]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cbf_exact_margin(spec, model, x, u, delta):
    """First-order condition with the true uncertainty: h_dot + alpha(h)."""
    dh = np.asarray(spec.grad_h(x), float)
    return float(dh @ (model(x, u) + delta) + spec.alpha(spec.h(x)))


def hocbf_exact_margin(chain, model, x, u, delta, delta_l):
    """Second-order condition with the true uncertainty ``delta`` and its rate
    bounded by ``delta_l`` (worst case taken), written from scratch:

        phi_1 = Psi + grad_h delta
        phi_1_dot = grad_Psi x_dot + x_dot^T F delta + grad_h delta_dot
    """
    x = np.asarray(x, float)
    xdot = model(x, u) + delta
    dh = np.asarray(chain.base.grad_h(x), float)
    F = np.asarray(chain.F(x), float)
    phi1 = chain.psi(x) + dh @ delta
    phi1_dot = chain.grad_psi(x) @ xdot + xdot @ F @ delta - np.linalg.norm(dh) * delta_l
    return float(phi1_dot + chain.alpha_r(phi1))
