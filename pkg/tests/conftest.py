import numpy as np
import pytest
from hypothesis import settings

from aeroop import tensor as T

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def scalarize(out: T.Tensor, gen: np.random.Generator) -> T.Tensor:
    """A generic real scalar depending on every entry of ``out``."""
    w = gen.uniform(-1, 1, size=out.shape)
    if out.is_complex:
        w2 = gen.uniform(-1, 1, size=out.shape)
        return T.add(T.reduce_sum(T.mul(T.real(out), T.tensor(w))), T.reduce_sum(T.mul(T.imag(out), T.tensor(w2))))
    return T.reduce_sum(T.mul(out, T.tensor(w)))


def numeric_grad(loss_fn, p: T.Tensor, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``loss_fn()`` in every real component of ``p``."""
    base = p.data.copy()
    flat = base.reshape(-1)
    out = np.zeros_like(flat)
    dirs = (1.0, 1j) if np.iscomplexobj(base) else (1.0,)
    for i in range(flat.size):
        for d in dirs:
            up = flat.copy()
            dn = flat.copy()
            up[i] += h * d
            dn[i] -= h * d
            p.data = up.reshape(base.shape)
            fp = float(loss_fn().data)
            p.data = dn.reshape(base.shape)
            fm = float(loss_fn().data)
            out[i] += (fp - fm) / (2 * h) * d
    p.data = base
    return out.reshape(base.shape)


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


def check_gradients(loss_fn, params, h: float = 1e-6) -> dict:
    """Return ``{param name or index: relative error}`` of backward vs finite differences."""
    loss, tape = T.record_forward(loss_fn)
    grads = T.backward(tape, loss)
    errs = {}
    for i, p in enumerate(params):
        fd = numeric_grad(loss_fn, p, h)
        errs[p.name or i] = rel_err(grads.get(p, np.zeros_like(p.data)), fd)
    return errs


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    """Store one acceptance outcome; the terminal summary prints them all."""
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
