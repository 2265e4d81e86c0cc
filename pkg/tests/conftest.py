"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest


class LinearFlux:
    """``F(u) = a u``; the coefficient ``a`` is the single trainable parameter."""

    def __init__(self, a: float = 1.0):
        self.a = float(a)

    n_params = 1

    @property
    def params(self):
        return np.array([self.a])

    def flux(self, u):
        return self.a * np.asarray(u, float)

    def dflux(self, u):
        return np.full(np.shape(u), self.a)

    def d2flux(self, u):
        return np.zeros(np.shape(u))

    def derivs(self, u):
        return self.flux(u), self.dflux(u), self.d2flux(u)

    def flux_params(self, u):
        return np.asarray(u, float).reshape(-1, 1)

    def dflux_params(self, u):
        return np.ones((np.size(u), 1))

    def with_params(self, p):
        return LinearFlux(float(np.asarray(p)[0]))


class OffsetFlux:
    """Wraps a flux model and adds a constant to its values."""

    def __init__(self, inner, offset: float):
        self.inner, self.offset = inner, float(offset)

    def flux(self, u):
        return self.inner.flux(u) + self.offset

    def dflux(self, u):
        return self.inner.dflux(u)


def central_fd(f, x, h):
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def rel_l2(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"criterion {number} ({title}): {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} ({title}): {'PASS' if ok else 'FAIL'} | {detail}")
