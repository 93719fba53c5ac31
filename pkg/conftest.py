"""
共享 fixture
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from backend.app.models.config import Constraint  # noqa: E402
from backend.app.services.operators import DenseOperator, identity  # noqa: E402
from backend.app.services.penalties import build_penalty_1d  # noqa: E402
from backend.app.services.testproblems import InverseProblem, make_t1  # noqa: E402


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture(scope="session")
def t1_problem():
    return make_t1(0.01, 0)


@pytest.fixture(scope="session")
def t1_penalty(t1_problem):
    return build_penalty_1d(t1_problem.size, 1e-6)


def make_small_problem(n: int = 12, seed: int = 0, constraint: Constraint = Constraint.UNCONSTRAINED,
                       delta: float = 0.05) -> InverseProblem:
    """小规模病态问题：平滑核 + 光滑真解"""
    x = np.linspace(0.0, 1.0, n)
    matrix = np.exp(-((x[:, None] - x[None, :]) ** 2) / 0.02)
    matrix /= matrix.sum(axis=1, keepdims=True)
    u_true = np.sin(np.pi * x) + 0.2
    y = matrix @ u_true
    noise = np.random.Generator(np.random.PCG64(seed)).standard_normal(n)
    b = y + delta * np.linalg.norm(y) * noise / np.linalg.norm(noise)
    return InverseProblem(name="small", operator=DenseOperator(matrix), u_true=u_true, y_clean=y, b=b,
                          delta=delta, seed=seed, constraint=Constraint(constraint))


@pytest.fixture
def small_problem():
    return make_small_problem()


@pytest.fixture
def identity_problem():
    """A = I、无噪声"""
    n = 10
    u_true = np.linspace(1.0, 2.0, n)
    return InverseProblem(name="identity", operator=identity(n), u_true=u_true, y_clean=u_true.copy(),
                          b=u_true.copy(), delta=0.0, seed=0)


@pytest.fixture
def small_problem_factory():
    return make_small_problem
