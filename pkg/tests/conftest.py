import math

import numpy as np
import pytest

from byzdp import harness
from byzdp.aggregation import AggregatorSpec
from byzdp.algorithm import HyperParams
from byzdp.attack import AttackSpec
from byzdp.problem import QuadraticProblem


def quad_config(algorithm="byz_clip21_sgd2m", G=4, byz_count=0, T=50, seed=0, d=5, zeta=1.0, sigma_noise=0.5,
                hp=None, sigma_omega=0.0, attack="none", agg="mean", nnm=False, **run_kw):
    if hp is None:
        hp = HyperParams(gamma=0.1) if algorithm != "no_dp" else HyperParams.no_dp(0.1)
    return harness.RunConfig(
        algorithm=algorithm, G=G, byz_count=byz_count, T=T, seed=seed,
        problem=harness.ProblemSpec(d=d, zeta=zeta, sigma_noise=sigma_noise),
        hp=hp, privacy=harness.PrivacySpec(sigma_omega=sigma_omega),
        attack=AttackSpec(attack), agg=AggregatorSpec(agg, nnm, byz_count), **run_kw)


def scalar_quadratic(b=0.0):
    """f(x) = x^2 / 2 for one client, shifted to ``b``."""
    return QuadraticProblem(np.array([[1.0]]), np.array([[b]]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


INF = math.inf


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE, key=lambda k: (int(str(k).rstrip("abc")), str(k))):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
