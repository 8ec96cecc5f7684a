"""Shared fixtures: instance loading and small numeric helpers."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from valfun.model import ParametricProblem, load_problem

INSTANCE_DIR = Path(__file__).parent / "instances"

#: Every battery instance, in a stable order.
BATTERY = sorted(p.stem for p in INSTANCE_DIR.glob("*.json"))

#: Instances whose constraints do not involve the parameter.
UNPERTURBED = [
    "absmin",
    "bilinear1",
    "bilinear2d",
    "constantobj",
    "degenlp",
    "lp_box01",
    "lp_simplex",
    "lp_skew",
    "multiSxfree",
    "quad2d",
    "quadfit",
]

#: Cost-parametric LP instances with a base point interior to a linearity
#: region of the value function (exactness battery).
LP_COST_INTERIOR = [
    ("bilinear1", "right"),
    ("bilinear2d", "interior"),
    ("degenlp", "base"),
    ("lp_simplex", "base"),
    ("lp_skew", "base"),
]

#: Smooth strict-complementarity points: (instance, point, exact Hessian of
#: the value function at the point), hand-derived.
SMOOTH_POINTS = [
    ("absmin", "base", [[-1.0]]),
    ("quadfit", "edge", [[2.0]]),
    ("slide", "base", [[0.0]]),
    ("shiftbox", "base", [[2.0]]),
    ("quarticshift", "base", [[-2.0]]),
]


def instance_path(name: str) -> Path:
    return INSTANCE_DIR / f"{name}.json"


def load_instance(name: str) -> ParametricProblem:
    return load_problem(instance_path(name))


def instance_raw(name: str) -> dict:
    with open(instance_path(name), "r", encoding="utf-8") as fh:
        return json.load(fh)


#: One line per acceptance criterion, echoed in the terminal summary so the
#: pass/fail verdicts survive pytest's output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20260819)


@pytest.fixture(name="load")
def load_fixture():
    return load_instance
