"""Randomized property checks run by ``vpcsim verify``.

Every check solves actual circuits (open loop and with a phasor controller)
rather than evaluating the bound formulas against themselves.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .bounds import share
from .controllers import PhasorTarget, pfc_equilibrium
from .feeder import Feeder, add_injections, solve
from .loop import DisturbanceStep, Timeline, run_loop
from .sensitivity import (
    LINE_FLOW_ROWS,
    VOLTAGE_ROWS,
    numeric_sensitivity,
    table1_sensitivity,
    table2_sensitivity,
    table_query,
)
from .sweep import build_fig4_scenario, run_sweep

TABLE_TOL = 1e-7
ZERO_TOL = 1e-9
BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def random_impedance(rng, lo=0.05, hi=1.0) -> complex:
    return complex(rng.uniform(lo, hi), rng.uniform(lo, hi))


def random_current(rng, scale=0.5) -> complex:
    return complex(*rng.normal(0.0, scale, 2))


def vpc_chain_response(z01, z12, background: dict, delta: complex) -> dict:
    """``|i01|`` and ``|i12|`` before, open loop and with node 2 held at its baseline phasor."""
    feeder = Feeder.chain([z01, z12])
    base = solve(feeder, background)
    after = add_injections(background, {1: delta})
    ol = solve(feeder, after)
    res = pfc_equilibrium(feeder, after, PhasorTarget(2, base.voltages[2]))
    ctrl = dict(after)
    ctrl[2] = res.injection_current
    vpc = solve(feeder, ctrl)
    out = {}
    for name, sol in (("bef", base), ("ol", ol), ("vpc", vpc)):
        out[f"i01_{name}"] = abs(sol.line_currents[(0, 1)])
        out[f"i12_{name}"] = abs(sol.line_currents[(1, 2)])
    return out


def check_tables(rng, draws: int = 100) -> CheckResult:
    worst = 0.0
    worst_zero = 0.0
    for _ in range(draws):
        zs = [random_impedance(rng) for _ in range(3)]
        for table, rows in ((1, VOLTAGE_ROWS), (2, LINE_FLOW_ROWS)):
            for row in rows:
                for vpc in (False, True):
                    if table == 1:
                        exact = table1_sensitivity(row, *zs, vpc)
                    else:
                        exact = table2_sensitivity(row, zs[0], zs[1], vpc)
                    num = numeric_sensitivity(table_query(table, row, zs, vpc)).analytic
                    if num is None:
                        return CheckResult("tables", False, f"table {table} row {row} is not analytic")
                    worst = max(worst, abs(exact - num))
                    if table == 1 and row in (1, 2) and vpc:
                        worst_zero = max(worst_zero, abs(num))
    ok = worst < TABLE_TOL and worst_zero < ZERO_TOL
    return CheckResult("tables", ok, f"{draws} draws, max |analytic - numeric| = {worst:.2e}, "
                                     f"max decoupled |d| = {worst_zero:.2e}")


def check_lemma1(rng, draws: int = 10_000) -> CheckResult:
    bad = 0
    for _ in range(draws):
        z01, z12 = random_impedance(rng), random_impedance(rng)
        a = share(z01, z12)
        bg = {1: random_current(rng), 2: random_current(rng)}
        delta = random_current(rng)
        r = vpc_chain_response(z01, z12, bg, delta)
        if r["i01_vpc"] - r["i01_bef"] > abs(a) * abs(delta) + BOUND_SLACK:
            bad += 1
        if r["i12_vpc"] - r["i12_bef"] > abs(1 - a) * abs(delta) + BOUND_SLACK:
            bad += 1
    return CheckResult("lemma1", bad == 0, f"{draws} draws, {bad} violations")


def lemma2_draw(rng):
    """Equal X/R draw whose disturbance raises ``|i01|`` with the VPC in place."""
    theta = rng.uniform(0.05, 1.5)
    z01 = cmath.rect(rng.uniform(0.05, 1.0), theta)
    z12 = cmath.rect(rng.uniform(0.05, 1.0), theta)
    while True:
        bg = {1: random_current(rng), 2: random_current(rng)}
        delta = random_current(rng)
        r = vpc_chain_response(z01, z12, bg, delta)
        if r["i01_vpc"] > r["i01_bef"] * (1 + 1e-9):
            return z01, z12, delta, r


def check_lemma2(rng, draws: int = 10_000) -> CheckResult:
    bad = 0
    min_margin = math.inf
    for _ in range(draws):
        z01, z12, delta, r = lemma2_draw(rng)
        a = share(z01, z12).real
        margin = r["i01_ol"] ** 2 - r["i01_vpc"] ** 2 - (1 - a) * abs(delta) ** 2
        min_margin = min(min_margin, margin)
        if not margin > 0:
            bad += 1
    return CheckResult("lemma2", bad == 0, f"{draws} draws, {bad} violations, min margin {min_margin:.2e}")


def check_pfc_loop(rng, gains=(0.25, 0.5, 1.0)) -> CheckResult:
    """Per-tick error ratio ``|1 - g|`` and steady state against the closed form."""
    feeder = Feeder.chain([random_impedance(rng) for _ in range(3)])
    bg = {1: random_current(rng, 0.1), 2: random_current(rng, 0.1), 3: random_current(rng, 0.1)}
    target = PhasorTarget(2, solve(feeder, bg).voltages[2])
    delta = {1: random_current(rng, 0.1)}
    worst = 0.0
    for g in gains:
        tl = Timeline([(0, DisturbanceStep(delta))], controller_gain=g)
        trace = run_loop(feeder, bg, [target], tl, ticks=120)
        e = trace.errors(2)
        for k in range(1, len(e)):
            if e[k - 1] > 1e-6:
                worst = max(worst, abs(e[k] / e[k - 1] - abs(1 - g)))
        eq = pfc_equilibrium(feeder, add_injections(bg, delta), target).injection_current
        worst = max(worst, abs(trace[-1].injections[2] - eq))
    return CheckResult("pfc_loop", worst < 1e-8, f"max deviation {worst:.2e}")


def check_superposition(rng, draws: int = 100) -> CheckResult:
    """VPC-controlled flows respond linearly to the sum of two disturbances."""
    worst = 0.0
    for _ in range(draws):
        zs = [random_impedance(rng) for _ in range(3)]
        feeder = Feeder.chain(zs)
        bg = {n: random_current(rng) for n in (1, 2, 3)}
        target = PhasorTarget(2, solve(feeder, bg).voltages[2])
        da = {1: random_current(rng), 3: random_current(rng)}
        db = {1: random_current(rng), 3: random_current(rng)}

        def response(d):
            inj = add_injections(bg, d)
            inj[2] = pfc_equilibrium(feeder, inj, target).injection_current
            sol = solve(feeder, inj)
            return np.array([sol.line_currents[l.key] for l in feeder.lines])

        base = response({})
        both = response(add_injections(da, db))
        split = response(da) + response(db) - base
        worst = max(worst, float(np.max(np.abs(both - split))))
    return CheckResult("superposition", worst < 1e-10, f"{draws} draws, max residual {worst:.2e}")


def check_fig4_lemma1a() -> CheckResult:
    records = run_sweep(build_fig4_scenario())
    bad = [r.pf for r in records if r.i01_vpc - r.i01_before > r.lemma1a_bound + BOUND_SLACK]
    return CheckResult("fig4_lemma1a", not bad, f"{len(records)} records, violations at pf {bad}")


def run_all(seed: int = 0, draws: int = 10_000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        check_tables(rng, min(draws, 100)),
        check_lemma1(rng, draws),
        check_lemma2(rng, draws),
        check_pfc_loop(rng),
        check_superposition(rng, min(draws, 100)),
        check_fig4_lemma1a(),
    ]
