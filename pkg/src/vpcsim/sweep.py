"""Power-factor sweeps of a node-1 disturbance on the 0-1-2(-3) chain.

Each grid point solves the disturbed circuit open loop, with a phasor
controller at node 2 and with each magnitude controller at node 2, and
reports ``|i01|`` for all of them together with the upstream bounds.

All current columns are divided by the scenario's ``scale`` (the
pre-disturbance ``|i01|`` for the non-nominal baselines), so the baseline
row reads ``i01_before = 1``. The disturbance magnitude is given in the same
normalized units.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, root

from . import __version__
from .bounds import same_xr, share
from .controllers import (
    MagnitudeTarget,
    PhasorTarget,
    RayFamily,
    mfc_equilibrium,
    pfc_equilibrium,
)
from .errors import CalibrationFailed, ComputationError
from .feeder import Feeder, add_injections, phasor, solve

CALIBRATION_TOL = 1e-8
DEFAULT_MAGNITUDE = 0.2
# The nominal baseline is linear in the disturbance only to first order; a
# small step keeps the second-order |v2| change below the first-order one.
FIG7_MAGNITUDE = 0.005
CHAIN_Z = 0.5 + 0.5j
UPSTREAM = (0, 1)


class PfSign(str, Enum):
    LAGGING = "lagging"
    LEADING = "leading"


class Direction(str, Enum):
    LOAD = "load"
    GENERATION = "generation"


@dataclass(frozen=True)
class DisturbanceSpec:
    """A disturbance described by its apparent power at nominal voltage.

    Lagging extracts VARs and leading injects them, whatever the direction
    of the real power.
    """

    node: object
    magnitude: float
    pf: float
    pf_sign: PfSign = PfSign.LAGGING
    direction: Direction = Direction.LOAD

    def __post_init__(self):
        object.__setattr__(self, "pf_sign", PfSign(self.pf_sign))
        object.__setattr__(self, "direction", Direction(self.direction))
        if not 0.0 <= self.pf <= 1.0:
            raise ValueError(f"power factor must lie in [0, 1], got {self.pf!r}")
        if not self.magnitude >= 0:
            raise ValueError(f"magnitude must be >= 0, got {self.magnitude!r}")


def disturbance_to_current(spec: DisturbanceSpec) -> complex:
    q = 1.0 if spec.pf_sign is PfSign.LAGGING else -1.0
    p = spec.pf if spec.direction is Direction.LOAD else -spec.pf
    extracted = spec.magnitude * complex(p, q * math.sqrt(max(0.0, 1.0 - spec.pf ** 2)))
    return (-extracted).conjugate()


def grid17() -> list:
    """pf 0 lagging up to 1 in steps of 0.1, then 0.95 down to 0.7 leading."""
    lag = [(round(0.1 * k, 2), PfSign.LAGGING) for k in range(11)]
    lead = [(round(0.95 - 0.05 * k, 2), PfSign.LEADING) for k in range(6)]
    return lag + lead


def grid13() -> list:
    """pf 0.7 lagging up to 1 in steps of 0.05, then back down to 0.7 leading."""
    lag = [(round(0.7 + 0.05 * k, 2), PfSign.LAGGING) for k in range(7)]
    lead = [(round(0.95 - 0.05 * k, 2), PfSign.LEADING) for k in range(6)]
    return lag + lead


@dataclass
class Scenario:
    name: str
    feeder: Feeder
    background: dict
    disturbance_node: object = 1
    magnitude: float = DEFAULT_MAGNITUDE  # normalized units
    direction: Direction = Direction.LOAD
    vpc: Optional[PhasorTarget] = None
    mfcs: list = field(default_factory=list)
    scale: float = 1.0
    grid: list = field(default_factory=grid17)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.direction = Direction(self.direction)
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def labels(self) -> list:
        return [m.label for m in self.mfcs]

    def baseline(self):
        return solve(self.feeder, self.background)

    def metadata(self) -> dict:
        """Every parameter needed to rebuild the scenario, JSON-ready."""
        pair = lambda z: [complex(z).real, complex(z).imag]
        return {
            "name": self.name,
            "version": __version__,
            "slack_voltage": pair(self.feeder.slack_voltage),
            "lines": [{"from": l.up, "to": l.down, "z": pair(l.z)} for l in self.feeder.lines],
            "background": {str(n): pair(i) for n, i in self.background.items()},
            "disturbance_node": self.disturbance_node,
            "disturbance_magnitude": self.magnitude,
            "disturbance_magnitude_units": "normalized by scale",
            "direction": self.direction.value,
            "scale": self.scale,
            "vpc": None if self.vpc is None else {"node": self.vpc.node, "target": pair(self.vpc.target)},
            "mfcs": [
                {"node": m.node, "target": m.target_magnitude, "apf": m.apf,
                 "family": m.ray_family.value, "label": m.label}
                for m in self.mfcs
            ],
            "grid": [[pf, sign.value] for pf, sign in self.grid],
            **self.notes,
        }


# -- scenario builders -------------------------------------------------------

def _constant_current_at(feeder: Feeder, powers: dict, tol: float = 1e-13, max_iter: int = 500) -> dict:
    """Constant currents that draw ``powers`` (injected S) at the voltages they produce."""
    inj = {n: 0j for n in powers}
    for _ in range(max_iter):
        sol = solve(feeder, inj)
        new = {n: (s / sol.voltages[n]).conjugate() for n, s in powers.items()}
        delta = max(abs(new[n] - inj[n]) for n in powers)
        inj = new
        if delta <= tol:
            return inj
    raise CalibrationFailed("background power flow did not converge")


def build_fig4_scenario(magnitude: float = DEFAULT_MAGNITUDE, grid=None,
                        background_pf: float = 0.95) -> Scenario:
    """Loaded chain with ``|v1| = 0.97`` and ``|v2| = 0.95`` before the disturbance.

    Nodes 1 and 2 carry loads at ``background_pf`` lagging whose real parts
    are calibrated to the two voltage magnitudes. A VPC at node 2 holds the
    pre-disturbance phasor.
    """
    feeder = Feeder.chain([CHAIN_Z, CHAIN_Z, CHAIN_Z])
    q = math.sqrt(1 - background_pf ** 2)

    def background(x):
        p1, p2 = x
        return _constant_current_at(feeder, {
            1: -p1 * complex(1, q / background_pf),
            2: -p2 * complex(1, q / background_pf),
        })

    def residual(x):
        sol = solve(feeder, background(x))
        return [abs(sol.voltages[1]) - 0.97, abs(sol.voltages[2]) - 0.95]

    res = root(residual, [0.02, 0.02], method="hybr", tol=1e-12)
    if not res.success or max(abs(r) for r in residual(res.x)) > CALIBRATION_TOL:
        raise CalibrationFailed(f"could not reach |v1| = 0.97, |v2| = 0.95: {res.message}")
    bg = background(res.x)
    sol = solve(feeder, bg)
    return Scenario(
        name="fig4",
        feeder=feeder,
        background=bg,
        magnitude=magnitude,
        direction=Direction.LOAD,
        vpc=PhasorTarget(2, sol.voltages[2]),
        scale=abs(sol.line_currents[UPSTREAM]),
        grid=list(grid) if grid is not None else grid17(),
        notes={"background_pf": background_pf, "background_real_power": list(map(float, res.x))},
    )


def build_fig5_scenario(magnitude: float = DEFAULT_MAGNITUDE, grid=None) -> Scenario:
    """High-voltage baseline: both nodes inject P and absorb Q in a 3:1 ratio.

    The common size is calibrated so that ``|v2| = 1.05``. The disturbance
    is a generator at node 1.
    """
    feeder = Feeder.chain([CHAIN_Z, CHAIN_Z, CHAIN_Z])
    unit = 0.06 - 0.02j

    def background(k):
        return _constant_current_at(feeder, {1: k * unit, 2: k * unit})

    def residual(k):
        return abs(solve(feeder, background(k)).voltages[2]) - 1.05

    try:
        k = brentq(residual, 0.01, 2.0, xtol=1e-14)
    except ValueError as exc:
        raise CalibrationFailed(f"could not reach |v2| = 1.05: {exc}") from None
    if abs(residual(k)) > CALIBRATION_TOL:
        raise CalibrationFailed("|v2| = 1.05 calibration residual too large")
    bg = background(k)
    sol = solve(feeder, bg)
    v2 = sol.voltages[2]
    return Scenario(
        name="fig5",
        feeder=feeder,
        background=bg,
        magnitude=magnitude,
        direction=Direction.GENERATION,
        vpc=PhasorTarget(2, v2),
        mfcs=[MagnitudeTarget(2, 1.05, apf) for apf in (0.0, 0.5, 1.0)],
        scale=abs(sol.line_currents[UPSTREAM]),
        grid=list(grid) if grid is not None else grid13(),
        notes={"background_power_scale": k, "v2_angle_deg": math.degrees(np.angle(v2))},
    )


def build_lowv_scenario(magnitude: float = DEFAULT_MAGNITUDE, grid=None) -> Scenario:
    """Low-voltage baseline ``v2 = 0.95 at 1 degree`` with equal injections at nodes 1 and 2."""
    feeder = Feeder.chain([CHAIN_Z, CHAIN_Z, CHAIN_Z])
    v2 = phasor(0.95, 1.0)
    # With i1 = i2 = i the chain gives v2 = 1 + 3 z i.
    i = (v2 - feeder.slack_voltage) / (3 * CHAIN_Z)
    bg = {1: i, 2: i}
    sol = solve(feeder, bg)
    return Scenario(
        name="lowv",
        feeder=feeder,
        background=bg,
        magnitude=magnitude,
        direction=Direction.LOAD,
        vpc=PhasorTarget(2, v2),
        mfcs=[MagnitudeTarget(2, 0.95, apf) for apf in (0.0, 0.5, 1.0)],
        scale=abs(sol.line_currents[UPSTREAM]),
        grid=list(grid) if grid is not None else grid13(),
        notes={"i01_before_unnormalized": abs(sol.line_currents[UPSTREAM])},
    )


def build_fig7_scenario(magnitude: float = FIG7_MAGNITUDE, grid=None) -> Scenario:
    """Nominal baseline: no background injections, every voltage at 1 and ``|i01| = 0``."""
    feeder = Feeder.chain([CHAIN_Z, CHAIN_Z, CHAIN_Z])
    mfcs = [MagnitudeTarget(2, 1.0, apf) for apf in (0.0, 0.5, 1.0)]
    mfcs.append(MagnitudeTarget(2, 1.0, 0.9, RayFamily.CROSS))
    return Scenario(
        name="fig7",
        feeder=feeder,
        background={},
        magnitude=magnitude,
        direction=Direction.LOAD,
        vpc=PhasorTarget(2, 1 + 0j),
        mfcs=mfcs,
        scale=1.0,
        grid=list(grid) if grid is not None else grid17(),
    )


SCENARIOS = {
    "fig4": build_fig4_scenario,
    "fig5": build_fig5_scenario,
    "fig7": build_fig7_scenario,
    "lowv": build_lowv_scenario,
}


# -- sweep driver ------------------------------------------------------------

@dataclass
class SweepRecord:
    pf: float
    pf_sign: PfSign
    i01_before: float
    i01_ol: float
    i01_vpc: float
    i01_vmc: dict  # label -> normalized |i01|, nan when the controller failed
    dp_vpc: float
    dq_vpc: float
    dp_vmc: dict
    dq_vmc: dict
    lemma1a_bound: float
    lemma2_rhs: float
    flags: list = field(default_factory=list)


def run_sweep(scenario: Scenario, pf_grid: Optional[Sequence] = None) -> list[SweepRecord]:
    """One record per grid point, in grid order.

    Controller failures are stored as ``nan`` columns plus a flag such as
    ``infeasible:apf0.9x``; they never abort the sweep.
    """
    grid = scenario.grid if pf_grid is None else pf_grid
    feeder = scenario.feeder
    scale = scenario.scale
    before = abs(scenario.baseline().line_currents[UPSTREAM])
    z01 = feeder.line_by_key[(0, 1)].z
    z12 = feeder.line_by_key[(1, 2)].z
    a = share(z01, z12)
    real_share = same_xr(z01, z12) and 0.0 < a.real < 1.0
    records = []
    for pf, sign in grid:
        spec = DisturbanceSpec(scenario.disturbance_node, scenario.magnitude * scale, pf, sign,
                               scenario.direction)
        delta = disturbance_to_current(spec)
        inj = add_injections(scenario.background, {spec.node: delta})
        flags = []
        i01_ol = abs(solve(feeder, inj).line_currents[UPSTREAM])

        i01_vpc = dp_vpc = dq_vpc = math.nan
        if scenario.vpc is not None:
            try:
                res = pfc_equilibrium(feeder, inj, scenario.vpc)
                after = dict(inj)
                after[scenario.vpc.node] = res.injection_current
                i01_vpc = abs(solve(feeder, after).line_currents[UPSTREAM])
                ds = res.adjustment_power / scale
                dp_vpc, dq_vpc = ds.real, ds.imag
            except ComputationError as exc:
                flags.append(f"{type(exc).__name__.lower()}:vpc")

        vmc, dp, dq = {}, {}, {}
        for m in scenario.mfcs:
            try:
                res = mfc_equilibrium(feeder, inj, m)
                after = dict(inj)
                after[m.node] = res.injection_current
                vmc[m.label] = abs(solve(feeder, after).line_currents[UPSTREAM]) / scale
                ds = res.adjustment_power / scale
                dp[m.label], dq[m.label] = ds.real, ds.imag
            except ComputationError as exc:
                vmc[m.label] = dp[m.label] = dq[m.label] = math.nan
                flags.append(f"{type(exc).__name__.lower()}:{m.label}")

        mag = abs(delta) / scale
        records.append(SweepRecord(
            pf=pf,
            pf_sign=PfSign(sign),
            i01_before=before / scale,
            i01_ol=i01_ol / scale,
            i01_vpc=i01_vpc / scale,
            i01_vmc=vmc,
            dp_vpc=dp_vpc,
            dq_vpc=dq_vpc,
            dp_vmc=dp,
            dq_vmc=dq,
            lemma1a_bound=abs(a) * mag,
            lemma2_rhs=(1 - a.real) * mag ** 2 if real_share else math.nan,
            flags=flags,
        ))
    return records


def csv_header(labels: Sequence[str]) -> list[str]:
    head = ["pf", "pf_sign", "i01_before", "i01_ol", "i01_vpc"]
    head += [f"i01_vmc_{l}" for l in labels]
    head += ["dp_vpc", "dq_vpc"]
    for l in labels:
        head += [f"dp_vmc_{l}", f"dq_vmc_{l}"]
    return head + ["lemma1a_bound", "lemma2_rhs", "flags"]


def write_csv(records: Sequence[SweepRecord], labels: Sequence[str], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(csv_header(labels))
    for r in records:
        row = [repr(r.pf), r.pf_sign.value, repr(r.i01_before), repr(r.i01_ol), repr(r.i01_vpc)]
        row += [repr(r.i01_vmc[l]) for l in labels]
        row += [repr(r.dp_vpc), repr(r.dq_vpc)]
        for l in labels:
            row += [repr(r.dp_vmc[l]), repr(r.dq_vmc[l])]
        row += [repr(r.lemma1a_bound), repr(r.lemma2_rhs), ";".join(r.flags)]
        w.writerow(row)


def write_metadata(scenario: Scenario, fh) -> None:
    json.dump(scenario.metadata(), fh, indent=2, sort_keys=True)
    fh.write("\n")
