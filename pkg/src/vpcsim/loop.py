"""Two-cadence feedback simulation.

The slow tier is a scripted list of setpoint broadcasts; the fast tier runs
every tick. Each tick:

1. apply the events due at this tick,
2. solve the circuit and record what the PMUs see,
3. let every controller update its injection from its own measurement.

The update made at tick ``t`` is therefore first visible in the record of
tick ``t + 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .controllers import (
    S_MAX,
    Controller,
    MagnitudeTarget,
    PhasorTarget,
    pfc_feedback_step,
    solve_scale,
    solve_with_power,
)
from .errors import Infeasible, NonConvergent
from .feeder import CircuitSolution, Feeder, add_injections

MFC_TOL = 1e-9


@dataclass(frozen=True)
class SetpointUpdate:
    targets: tuple

    def __init__(self, targets: Sequence[Controller]):
        object.__setattr__(self, "targets", tuple(targets))


@dataclass(frozen=True)
class DisturbanceStep:
    delta: dict


Event = Union[SetpointUpdate, DisturbanceStep]


@dataclass
class Timeline:
    events: list = field(default_factory=list)  # (tick, Event) pairs
    ticks_per_broadcast: int = 1
    controller_gain: float = 1.0

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda te: te[0])
        if self.ticks_per_broadcast < 1:
            raise ValueError("ticks_per_broadcast must be >= 1")
        if not 0.0 < self.controller_gain <= 1.0:
            raise ValueError("controller_gain must lie in (0, 1]")

    def due(self, tick: int) -> list:
        """Events scheduled for ``tick``; setpoints are held until the next broadcast tick."""
        return [ev for t, ev in self.events if t == tick]

    @property
    def last_event_tick(self) -> int:
        return self.events[-1][0] if self.events else -1


@dataclass
class TickRecord:
    tick: int
    voltages: dict
    line_currents: dict
    injections: dict
    errors: dict
    flags: list = field(default_factory=list)


@dataclass
class LoopTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, k):
        return self.records[k]

    def errors(self, node) -> np.ndarray:
        return np.array([r.errors[node] for r in self.records])

    def max_errors(self) -> np.ndarray:
        return np.array([max(r.errors.values(), default=0.0) for r in self.records])

    def flagged(self, flag: str) -> Optional[int]:
        """First tick carrying ``flag``, or None."""
        for r in self.records:
            if flag in r.flags:
                return r.tick
        return None

    def write_csv(self, fh) -> None:
        if not self.records:
            return
        first = self.records[0]
        nodes = list(first.voltages)
        lines = list(first.line_currents)
        ctrl = list(first.injections)
        header = ["tick"]
        header += [f"v{part}_{n}" for n in nodes for part in ("re", "im")]
        header += [f"i{part}_{u}_{d}" for (u, d) in lines for part in ("re", "im")]
        header += [f"inj{part}_{n}" for n in ctrl for part in ("re", "im")]
        header += [f"err_{n}" for n in ctrl] + ["flags"]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in self.records:
            row = [r.tick]
            for n in nodes:
                row += [repr(r.voltages[n].real), repr(r.voltages[n].imag)]
            for key in lines:
                row += [repr(r.line_currents[key].real), repr(r.line_currents[key].imag)]
            for n in ctrl:
                row += [repr(r.injections[n].real), repr(r.injections[n].imag)]
            row += [repr(r.errors[n]) for n in ctrl]
            row.append(";".join(r.flags))
            w.writerow(row)


class _Mfc:
    """Magnitude tracker acting on its own Thevenin view.

    Each tick it infers the open-circuit voltage from the measured phasor and
    its own adjustment current, ``v_open = v - Z_est * i_adj``, solves the
    scalar ray problem on that local model by a bounded bracketed bisection,
    and moves ``gain`` of the way toward the answer. Other controllers and
    disturbances only enter through the measurement.
    """

    def __init__(self, target: MagnitudeTarget, z_est: complex, s_max: float = S_MAX):
        self.target = target
        self.z_est = z_est
        self.s = 0.0
        self.s_max = s_max
        self.infeasible = False

    def retarget(self, target: MagnitudeTarget):
        self.target = target
        self.infeasible = False

    @property
    def power(self) -> complex:
        return self.s * self.target.ray

    def update(self, measured: complex, adjustment_current: complex, gain: float) -> float:
        if abs(abs(measured) - self.target.target_magnitude) <= MFC_TOL:
            return self.s
        v_open = measured - self.z_est * adjustment_current
        try:
            s_star = solve_scale(v_open, self.z_est, self.target, self.s_max)[0]
        except (Infeasible, NonConvergent):
            self.infeasible = True
            return self.s
        self.infeasible = False
        self.s += gain * (s_star - self.s)
        return self.s


def run_loop(
    feeder: Feeder,
    initial_background: Mapping,
    controllers: Sequence[Controller],
    timeline: Timeline,
    ticks: int,
    sequential: bool = False,
    impedance_error: float = 1.0,
    noise_sigma: float = 0.0,
    seed: Optional[int] = None,
) -> LoopTrace:
    """Simulate the fast feedback tier for ``ticks`` ticks.

    PFCs start from the background injection at their node and use
    ``impedance_error * Z[p, p]`` as their impedance estimate. MFCs start
    with zero adjustment. An MFC that cannot bracket its target, or whose
    adjustment collapses the power flow, is flagged ``infeasible:<node>``
    and holds its last good adjustment.
    """
    if ticks < 1:
        raise ValueError("ticks must be >= 1")
    rng = np.random.default_rng(seed)
    background = {n: complex(i) for n, i in initial_background.items()}
    pfc = {c.node: c for c in controllers if isinstance(c, PhasorTarget)}
    Z = feeder.impedance_matrix
    z_est = {c.node: impedance_error * Z[feeder.index[c.node], feeder.index[c.node]] for c in controllers}
    mfc = {c.node: _Mfc(c, z_est[c.node]) for c in controllers if isinstance(c, MagnitudeTarget)}
    pfc_inj = {n: background.get(n, 0j) for n in pfc}
    trace = LoopTrace()
    pending = []
    sol, mfc_currents = _solve(feeder, background, pfc_inj, mfc)

    for tick in range(ticks):
        flags = []
        events = []
        for ev in timeline.due(tick):
            if isinstance(ev, DisturbanceStep):
                background = add_injections(background, ev.delta)
                events.append(ev)
            else:
                pending.append(ev)
        if pending and tick % timeline.ticks_per_broadcast == 0:
            events.extend(pending)
            for ev in pending:
                for c in ev.targets:
                    if isinstance(c, PhasorTarget):
                        pfc[c.node] = c
                    else:
                        mfc[c.node].retarget(c)
            pending = []
        if events:
            sol, mfc_currents = _solve(feeder, background, pfc_inj, mfc)

        injections = {n: pfc_inj[n] for n in pfc}
        for n in mfc:
            injections[n] = background.get(n, 0j) + mfc_currents.get(n, 0j)
        errors = {n: abs(sol.voltages[n] - c.target) for n, c in pfc.items()}
        errors.update({n: abs(abs(sol.voltages[n]) - m.target.target_magnitude) for n, m in mfc.items()})
        for n, m in mfc.items():
            if m.infeasible:
                flags.append(f"infeasible:{n}")
        trace.records.append(TickRecord(tick, dict(sol.voltages), dict(sol.line_currents),
                                        injections, errors, flags))

        order = list(pfc) + list(mfc)
        if sequential:
            for n in order:
                prev_s = {n: mfc[n].s} if n in mfc else {}
                _step_one(n, sol, pfc, mfc, mfc_currents, pfc_inj, z_est, timeline, noise_sigma, rng)
                sol, mfc_currents = _solve_guarded(feeder, background, pfc_inj, mfc, list(prev_s), prev_s)
        else:
            prev_s = {n: m.s for n, m in mfc.items()}
            for n in order:
                _step_one(n, sol, pfc, mfc, mfc_currents, pfc_inj, z_est, timeline, noise_sigma, rng)
            moved = [n for n in mfc if mfc[n].s != prev_s[n]]
            sol, mfc_currents = _solve_guarded(feeder, background, pfc_inj, mfc, moved, prev_s)
    return trace


def _measure(v: complex, sigma: float, rng) -> complex:
    if sigma <= 0:
        return v
    return v + sigma * complex(rng.standard_normal(), rng.standard_normal()) / math.sqrt(2)


def _step_one(n, sol, pfc, mfc, mfc_currents, pfc_inj, z_est, timeline, sigma, rng):
    v = _measure(sol.voltages[n], sigma, rng)
    if n in pfc:
        pfc_inj[n] = pfc_feedback_step(v, pfc[n], timeline.controller_gain, z_est[n], pfc_inj[n])
    else:
        mfc[n].update(v, mfc_currents.get(n, 0j), timeline.controller_gain)


def _solve(feeder, background, pfc_inj, mfc) -> tuple[CircuitSolution, dict]:
    currents = dict(background)
    currents.update(pfc_inj)
    powers = {n: m.power for n, m in mfc.items()}
    return solve_with_power(feeder, currents, powers)


def _solve_guarded(feeder, background, pfc_inj, mfc, moved, prev_s):
    try:
        return _solve(feeder, background, pfc_inj, mfc)
    except NonConvergent:
        # Power-flow collapse: the moved MFCs asked for more than the
        # network can deliver. Roll them back and flag them.
        for n in moved:
            mfc[n].s = prev_s[n]
            mfc[n].infeasible = True
        return _solve(feeder, background, pfc_inj, mfc)
