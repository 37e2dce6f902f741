"""Disturbance sensitivities: closed forms for the four-node configurations and
a central-difference oracle for arbitrary feeders and controller mixes.

Four-node chain 0-1-2-3. Configurations (PCN = phasor controlled node):

voltage table                          line-flow table
row  observe  disturb  PCN             row  observe  disturb  PCN
1    v1       i3       2               1    i01      i3       2
2    v3       i1       2               2    i12      i1       2
3    v1       i2       3               3    i01      i1       2
4    v3       i2       1
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .controllers import Controller, PhasorTarget, equilibrate
from .errors import InvalidRow
from .feeder import Feeder, solve

CR_TOL = 1e-6

VOLTAGE_ROWS = {
    1: {"observe": ("voltage", 1), "disturb": 3, "pcn": 2},
    2: {"observe": ("voltage", 3), "disturb": 1, "pcn": 2},
    3: {"observe": ("voltage", 1), "disturb": 2, "pcn": 3},
    4: {"observe": ("voltage", 3), "disturb": 2, "pcn": 1},
}

LINE_FLOW_ROWS = {
    1: {"observe": ("current", (0, 1)), "disturb": 3, "pcn": 2},
    2: {"observe": ("current", (1, 2)), "disturb": 1, "pcn": 2},
    3: {"observe": ("current", (0, 1)), "disturb": 1, "pcn": 2},
}


@dataclass(frozen=True)
class Observable:
    """What to differentiate.

    ``kind`` is one of ``voltage``, ``current``, ``voltage_magnitude`` or
    ``current_magnitude``; ``element`` is a node id for voltages and an
    ``(upstream, downstream)`` key for currents.
    """

    kind: str
    element: object

    KINDS = ("voltage", "current", "voltage_magnitude", "current_magnitude")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}")

    @property
    def is_magnitude(self) -> bool:
        return self.kind.endswith("magnitude")

    def read(self, solution) -> complex:
        if self.kind.startswith("voltage"):
            val = solution.voltages[self.element]
        else:
            val = solution.line_currents[tuple(self.element)]
        return complex(abs(val)) if self.is_magnitude else complex(val)


@dataclass(frozen=True)
class SensitivityQuery:
    feeder: Feeder
    background: Mapping
    controllers: Sequence[Controller]
    disturbance_node: object
    observable: Observable

    def __post_init__(self):
        self.feeder.check_node(self.disturbance_node)
        if self.disturbance_node == self.feeder.slack:
            raise ValueError("the disturbance node cannot be the slack")
        if self.observable.kind.startswith("voltage"):
            self.feeder.check_node(self.observable.element)
        elif tuple(self.observable.element) not in self.feeder.line_by_key:
            raise ValueError(f"unknown line {self.observable.element!r}")


@dataclass(frozen=True)
class SensitivityValue:
    """Either a complex derivative or, for non-analytic responses, the real
    2x2 Jacobian ``[[dRe/dx, dRe/dy], [dIm/dx, dIm/dy]]`` with respect to the
    real (x) and imaginary (y) parts of the disturbance current."""

    analytic: Optional[complex] = None
    jacobian: Optional[np.ndarray] = field(default=None, compare=False)

    @property
    def kind(self) -> str:
        return "analytic_complex" if self.analytic is not None else "jacobian2x2"


def table1_sensitivity(row: int, z01: complex, z12: complex, z23: complex, with_vpc: bool) -> complex:
    """Closed-form voltage sensitivity for the four-node voltage configurations."""
    if row not in VOLTAGE_ROWS:
        raise InvalidRow(f"voltage table has rows 1-4, got {row!r}")
    if not with_vpc:
        return z01 + z12 if row == 4 else complex(z01)
    if row in (1, 2):
        return 0j
    if row == 3:
        return z01 * z23 / (z01 + z12 + z23)
    return complex(z12)


def table2_sensitivity(row: int, z01: complex, z12: complex, with_vpc: bool) -> complex:
    """Closed-form line-current sensitivity for the four-node line-flow configurations."""
    if row not in LINE_FLOW_ROWS:
        raise InvalidRow(f"line-flow table has rows 1-3, got {row!r}")
    if not with_vpc:
        return 0j if row == 2 else -1 + 0j
    if row == 1:
        return 0j
    if row == 2:
        return z01 / (z01 + z12)
    return -z12 / (z01 + z12)


def table_query(table: int, row: int, impedances, with_vpc: bool,
                background: Optional[Mapping] = None) -> SensitivityQuery:
    """Four-node chain query reproducing one row of the voltage (1) or line-flow (2) table.

    The PCN target is the PCN voltage under ``background``.
    """
    rows = {1: VOLTAGE_ROWS, 2: LINE_FLOW_ROWS}.get(table)
    if rows is None or row not in rows:
        raise InvalidRow(f"no row {row!r} in table {table!r}")
    cfg = rows[row]
    zs = list(impedances)
    if len(zs) == 2:
        zs.append(zs[-1])
    feeder = Feeder.chain(zs)
    background = dict(background or {})
    controllers = []
    if with_vpc:
        v = solve(feeder, background).voltages[cfg["pcn"]]
        controllers.append(PhasorTarget(cfg["pcn"], v))
    kind, element = cfg["observe"]
    return SensitivityQuery(feeder, background, controllers, cfg["disturb"], Observable(kind, element))


def numeric_sensitivity(query: SensitivityQuery, step: float = 1e-6) -> SensitivityValue:
    """Central-difference sensitivity of the observable to the disturbance current.

    Every perturbed point re-equilibrates all controllers. The result is a
    complex derivative when the real- and imaginary-direction derivatives
    satisfy Cauchy-Riemann, otherwise the real Jacobian.
    """
    if not step > 0:
        raise ValueError("step must be positive")

    def f(delta):
        inj = dict(query.background)
        inj[query.disturbance_node] = complex(inj.get(query.disturbance_node, 0j)) + delta
        sol, _ = equilibrate(query.feeder, inj, query.controllers)
        return query.observable.read(sol)

    d_re = (f(step) - f(-step)) / (2 * step)
    d_im = (f(1j * step) - f(-1j * step)) / (2 * step)
    jac = np.array([[d_re.real, d_im.real], [d_re.imag, d_im.imag]])
    if not query.observable.is_magnitude and abs(d_re - (-1j) * d_im) < CR_TOL * max(1.0, abs(d_re)):
        return SensitivityValue(analytic=complex(d_re), jacobian=jac)
    return SensitivityValue(jacobian=jac)


def table_report(impedances=(0.5 + 0.5j, 0.5 + 0.5j, 0.5 + 0.5j), step: float = 1e-6) -> list[dict]:
    """Analytic-vs-numeric rows for every table configuration, open loop and with VPC."""
    z01, z12, z23 = impedances
    out = []
    for table, rows in ((1, VOLTAGE_ROWS), (2, LINE_FLOW_ROWS)):
        for row in rows:
            for vpc in (False, True):
                if table == 1:
                    analytic = table1_sensitivity(row, z01, z12, z23, vpc)
                else:
                    analytic = table2_sensitivity(row, z01, z12, vpc)
                num = numeric_sensitivity(table_query(table, row, impedances, vpc), step)
                value = num.analytic if num.analytic is not None else complex("nan")
                out.append({
                    "table": table,
                    "row": row,
                    "vpc": vpc,
                    "analytic": analytic,
                    "numeric": value,
                    "abs_diff": abs(analytic - value),
                })
    return out
