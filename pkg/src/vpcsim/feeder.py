"""Radial feeder model and exact solve under constant-current injections.

All quantities are per unit. Injections are currents flowing *into* the
network at a node; line currents are oriented from the upstream node toward
the downstream node, so for a chain 0-1-2 the KCL at node 1 reads
``i01 = -i1 + i12``.

Because every injection is a constant current, node voltages are affine in
the injections::

    v_k = v_slack + sum_m Z[k, m] * i_m

where ``Z[k, m]`` is the total impedance of the lines shared by the
slack-to-k and slack-to-m paths.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Mapping, Optional

import numpy as np

from .errors import FeederError, UnknownNode

Node = Hashable
LineKey = tuple  # (upstream, downstream)


def _check_finite(z: complex, what: str) -> complex:
    z = complex(z)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise FeederError(f"{what} must be finite, got {z!r}")
    return z


def polar(z: complex) -> tuple[float, float]:
    """Return ``(|z|, angle)`` with the angle in (-pi, pi]."""
    ang = cmath.phase(z)
    if ang <= -math.pi:
        ang = math.pi
    return abs(z), ang


def phasor(magnitude: float, angle_deg: float = 0.0) -> complex:
    return cmath.rect(magnitude, math.radians(angle_deg))


@dataclass(frozen=True)
class Line:
    up: Node
    down: Node
    z: complex
    ampacity: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "z", _check_finite(self.z, f"impedance of line {self.key}"))
        if abs(self.z) == 0:
            raise FeederError(f"line {self.key} has zero impedance")
        if self.ampacity is not None and not (self.ampacity > 0 and math.isfinite(self.ampacity)):
            raise FeederError(f"line {self.key} ampacity must be positive, got {self.ampacity!r}")

    @property
    def key(self) -> LineKey:
        return (self.up, self.down)


@dataclass(frozen=True)
class Feeder:
    """Radial feeder rooted at ``nodes[0]`` (the substation / slack bus).

    Args:
        nodes: Node ids; the first one is the slack.
        lines: One line per non-slack node, connecting it to its parent.
        slack_voltage: Fixed substation voltage phasor.
    """

    nodes: tuple
    lines: tuple
    slack_voltage: complex = 1 + 0j

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "slack_voltage", _check_finite(self.slack_voltage, "slack voltage"))
        if not self.nodes:
            raise FeederError("feeder needs at least the slack node")
        if len(set(self.nodes)) != len(self.nodes):
            raise FeederError("node ids must be unique")
        known = set(self.nodes)
        parents: dict = {}
        for line in self.lines:
            if not isinstance(line, Line):
                raise FeederError(f"expected Line, got {type(line).__name__}")
            for n in (line.up, line.down):
                if n not in known:
                    raise UnknownNode(n)
            if line.down == self.slack:
                raise FeederError(f"line {line.key} feeds into the slack node")
            if line.down in parents:
                raise FeederError(f"node {line.down!r} has more than one upstream line")
            parents[line.down] = line
        missing = [n for n in self.nodes[1:] if n not in parents]
        if missing:
            raise FeederError(f"nodes without an upstream line: {missing!r}")
        # Every node must reach the slack without revisiting a node.
        for n in self.nodes[1:]:
            seen = {n}
            cur = n
            while cur != self.slack:
                cur = parents[cur].up
                if cur in seen:
                    raise FeederError(f"cycle through node {cur!r}")
                seen.add(cur)

    @classmethod
    def chain(cls, impedances: Iterable[complex], slack_voltage: complex = 1 + 0j) -> "Feeder":
        """Chain 0-1-...-n with the given line impedances, in order from the slack."""
        zs = list(impedances)
        nodes = tuple(range(len(zs) + 1))
        lines = tuple(Line(k, k + 1, z) for k, z in enumerate(zs))
        return cls(nodes, lines, slack_voltage)

    @property
    def slack(self) -> Node:
        return self.nodes[0]

    @cached_property
    def index(self) -> dict:
        return {n: k for k, n in enumerate(self.nodes)}

    @cached_property
    def upstream_line(self) -> dict:
        return {line.down: line for line in self.lines}

    @cached_property
    def children(self) -> dict:
        out = {n: [] for n in self.nodes}
        for line in self.lines:
            out[line.up].append(line.down)
        return out

    @cached_property
    def line_by_key(self) -> dict:
        return {line.key: line for line in self.lines}

    @cached_property
    def _order(self) -> tuple:
        # Breadth-first from the slack: parents always precede children.
        order = [self.slack]
        for n in order:
            order.extend(self.children[n])
        return tuple(order)

    def check_node(self, node: Node) -> None:
        if node not in self.index:
            raise UnknownNode(node)

    def path(self, node: Node) -> list:
        """Lines from the slack down to ``node``, slack end first."""
        self.check_node(node)
        lines = []
        while node != self.slack:
            line = self.upstream_line[node]
            lines.append(line)
            node = line.up
        return lines[::-1]

    def subtree(self, node: Node) -> list:
        self.check_node(node)
        out = [node]
        for n in out:
            out.extend(self.children[n])
        return out

    @cached_property
    def impedance_matrix(self) -> np.ndarray:
        """Common-path impedance kernel indexed like ``nodes`` (slack row/column zero)."""
        n = len(self.nodes)
        Z = np.zeros((n, n), dtype=complex)
        for node in self._order[1:]:
            k = self.index[node]
            line = self.upstream_line[node]
            p = self.index[line.up]
            # Row k inherits its parent's row; only the self/subtree part grows.
            Z[k, :] = Z[p, :]
            Z[:, k] = Z[:, p]
            Z[k, k] = Z[p, p] + line.z
        Z.setflags(write=False)
        return Z

    def common_path_impedance(self, a: Node, b: Node) -> complex:
        self.check_node(a)
        self.check_node(b)
        return complex(self.impedance_matrix[self.index[a], self.index[b]])

    def injection_vector(self, injections: Mapping) -> np.ndarray:
        vec = np.zeros(len(self.nodes), dtype=complex)
        for node, i in injections.items():
            self.check_node(node)
            if node == self.slack:
                raise FeederError("the slack node cannot carry an injection")
            vec[self.index[node]] += _check_finite(i, f"injection at node {node!r}")
        return vec


def common_path_impedance(feeder: Feeder, a: Node, b: Node) -> complex:
    return feeder.common_path_impedance(a, b)


@dataclass(frozen=True)
class CircuitSolution:
    voltages: dict
    line_currents: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-friendly view with ``[re, im]`` pairs and ``"up-down"`` line keys."""
        return {
            "voltages": {str(n): [v.real, v.imag] for n, v in self.voltages.items()},
            "line_currents": {f"{u}-{d}": [i.real, i.imag] for (u, d), i in self.line_currents.items()},
        }


def solve(feeder: Feeder, injections: Mapping) -> CircuitSolution:
    """Node voltages and oriented line currents for constant-current injections.

    Raises:
        UnknownNode: if an injection references a node not in ``feeder``.
    """
    inj = feeder.injection_vector(injections)
    v = feeder.slack_voltage + feeder.impedance_matrix @ inj
    # Accumulate subtree injections bottom-up; the line into a node carries
    # minus the total injection of that node's subtree.
    subtotal = inj.copy()
    for node in reversed(feeder._order[1:]):
        parent = feeder.upstream_line[node].up
        subtotal[feeder.index[parent]] += subtotal[feeder.index[node]]
    currents = {
        line.key: complex(-subtotal[feeder.index[line.down]]) for line in feeder.lines
    }
    voltages = {n: complex(v[k]) for k, n in enumerate(feeder.nodes)}
    voltages[feeder.slack] = feeder.slack_voltage
    return CircuitSolution(voltages, currents)


def line_flow_magnitudes(solution: CircuitSolution) -> dict:
    return {key: abs(i) for key, i in solution.line_currents.items()}


def ampacity_violations(feeder: Feeder, solution: CircuitSolution) -> dict:
    """Lines whose current magnitude exceeds their ampacity, mapped to the overload."""
    out = {}
    for line in feeder.lines:
        if line.ampacity is None:
            continue
        over = abs(solution.line_currents[line.key]) - line.ampacity
        if over > 0:
            out[line.key] = over
    return out


def add_injections(*sets: Mapping) -> dict:
    out: dict = {}
    for s in sets:
        for node, i in s.items():
            out[node] = out.get(node, 0j) + complex(i)
    return out
