"""Independent reference computations for the tests.

The nodal oracle assembles the bus admittance matrix and solves it with
some nodes held at fixed voltages. Holding a node fixed is exactly what a
phasor controller does at equilibrium, so it gives a second route to every
VPC quantity without going through the impedance kernel.
"""

from __future__ import annotations

import numpy as np


def nodal_solve(nodes, lines, slack_voltage, injections, fixed=None):
    """Solve ``Y v = i`` with the slack and every node in ``fixed`` pinned.

    Args:
        nodes: node ids, slack first.
        lines: iterable of ``(up, down, z)``.
        slack_voltage: slack phasor.
        injections: node -> injected current (ignored at pinned nodes).
        fixed: node -> pinned voltage phasor.

    Returns:
        ``(voltages, line_currents, pinned_injections)``; line currents are
        ``(v_up - v_down) / z`` keyed by ``(up, down)``.
    """
    fixed = dict(fixed or {})
    fixed[nodes[0]] = slack_voltage
    idx = {n: k for k, n in enumerate(nodes)}
    n = len(nodes)
    Y = np.zeros((n, n), dtype=complex)
    for up, down, z in lines:
        y = 1.0 / z
        a, b = idx[up], idx[down]
        Y[a, a] += y
        Y[b, b] += y
        Y[a, b] -= y
        Y[b, a] -= y
    pinned = [idx[k] for k in fixed]
    free = [k for k in range(n) if k not in pinned]
    v = np.zeros(n, dtype=complex)
    for node, val in fixed.items():
        v[idx[node]] = val
    i = np.zeros(n, dtype=complex)
    for node, val in injections.items():
        i[idx[node]] += val
    if free:
        rhs = i[free] - Y[np.ix_(free, pinned)] @ v[pinned]
        v[free] = np.linalg.solve(Y[np.ix_(free, free)], rhs)
    full_i = Y @ v
    voltages = {node: complex(v[idx[node]]) for node in nodes}
    currents = {(u, d): complex((v[idx[u]] - v[idx[d]]) / z) for u, d, z in lines}
    pinned_inj = {node: complex(full_i[idx[node]]) for node in fixed if node != nodes[0]}
    return voltages, currents, pinned_inj


def random_tree(rng, n_nodes):
    """Random radial feeder as ``(nodes, lines)``; every node hangs off an earlier one."""
    nodes = list(range(n_nodes))
    lines = []
    for k in range(1, n_nodes):
        parent = int(rng.integers(0, k))
        z = complex(rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0))
        lines.append((parent, k, z))
    return nodes, lines
