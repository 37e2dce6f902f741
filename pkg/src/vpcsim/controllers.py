"""Phasor and magnitude feedback controllers.

A phasor feedback controller (PFC) holds the full voltage phasor at its node.
For constant-current injections this is a linear problem with a closed-form
equilibrium. A magnitude feedback controller (MFC) only holds ``|v|`` and
moves its injection along a fixed direction in the (P, Q) plane (the
adjustment power factor, APF). Its adjustment is a constant complex power,
so the equilibrium needs an inner power-flow fixed point and an outer scalar
root-find on the signed adjustment size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    Infeasible,
    NonConvergent,
    SlackNodeNotControllable,
    ZeroImpedanceEstimate,
)
from .feeder import CircuitSolution, Feeder, solve

OUTER_TOL = 1e-9
INNER_TOL = 1e-11
MAX_OUTER = 200
MAX_INNER = 100
S_MAX = 10.0


class RayFamily(str, Enum):
    STANDARD = "standard"
    CROSS = "cross"


@dataclass(frozen=True)
class PhasorTarget:
    node: object
    target: complex

    def __post_init__(self):
        object.__setattr__(self, "target", complex(self.target))
        if not abs(self.target) > 0 or not math.isfinite(abs(self.target)):
            raise ValueError(f"phasor target must be finite and nonzero, got {self.target!r}")


@dataclass(frozen=True)
class MagnitudeTarget:
    node: object
    target_magnitude: float
    apf: float
    ray_family: RayFamily = RayFamily.STANDARD

    def __post_init__(self):
        object.__setattr__(self, "ray_family", RayFamily(self.ray_family))
        if not 0.0 <= self.apf <= 1.0:
            raise ValueError(f"APF must lie in [0, 1], got {self.apf!r}")
        if not 0.0 < self.target_magnitude < 2.0:
            raise ValueError(f"magnitude target must lie in (0, 2), got {self.target_magnitude!r}")

    @property
    def label(self) -> str:
        """Short column label, e.g. ``apf0.5`` or ``apf0.9x`` for the cross family."""
        suffix = "x" if self.ray_family is RayFamily.CROSS else ""
        return f"apf{self.apf:g}{suffix}"

    @property
    def ray(self) -> complex:
        return apf_ray(self.apf, self.ray_family)


Controller = Union[PhasorTarget, MagnitudeTarget]


@dataclass(frozen=True)
class ControllerResult:
    """Outcome of driving one controlled node to its target.

    ``injection_current`` is the total injection at the node (background plus
    adjustment); ``adjustment_*`` are the controller's own contribution.
    ``scale`` is the signed size along the APF ray (MFC only).
    """

    injection_current: complex
    injection_power: complex
    adjustment_current: complex
    adjustment_power: complex
    voltage: complex
    iterations: int
    converged: bool
    scale: Optional[float] = None


def _check_controllable(feeder: Feeder, node) -> None:
    feeder.check_node(node)
    if node == feeder.slack:
        raise SlackNodeNotControllable(f"node {node!r} is the slack and cannot be controlled")


def pfc_equilibrium(feeder: Feeder, background: Mapping, target: PhasorTarget) -> ControllerResult:
    """Injection at the PCN that puts its voltage exactly on the phasor target.

    Any background entry at the PCN is replaced by the returned injection.
    """
    p = target.node
    _check_controllable(feeder, p)
    Z = feeder.impedance_matrix
    k = feeder.index[p]
    zpp = Z[k, k]
    if zpp == 0:
        raise ZeroImpedanceEstimate(f"self impedance at node {p!r} is zero")
    others = {n: i for n, i in background.items() if n != p}
    inj = feeder.injection_vector(others)
    i_p = complex((target.target - feeder.slack_voltage - Z[k, :] @ inj) / zpp)
    prev = complex(background.get(p, 0j))
    return ControllerResult(
        injection_current=i_p,
        injection_power=target.target * i_p.conjugate(),
        adjustment_current=i_p - prev,
        adjustment_power=target.target * (i_p - prev).conjugate(),
        voltage=target.target,
        iterations=0,
        converged=True,
    )


def pfc_feedback_step(
    measured: complex,
    target: PhasorTarget,
    gain: float,
    path_impedance_estimate: complex,
    prev_injection: complex,
) -> complex:
    """One proportional PFC update: move the injection by ``gain * error / Z_est``.

    With an exact self-impedance estimate and fixed disturbances the phasor
    error shrinks by ``|1 - gain|`` per step.
    """
    if not 0.0 < gain <= 1.0:
        raise ValueError(f"gain must lie in (0, 1], got {gain!r}")
    if path_impedance_estimate == 0:
        raise ZeroImpedanceEstimate("impedance estimate is zero")
    return complex(prev_injection) + gain * (target.target - measured) / path_impedance_estimate


def apf_ray(apf: float, ray_family: RayFamily | str = RayFamily.STANDARD) -> complex:
    """Unit direction ``P + jQ`` of an MFC adjustment.

    The standard family moves P and Q with the same sign (injecting both
    raises the voltage, extracting both lowers it). The cross family pairs
    them with opposite signs.
    """
    if not 0.0 <= apf <= 1.0:
        raise ValueError(f"APF must lie in [0, 1], got {apf!r}")
    q = math.sqrt(max(0.0, 1.0 - apf * apf))
    if RayFamily(ray_family) is RayFamily.CROSS:
        q = -q
    return complex(apf, q)


def constant_power_response(v_open: complex, zpp: complex, power: complex,
                            tol: float = INNER_TOL, max_iter: int = MAX_INNER):
    """Current drawn by a constant-power adjustment at a node with Thevenin view
    ``v = v_open + zpp * i``.

    Returns ``(current, voltage, iterations)``.

    Raises:
        NonConvergent: when the fixed point ``i = conj(power / v)`` does not settle.
    """
    i = 0j
    if power == 0:
        return i, v_open, 0
    for it in range(1, max_iter + 1):
        v = v_open + zpp * i
        if v == 0 or not math.isfinite(abs(v)):
            break
        new = (power / v).conjugate()
        if abs(new - i) <= tol:
            return new, v_open + zpp * new, it
        i = new
    raise NonConvergent(f"constant-power fixed point did not converge for S={power:.6g}")


def mfc_equilibrium(
    feeder: Feeder,
    background: Mapping,
    target: MagnitudeTarget,
    s_max: float = S_MAX,
    tol: float = OUTER_TOL,
    inner_tol: float = INNER_TOL,
    max_outer: int = MAX_OUTER,
    max_inner: int = MAX_INNER,
) -> ControllerResult:
    """Adjustment along the APF ray that brings ``|v|`` at the MFC node to target.

    The signed size ``s`` is found by scanning outwards from zero on a
    geometric grid in both directions until the magnitude error changes sign,
    then bisecting. The root closest to ``s = 0`` wins.

    Raises:
        Infeasible: no sign change of the magnitude error within ``|s| <= s_max``.
        NonConvergent: the inner fixed point fails inside a bracketed interval.
    """
    p = target.node
    _check_controllable(feeder, p)
    k = feeder.index[p]
    zpp = complex(feeder.impedance_matrix[k, k])
    v_open = solve(feeder, background).voltages[p]
    try:
        s, di, v, n = solve_scale(v_open, zpp, target, s_max, tol, inner_tol, max_outer, max_inner)
    except Infeasible as exc:
        raise Infeasible(f"node {p!r}: {exc}") from None
    return _mfc_result(background, p, s, target.ray, di, v, n, True)


def solve_scale(v_open: complex, zpp: complex, target: MagnitudeTarget, s_max: float = S_MAX,
                tol: float = OUTER_TOL, inner_tol: float = INNER_TOL,
                max_outer: int = MAX_OUTER, max_inner: int = MAX_INNER):
    """Signed size along the APF ray that puts ``|v_open + zpp * i|`` on target.

    Returns ``(s, current, voltage, iterations)``. Works on any Thevenin view,
    so a feedback controller can call it with its own estimate of ``v_open``.
    """
    ray = target.ray
    count = [0]

    def err(s):
        di, v, it = constant_power_response(v_open, zpp, s * ray, inner_tol, max_inner)
        count[0] += it
        return abs(v) - target.target_magnitude, di, v

    e0, di, v = err(0.0)
    if abs(e0) <= tol:
        return 0.0, di, v, 0

    brackets = []
    for sign in (1.0, -1.0):
        prev_s, prev_e = 0.0, e0
        level = s_max * 2.0 ** -30
        while level <= s_max * (1 + 1e-12):
            s = sign * level
            try:
                e, _, _ = err(s)
            except NonConvergent:
                break
            if e == 0 or (e > 0) != (prev_e > 0):
                brackets.append((prev_s, prev_e, s, e))
                break
            prev_s, prev_e = s, e
            level *= 2.0
    if not brackets:
        raise Infeasible(
            f"|v| cannot reach {target.target_magnitude:g} with APF "
            f"{target.apf:g} ({target.ray_family.value}) for |s| <= {s_max:g}"
        )

    best = None
    for lo, e_lo, hi, e_hi in brackets:
        s, di, v, n, ok = _bisect(err, lo, e_lo, hi, e_hi, tol, max_outer)
        if best is None or abs(s) < abs(best[0]):
            best = (s, di, v, n, ok)
    s, di, v, n, ok = best
    if not ok:
        raise NonConvergent(f"bisection stalled after {n} iterations")
    return s, di, v, n


def _bisect(err, lo, e_lo, hi, e_hi, tol, max_iter):
    mid, e, di, v = lo, e_lo, None, None
    for n in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        try:
            e, di, v = err(mid)
        except NonConvergent:
            raise NonConvergent("inner fixed point failed inside a bracketing interval")
        if abs(e) <= tol:
            return mid, di, v, n, True
        if (e > 0) == (e_lo > 0):
            lo, e_lo = mid, e
        else:
            hi = mid
    return mid, di, v, n, abs(e) <= tol


def _mfc_result(background, p, s, ray, di, v, iterations, converged) -> ControllerResult:
    total = complex(background.get(p, 0j)) + di
    return ControllerResult(
        injection_current=total,
        injection_power=v * total.conjugate(),
        adjustment_current=di,
        adjustment_power=s * ray,
        voltage=v,
        iterations=iterations,
        converged=converged,
        scale=s,
    )


def solve_with_power(feeder: Feeder, currents: Mapping, powers: Mapping,
                     tol: float = INNER_TOL, max_iter: int = 200) -> tuple[CircuitSolution, dict]:
    """Solve with constant-current ``currents`` plus constant-power ``powers``.

    Returns the solution and the currents drawn by the constant-power terms.
    """
    powers = {n: complex(s) for n, s in powers.items() if s != 0}
    extra = {n: 0j for n in powers}
    base = feeder.injection_vector(currents)
    Z = feeder.impedance_matrix
    idx = [feeder.index[n] for n in powers]
    v_open = feeder.slack_voltage + Z @ base
    for _ in range(max_iter):
        vec = np.zeros(len(feeder.nodes), dtype=complex)
        for n, k in zip(powers, idx):
            vec[k] = extra[n]
        v = v_open + Z @ vec
        delta = 0.0
        for n, k in zip(powers, idx):
            if v[k] == 0 or not np.isfinite(v[k]):
                raise NonConvergent("voltage collapse in constant-power solve")
            new = (powers[n] / v[k]).conjugate()
            delta = max(delta, abs(new - extra[n]))
            extra[n] = new
        if delta <= tol:
            total = dict(currents)
            for n, i in extra.items():
                total[n] = total.get(n, 0j) + i
            return solve(feeder, total), extra
    raise NonConvergent("constant-power solve did not converge")


def equilibrate(
    feeder: Feeder,
    background: Mapping,
    controllers: Sequence[Controller],
    tol: float = INNER_TOL,
    max_iter: int = MAX_OUTER,
) -> tuple[CircuitSolution, dict]:
    """Drive every controller to its target simultaneously.

    PFCs are solved jointly (one linear system). MFCs are handled by
    block Gauss-Seidel against the rest of the network. Returns the solved
    circuit and the final total injections.
    """
    pfcs = [c for c in controllers if isinstance(c, PhasorTarget)]
    mfcs = [c for c in controllers if isinstance(c, MagnitudeTarget)]
    nodes = [c.node for c in controllers]
    if len(set(nodes)) != len(nodes):
        raise ConfigError("at most one controller per node")
    for c in controllers:
        _check_controllable(feeder, c.node)

    inj = {n: complex(i) for n, i in background.items()}
    if not mfcs:
        inj.update(_joint_pfc(feeder, inj, pfcs))
        return solve(feeder, inj), inj

    adjust = {c.node: 0j for c in mfcs}
    for _ in range(max_iter):
        cur = dict(inj)
        for n, di in adjust.items():
            cur[n] = cur.get(n, 0j) + di
        cur.update(_joint_pfc(feeder, cur, pfcs))
        delta = 0.0
        for c in mfcs:
            rest = dict(cur)
            rest[c.node] = inj.get(c.node, 0j)
            res = mfc_equilibrium(feeder, rest, c)
            delta = max(delta, abs(res.adjustment_current - adjust[c.node]))
            adjust[c.node] = res.adjustment_current
            cur[c.node] = res.injection_current
        if delta <= tol:
            cur.update(_joint_pfc(feeder, cur, pfcs))
            return solve(feeder, cur), cur
    raise NonConvergent("controller equilibrium did not converge")


def _joint_pfc(feeder: Feeder, injections: Mapping, pfcs: Sequence[PhasorTarget]) -> dict:
    if not pfcs:
        return {}
    if len(pfcs) == 1:
        return {pfcs[0].node: pfc_equilibrium(feeder, injections, pfcs[0]).injection_current}
    Z = feeder.impedance_matrix
    idx = [feeder.index[c.node] for c in pfcs]
    controlled = {c.node for c in pfcs}
    rest = feeder.injection_vector({n: i for n, i in injections.items() if n not in controlled})
    rhs = np.array([c.target for c in pfcs]) - feeder.slack_voltage - Z[idx, :] @ rest
    sol = np.linalg.solve(Z[np.ix_(idx, idx)], rhs)
    return {c.node: complex(i) for c, i in zip(pfcs, sol)}
