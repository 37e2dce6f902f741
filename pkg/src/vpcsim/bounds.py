"""Upstream current-magnitude bounds for a VPC at node 2 of the chain 0-1-2
with a disturbance ``delta_i1`` added at node 1.

Open loop the whole disturbance reaches line 0-1: ``i01_ol = i01_bef - delta_i1``.
With the PCN at node 2 held fixed only the share ``a = z12 / (z01 + z12)``
does: ``i01_vpc = i01_bef - a * delta_i1`` and
``i12_vpc = i12_bef + (1 - a) * delta_i1``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import asdict, dataclass
from typing import Optional

from .errors import DegenerateImpedance

XR_RTOL = 1e-9


def share(z01: complex, z12: complex) -> complex:
    """``z12 / (z01 + z12)``: the part of a node-1 disturbance that still reaches line 0-1."""
    total = z01 + z12
    if total == 0:
        raise DegenerateImpedance("z01 + z12 is zero")
    return z12 / total


def same_xr(z01: complex, z12: complex, rtol: float = XR_RTOL) -> bool:
    return math.isclose(cmath.phase(z01), cmath.phase(z12), rel_tol=rtol, abs_tol=rtol)


@dataclass(frozen=True)
class BoundReport:
    a: complex
    lemma1a_bound: float
    lemma1b_bound: float
    lemma2_bound: Optional[float]
    i01_bef: float
    i01_ol: float
    i01_vpc: float
    i12_bef: float
    i12_vpc: float
    disturbance: complex
    # Flow-increase tests, stated per circuit.
    increases_ol: bool
    increases_vpc: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("a", "disturbance"):
            d[key] = [d[key].real, d[key].imag]
        return d


def evaluate_bounds(z01: complex, z12: complex, i01_before: complex, delta_i1: complex,
                    vpc_target: complex, slack_voltage: complex = 1 + 0j) -> BoundReport:
    """Observed currents and both upstream bounds for one disturbance.

    ``i12_before`` follows from KVL along 0-1-2 with node 2 at ``vpc_target``.
    """
    a = share(z01, z12)
    i01_before = complex(i01_before)
    delta_i1 = complex(delta_i1)
    i12_before = (slack_voltage - vpc_target - i01_before * z01) / z12
    i01_ol = i01_before - delta_i1
    i01_vpc = i01_before - a * delta_i1
    i12_vpc = i12_before + (1 - a) * delta_i1
    mag = abs(delta_i1)
    lemma2 = (1 - a.real) * mag ** 2 if _real_share(z01, z12, a) else None
    return BoundReport(
        a=a,
        lemma1a_bound=mag * abs(a),
        lemma1b_bound=mag * abs(1 - a),
        lemma2_bound=lemma2,
        i01_bef=abs(i01_before),
        i01_ol=abs(i01_ol),
        i01_vpc=abs(i01_vpc),
        i12_bef=abs(i12_before),
        i12_vpc=abs(i12_vpc),
        disturbance=delta_i1,
        increases_ol=abs(i01_ol) > abs(i01_before),
        increases_vpc=abs(i01_vpc) > abs(i01_before),
    )


def _real_share(z01, z12, a) -> bool:
    return same_xr(z01, z12) and 0.0 < a.real < 1.0


@dataclass(frozen=True)
class Lemma2Check:
    applicable: bool
    holds: bool
    margin: float
    same_xr: bool
    increases_ol: bool
    increases_vpc: bool


def check_lemma2(z01: complex, z12: complex, i01_before: complex, delta_i1: complex) -> Lemma2Check:
    """Check ``|i01_ol|^2 - |i01_vpc|^2 > (1 - a)|delta_i1|^2``.

    The inequality needs equal X/R ratios and a disturbance that raises
    ``|i01|`` in the VPC-controlled circuit. A rise in the open-loop circuit
    alone is not enough: with ``a = 1/2``, ``i01_bef = 1`` and
    ``delta_i1 = 3`` the open-loop flow rises from 1 to 2, the VPC flow drops
    to 0.5, and the margin is negative.
    Open-loop rise is implied by VPC rise, so both flags are reported.
    """
    a = share(z01, z12)
    i01_before = complex(i01_before)
    delta_i1 = complex(delta_i1)
    ol = abs(i01_before - delta_i1) ** 2
    vpc_c = i01_before - (a.real if _real_share(z01, z12, a) else a) * delta_i1
    vpc = abs(vpc_c) ** 2
    bef = abs(i01_before) ** 2
    xr = _real_share(z01, z12, a)
    rhs = (1 - a.real) * abs(delta_i1) ** 2
    margin = (ol - vpc) - rhs
    inc_ol = ol > bef
    inc_vpc = vpc > bef
    applicable = xr and inc_vpc
    return Lemma2Check(
        applicable=applicable,
        holds=applicable and margin > 0 and rhs > 0,
        margin=margin,
        same_xr=xr,
        increases_ol=inc_ol,
        increases_vpc=inc_vpc,
    )
