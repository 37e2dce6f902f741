"""JSON scenario configuration: schema, parsing and serialization.

Node ids may be integers or strings; the first entry of ``feeder.nodes`` is
the slack. Complex numbers are written as ``[re, im]`` pairs except where
the schema names the parts explicitly (``r``/``x``, ``re``/``im``,
``v_re``/``v_im``).

Background entries given as ``{node, p, q, pf_sign}`` are converted to a
constant current at nominal voltage: ``p`` is the injected real power and
``q`` the reactive magnitude, absorbed when ``pf_sign`` is ``lagging`` and
supplied when ``leading``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import jsonschema

from .controllers import MagnitudeTarget, PhasorTarget, RayFamily
from .errors import ConfigError, FeederError
from .feeder import Feeder, Line, solve
from .loop import DisturbanceStep, SetpointUpdate, Timeline
from .sweep import UPSTREAM, DisturbanceSpec, PfSign, Scenario

_NODE = {"type": ["integer", "string"]}
_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_SIGN = {"enum": ["lagging", "leading"]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_CURRENT = {
    "oneOf": [
        _obj({"node": _NODE, "re": {"type": "number"}, "im": {"type": "number"}}, ["node", "re", "im"]),
        _obj({"node": _NODE, "p": {"type": "number"}, "q": {"type": "number", "minimum": 0},
              "pf_sign": _SIGN}, ["node", "p", "q", "pf_sign"]),
    ]
}
_CONTROLLER = {
    "oneOf": [
        _obj({"vpc": _obj({"node": _NODE, "v_re": {"type": "number"}, "v_im": {"type": "number"}},
                          ["node", "v_re", "v_im"])}, ["vpc"]),
        _obj({"vmc": _obj({"node": _NODE, "mag": {"type": "number"},
                           "apf": {"type": "number", "minimum": 0, "maximum": 1},
                           "family": {"enum": ["standard", "cross"]}},
                          ["node", "mag", "apf"])}, ["vmc"]),
    ]
}
_GRID = {"type": "array", "items": {
    "type": "array", "prefixItems": [{"type": "number", "minimum": 0, "maximum": 1}, _SIGN],
    "minItems": 2, "maxItems": 2}}

SCHEMA = _obj({
    "name": {"type": "string"},
    "feeder": _obj({
        "nodes": {"type": "array", "items": _NODE, "minItems": 1},
        "slack": _PAIR,
        "lines": {"type": "array", "items": _obj({
            "from": _NODE, "to": _NODE, "r": {"type": "number"}, "x": {"type": "number"},
            "ampacity": {"type": "number", "exclusiveMinimum": 0},
        }, ["from", "to", "r", "x"])},
    }, ["nodes", "lines"]),
    "background": {"type": "array", "items": _CURRENT},
    "controllers": {"type": "array", "items": _CONTROLLER},
    "disturbance": _obj({
        "node": _NODE,
        "magnitude": {"type": "number", "minimum": 0},
        "pf": {"type": "number", "minimum": 0, "maximum": 1},
        "pf_sign": _SIGN,
        "direction": {"enum": ["load", "generation"]},
    }, ["node", "magnitude"]),
    "sweep": _obj({"grid": _GRID, "scale": {"type": "number", "exclusiveMinimum": 0}}),
    "loop": _obj({
        "ticks": {"type": "integer", "minimum": 1},
        "ticks_per_broadcast": {"type": "integer", "minimum": 1},
        "gain": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "sequential": {"type": "boolean"},
        "impedance_error": {"type": "number"},
        "noise_sigma": {"type": "number", "minimum": 0},
        "events": {"type": "array", "items": {"oneOf": [
            _obj({"tick": {"type": "integer", "minimum": 0}, "disturbance": {"type": "array", "items": _CURRENT}},
                 ["tick", "disturbance"]),
            _obj({"tick": {"type": "integer", "minimum": 0}, "setpoints": {"type": "array", "items": _CONTROLLER}},
                 ["tick", "setpoints"]),
        ]}},
    }, ["ticks"]),
}, ["feeder"])


@dataclass
class LoopConfig:
    ticks: int
    timeline: Timeline
    sequential: bool = False
    impedance_error: float = 1.0
    noise_sigma: float = 0.0


@dataclass
class ScenarioConfig:
    feeder: Feeder
    name: str = "custom"
    background: dict = field(default_factory=dict)
    controllers: tuple = ()
    disturbance: Optional[DisturbanceSpec] = None
    grid: Optional[list] = None
    scale: Optional[float] = None
    loop: Optional[LoopConfig] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        """Validate ``data`` against the schema and build the config.

        Raises:
            ConfigError: on schema violations or an inconsistent feeder.
        """
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        try:
            f = data["feeder"]
            lines = [Line(l["from"], l["to"], complex(l["r"], l["x"]), l.get("ampacity"))
                     for l in f["lines"]]
            feeder = Feeder(f["nodes"], lines, complex(*f.get("slack", (1.0, 0.0))))
            background = _currents(feeder, data.get("background", []))
            controllers = tuple(_controller(feeder, c) for c in data.get("controllers", []))
            dist = None
            if "disturbance" in data:
                d = data["disturbance"]
                feeder.check_node(d["node"])
                dist = DisturbanceSpec(d["node"], d["magnitude"], d.get("pf", 1.0),
                                       d.get("pf_sign", "lagging"), d.get("direction", "load"))
            sweep = data.get("sweep", {})
            grid = [(float(pf), PfSign(s)) for pf, s in sweep["grid"]] if "grid" in sweep else None
            loop = _loop(feeder, data["loop"]) if "loop" in data else None
        except FeederError as exc:
            raise ConfigError(str(exc)) from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls(feeder, data.get("name", "custom"), background, controllers, dist, grid,
                   sweep.get("scale"), loop)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "feeder": {
                "nodes": list(self.feeder.nodes),
                "slack": [self.feeder.slack_voltage.real, self.feeder.slack_voltage.imag],
                "lines": [_line_dict(l) for l in self.feeder.lines],
            },
            "background": [{"node": n, "re": i.real, "im": i.imag} for n, i in self.background.items()],
            "controllers": [_controller_dict(c) for c in self.controllers],
        }
        if self.disturbance is not None:
            d = self.disturbance
            out["disturbance"] = {"node": d.node, "magnitude": d.magnitude, "pf": d.pf,
                                  "pf_sign": d.pf_sign.value, "direction": d.direction.value}
        sweep = {}
        if self.grid is not None:
            sweep["grid"] = [[pf, PfSign(s).value] for pf, s in self.grid]
        if self.scale is not None:
            sweep["scale"] = self.scale
        if sweep:
            out["sweep"] = sweep
        if self.loop is not None:
            out["loop"] = _loop_dict(self.loop)
        return out

    def to_scenario(self) -> Scenario:
        """Sweep scenario on a chain with lines 0-1 and 1-2.

        Needs a disturbance and at most one VPC. Without an explicit scale the
        pre-disturbance ``|i01|`` is used (1 when it is zero).
        """
        if self.disturbance is None:
            raise ConfigError("sweep needs a 'disturbance' section")
        vpcs = [c for c in self.controllers if isinstance(c, PhasorTarget)]
        if len(vpcs) > 1:
            raise ConfigError("sweep supports at most one VPC")
        mfcs = [c for c in self.controllers if isinstance(c, MagnitudeTarget)]
        scale = self.scale
        if scale is None:
            before = solve(self.feeder, self.background).line_currents.get(UPSTREAM, 0j)
            scale = abs(before) or 1.0
        kwargs = {} if self.grid is None else {"grid": list(self.grid)}
        return Scenario(
            name=self.name,
            feeder=self.feeder,
            background=dict(self.background),
            disturbance_node=self.disturbance.node,
            magnitude=self.disturbance.magnitude,
            direction=self.disturbance.direction,
            vpc=vpcs[0] if vpcs else None,
            mfcs=mfcs,
            scale=scale,
            **kwargs,
        )

    @classmethod
    def from_scenario(cls, sc: Scenario) -> "ScenarioConfig":
        ctrl = ([sc.vpc] if sc.vpc is not None else []) + list(sc.mfcs)
        # The disturbance pf is swept; the stored one is a placeholder.
        dist = DisturbanceSpec(sc.disturbance_node, sc.magnitude, 1.0, PfSign.LAGGING, sc.direction)
        return cls(sc.feeder, sc.name, dict(sc.background), tuple(ctrl), dist,
                   [(pf, PfSign(s)) for pf, s in sc.grid], sc.scale)


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    return ScenarioConfig.from_json(text)


def _currents(feeder: Feeder, items) -> dict:
    out = {}
    for item in items:
        feeder.check_node(item["node"])
        if "re" in item:
            i = complex(item["re"], item["im"])
        else:
            q = -item["q"] if item["pf_sign"] == "lagging" else item["q"]
            i = complex(item["p"], q).conjugate()
        out[item["node"]] = out.get(item["node"], 0j) + i
    return out


def _controller(feeder: Feeder, item):
    if "vpc" in item:
        c = item["vpc"]
        feeder.check_node(c["node"])
        return PhasorTarget(c["node"], complex(c["v_re"], c["v_im"]))
    c = item["vmc"]
    feeder.check_node(c["node"])
    return MagnitudeTarget(c["node"], c["mag"], c["apf"], RayFamily(c.get("family", "standard")))


def _controller_dict(c) -> dict:
    if isinstance(c, PhasorTarget):
        return {"vpc": {"node": c.node, "v_re": c.target.real, "v_im": c.target.imag}}
    return {"vmc": {"node": c.node, "mag": c.target_magnitude, "apf": c.apf, "family": c.ray_family.value}}


def _line_dict(line: Line) -> dict:
    d = {"from": line.up, "to": line.down, "r": line.z.real, "x": line.z.imag}
    if line.ampacity is not None:
        d["ampacity"] = line.ampacity
    return d


def _loop(feeder: Feeder, d: dict) -> LoopConfig:
    events = []
    for ev in d.get("events", []):
        if "disturbance" in ev:
            events.append((ev["tick"], DisturbanceStep(_currents(feeder, ev["disturbance"]))))
        else:
            events.append((ev["tick"], SetpointUpdate([_controller(feeder, c) for c in ev["setpoints"]])))
    timeline = Timeline(events, d.get("ticks_per_broadcast", 1), d.get("gain", 1.0))
    return LoopConfig(d["ticks"], timeline, d.get("sequential", False),
                      d.get("impedance_error", 1.0), d.get("noise_sigma", 0.0))


def _loop_dict(lc: LoopConfig) -> dict:
    events = []
    for tick, ev in lc.timeline.events:
        if isinstance(ev, DisturbanceStep):
            events.append({"tick": tick, "disturbance": [
                {"node": n, "re": i.real, "im": i.imag} for n, i in ev.delta.items()]})
        else:
            events.append({"tick": tick, "setpoints": [_controller_dict(c) for c in ev.targets]})
    return {
        "ticks": lc.ticks,
        "ticks_per_broadcast": lc.timeline.ticks_per_broadcast,
        "gain": lc.timeline.controller_gain,
        "sequential": lc.sequential,
        "impedance_error": lc.impedance_error,
        "noise_sigma": lc.noise_sigma,
        "events": events,
    }
