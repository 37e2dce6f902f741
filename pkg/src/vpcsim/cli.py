"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 computation error
(infeasible or non-convergent), 3 verification failure.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import sys

from .bounds import evaluate_bounds
from .checks import run_all
from .config import LoopConfig, ScenarioConfig, load_config
from .controllers import PhasorTarget, equilibrate
from .errors import (
    ComputationError,
    ConfigError,
    DegenerateImpedance,
    FeederError,
    InvalidRow,
    SlackNodeNotControllable,
    ZeroImpedanceEstimate,
)
from .loop import DisturbanceStep, Timeline, run_loop
from .sensitivity import Observable, SensitivityQuery, numeric_sensitivity, table_report
from .sweep import (
    SCENARIOS,
    UPSTREAM,
    DisturbanceSpec,
    PfSign,
    disturbance_to_current,
    run_sweep,
    write_csv,
    write_metadata,
)

EXIT_CONFIG = 1
EXIT_COMPUTATION = 2
EXIT_VERIFY = 3


def _pair(z) -> list:
    return [complex(z).real, complex(z).imag]


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _dump(obj, out):
    with _output(out) as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _config(args) -> ScenarioConfig:
    """Config from ``--config``, else the built-in ``--scenario``."""
    if args.config:
        if getattr(args, "scenario", None):
            raise ConfigError("give either --config or --scenario, not both")
        return load_config(args.config)
    return ScenarioConfig.from_scenario(SCENARIOS[getattr(args, "scenario", None) or "fig4"]())


def _vpc_only(cfg: ScenarioConfig) -> list:
    # Built-in scenarios put the VPC and the MFCs on one node; keep the VPC.
    return [c for c in cfg.controllers if isinstance(c, PhasorTarget)][:1]


def cmd_solve(args) -> int:
    cfg = _config(args)
    controllers = list(cfg.controllers) if args.config else _vpc_only(cfg)
    sol, inj = equilibrate(cfg.feeder, cfg.background, controllers)
    out = sol.to_dict()
    out["injections"] = {str(n): _pair(i) for n, i in inj.items()}
    _dump(out, args.out)
    return 0


def cmd_sensitivity(args) -> int:
    if not args.config:
        rows = table_report()
        _dump([{**r, "analytic": _pair(r["analytic"]), "numeric": _pair(r["numeric"])} for r in rows], args.out)
        return 0
    cfg = load_config(args.config)
    if cfg.disturbance is None:
        raise ConfigError("sensitivity needs a 'disturbance' section naming the node")
    report = []
    for node in cfg.feeder.nodes:
        obs = Observable("voltage", node)
        query = SensitivityQuery(cfg.feeder, cfg.background, list(cfg.controllers), cfg.disturbance.node, obs)
        val = numeric_sensitivity(query)
        entry = {"observe": f"v{node}", "kind": val.kind}
        entry["value"] = _pair(val.analytic) if val.analytic is not None else val.jacobian.tolist()
        report.append(entry)
    _dump(report, args.out)
    return 0


def cmd_bounds(args) -> int:
    cfg = _config(args)
    sc = cfg.to_scenario()
    if sc.vpc is None:
        raise ConfigError("bounds needs a VPC controller")
    base = sc.baseline()
    z01 = sc.feeder.line_by_key[(0, 1)].z
    z12 = sc.feeder.line_by_key[(1, 2)].z
    reports = []
    for pf, sign in sc.grid:
        spec = DisturbanceSpec(sc.disturbance_node, sc.magnitude * sc.scale, pf, sign, sc.direction)
        delta = disturbance_to_current(spec) / sc.scale
        rep = evaluate_bounds(z01, z12, base.line_currents[UPSTREAM] / sc.scale, delta,
                              sc.vpc.target, sc.feeder.slack_voltage)
        reports.append({"pf": pf, "pf_sign": PfSign(sign).value, **rep.to_dict()})
    _dump(reports, args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    sc = cfg.to_scenario()
    records = run_sweep(sc)
    with _output(args.out) as fh:
        write_csv(records, sc.labels, fh)
    if args.metadata:
        with open(args.metadata, "w", encoding="utf-8") as fh:
            write_metadata(sc, fh)
    elif args.out not in (None, "-"):
        with open(args.out + ".json", "w", encoding="utf-8") as fh:
            write_metadata(sc, fh)
    return 0


def _default_loop(cfg: ScenarioConfig) -> LoopConfig:
    # Hold the VPC node through a single 0.9-lagging step at tick 1.
    dist = cfg.disturbance
    spec = DisturbanceSpec(dist.node, dist.magnitude * (cfg.scale or 1.0), 0.9, PfSign.LAGGING, dist.direction)
    tl = Timeline([(1, DisturbanceStep({dist.node: disturbance_to_current(spec)}))], controller_gain=0.5)
    return LoopConfig(40, tl)


def cmd_loop(args) -> int:
    cfg = _config(args)
    lc = cfg.loop
    controllers = list(cfg.controllers)
    if lc is None:
        lc = _default_loop(cfg)
        controllers = _vpc_only(cfg)
    trace = run_loop(cfg.feeder, cfg.background, controllers, lc.timeline, lc.ticks,
                     sequential=lc.sequential, impedance_error=lc.impedance_error,
                     noise_sigma=lc.noise_sigma, seed=args.seed)
    with _output(args.out) as fh:
        trace.write_csv(fh)
    return 0


def cmd_verify(args) -> int:
    results = run_all(seed=args.seed, draws=args.draws)
    buf = io.StringIO()
    for r in results:
        buf.write(r.line() + "\n")
    with _output(args.out) as fh:
        fh.write(buf.getvalue())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "sensitivity": cmd_sensitivity,
    "bounds": cmd_bounds,
    "sweep": cmd_sweep,
    "loop": cmd_loop,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpcsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="scenario config JSON")
        p.add_argument("--out", default="-", help="output path, '-' for stdout")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dump-config", action="store_true",
                       help="print the parsed config as JSON and exit")
        if name in ("solve", "bounds", "sweep", "loop"):
            p.add_argument("--scenario", choices=sorted(SCENARIOS))
        if name == "sweep":
            p.add_argument("--metadata", help="metadata JSON path (default: <out>.json)")
        if name == "verify":
            p.add_argument("--draws", type=int, default=10_000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.dump_config:
            _dump(_config(args).to_dict(), args.out)
            return 0
        return COMMANDS[args.command](args)
    except (ConfigError, FeederError, InvalidRow, SlackNodeNotControllable) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ComputationError, ZeroImpedanceEstimate, DegenerateImpedance) as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTATION


if __name__ == "__main__":
    sys.exit(main())
