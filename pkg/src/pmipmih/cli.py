"""Command line: ``run``, ``sweep``, ``validate`` and ``budget``."""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .analytics import BUDGET_VARIANTS, VARIANTS, LatencyParams, closed_form
from .engine import ScenarioError, SimulationError
from .mih import scan_with_hints
from .report import budget_table, emit_report, sweep_row, write_sweep_summary
from .scenario import Scenario, ScenarioValidationError, load_scenario, scenario_from_dict
from .sim import run_scenario

log = logging.getLogger("pmipmih")

EXIT_INVALID = 2
EXIT_FAILED = 1


def _parse_value(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def parse_sweep(spec: str) -> tuple[str, list]:
    key, sep, values = spec.partition("=")
    if not sep or not key or not values:
        raise ScenarioError(f"--sweep expects key=v1,v2,..., got {spec!r}")
    return key.strip(), [_parse_value(v.strip()) for v in values.split(",") if v.strip()]


def _variants(arg: str | None, sc: Scenario) -> list[str]:
    if arg is None:
        return [sc.variant]
    if arg == "both":
        return list(VARIANTS)
    if arg not in VARIANTS:
        raise ScenarioError(f"--variant must be one of {VARIANTS + ('both',)}, got {arg!r}")
    return [arg]


def _load(args) -> Scenario:
    sc = load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        sc = sc.with_override("run.seed", args.seed)
    return sc


def _scan_reduced(sc: Scenario) -> int:
    p = sc.params
    if sc.hints == "none":
        hints = []
    elif sc.hints == "auto":
        hints = [("next", 0)] if len(sc.cells) > 1 else []
    else:
        hints = sc.hints
    return scan_with_hints(hints, p.channels_total, p.per_channel_probe, p.t_scan)


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(f"{args.scenario}: OK ({len(sc.cells)} cells, {len(sc.flows)} flows, variant {sc.variant})")
    return 0


def cmd_budget(args) -> int:
    if args.scenario:
        sc = load_scenario(args.scenario)
        params, scan_reduced = sc.params, _scan_reduced(sc)
    else:
        params = LatencyParams()
        scan_reduced = params.per_channel_probe
    variants = BUDGET_VARIANTS if args.variant in (None, "all") else [args.variant]
    for v in variants:
        if v not in BUDGET_VARIANTS:
            raise ScenarioError(f"unknown variant {v!r}")
        print(budget_table(closed_form(v, params, scan_reduced)))
    return 0


def _fmt_ms(v: int | None) -> str:
    return "-" if v is None else f"{v / 1000:.3f}"


def _summary_line(res) -> str:
    h = res.first_handover()
    parts = [f"variant={res.variant}", f"events={res.summary.events_processed}"]
    if h is not None:
        parts += [f"latency_ms={_fmt_ms(h.latency)}", f"signaling_ms={_fmt_ms(h.signaling_latency)}",
                  f"lost={h.lost_packets}", f"buffered={h.buffered_packets}",
                  f"flushed={h.flushed_packets}"]
    parts.append(f"closed_form_ms={res.closed_form_total() / 1000:.3f}")
    parts.append(f"conserved={'yes' if res.flows_balanced and res.links_balanced else 'NO'}")
    return " ".join(parts)


def cmd_run(args) -> int:
    sc = _load(args)
    out = Path(args.out or sc.out_dir)
    variants = _variants(args.variant, sc)
    for v in variants:
        res = run_scenario(sc, v)
        target = out / v if len(variants) > 1 else out
        emit_report(res, target)
        print(_summary_line(res))
        log.info("wrote %s", target)
    return 0


def _sweep_one(raw: dict, name: str, key: str, value, variant: str, report_dir: str | None) -> list:
    try:
        sc = scenario_from_dict(raw, name).with_override(key, value)
        res = run_scenario(sc, variant)
        if report_dir:
            emit_report(res, Path(report_dir) / f"{key}={value}" / variant)
        return sweep_row(value, variant, res)
    except (ScenarioError, SimulationError) as exc:
        return sweep_row(value, variant, None, error=str(exc).replace("\n", " "))


def cmd_sweep(args) -> int:
    sc = _load(args)
    if args.sweep:
        key, values = parse_sweep(args.sweep)
    else:
        key, values = "mobility.speed", sc.speeds
        if not values:
            raise ScenarioError("no --sweep given and the scenario lists no mobility.speeds")
    sc.with_override(key, values[0])  # reject unknown keys before any run
    variants = _variants(args.variant or "both", sc)
    out = Path(args.out or sc.out_dir)
    jobs = [(sc.raw, sc.name, key, v, var, str(out) if args.reports else None)
            for v in values for var in variants]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, *zip(*jobs)))
    else:
        rows = [_sweep_one(*j) for j in jobs]
    path = write_sweep_summary(rows, out)
    for r in rows:
        print(",".join(str(x) for x in r))
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmipmih", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, out=True):
        p.add_argument("--scenario", required=True, help="scenario TOML (or a shipped name)")
        p.add_argument("--variant", help="pmipv6, pmipv6_mih or both")
        p.add_argument("--seed", type=int)
        if out:
            p.add_argument("--out", help="output directory (default: run.out_dir)")

    p = sub.add_parser("run", help="simulate one scenario and write its reports")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per value and variant, plus sweep_summary.csv")
    common(p)
    p.add_argument("--sweep", help="key=v1,v2,... (default: mobility.speed over mobility.speeds)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--reports", action="store_true", help="also write per-run reports")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a scenario file and exit")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("budget", help="closed-form latency budget, no simulation")
    p.add_argument("--scenario")
    p.add_argument("--variant", help="pmipv6, pmipv6_mih, initial_entry or all")
    p.set_defaults(func=cmd_budget)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ScenarioValidationError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
