"""Command-line entry point: ``tcqed <command> [options]``.

Commands::

    simulate    transmission map over one coil current
    calibrate   two-coil crosstalk campaign and compensation plans
    fit         simulate-then-fit (or fit a trace CSV) vacuum-Rabi anticrossings
    demo NAME   fig3 | sqrtn | calibration | fano | signal
    verify      re-check a run manifest and regenerate its outputs

The exit code is 0 only when every scenario assertion passes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .scenarios import ScenarioSpec, run_scenario, verify_run

log = logging.getLogger("tcqed")

DEMOS = ("fig3", "sqrtn", "calibration", "fano", "signal")


def _sweep(text: str) -> list:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("sweep must be START:STOP:STEPS")
    try:
        return [float(parts[0]), float(parts[1]), int(parts[2])]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sweep {text!r}") from None


def _int_list(text: str) -> list[int]:
    return [int(x) - 1 for x in text.split(",") if x]


GLOBAL_DEFAULTS = {"config": "paper-device", "out": "tcqed-out", "seed": 0, "threads": 1, "verbose": False}


def _global_flags(p: argparse.ArgumentParser, defaults: dict) -> None:
    p.add_argument("--config", default=defaults["config"], help="device config file or bundled name")
    p.add_argument("--out", default=defaults["out"], help="output directory")
    p.add_argument("--seed", type=int, default=defaults["seed"], help="noise seed (recorded in every output name)")
    p.add_argument("--threads", type=int, default=defaults["threads"], help="worker threads for independent sweeps")
    p.add_argument("-v", "--verbose", action="store_true", default=defaults["verbose"])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcqed", description=__doc__.splitlines()[0])
    _global_flags(p, GLOBAL_DEFAULTS)
    # the flags are also accepted after the command; there they must not
    # overwrite values given before it
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, dict.fromkeys(GLOBAL_DEFAULTS, argparse.SUPPRESS))
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="transmission map over one coil current")
    s.add_argument("--coil", type=int, default=1, help="swept coil, 1-8 (default 1)")
    s.add_argument("--qubits", type=_int_list, help="simulated qubits, e.g. 1,2 (default: the coil's qubit)")
    s.add_argument("--currents", type=_sweep, help="coil current sweep START:STOP:STEPS in A")
    s.add_argument("--probe", type=_sweep, help="probe sweep START:STOP:STEPS in GHz")
    s.add_argument("--method", choices=("auto", "steady", "linear"), default="auto")
    s.add_argument("--background", action="store_true", help="add the configured direct background")

    c = sub.add_parser("calibrate", parents=[common], help="crosstalk calibration campaign")
    c.add_argument("--noise", type=float, default=0.0, help="scan noise as a fraction of ridge contrast")
    c.add_argument("--mode", choices=("fast", "full"), default="fast")

    f = sub.add_parser("fit", parents=[common], help="anticrossing fits")
    f.add_argument("--qubits", type=_int_list, default=[0], help="qubits to simulate and fit, e.g. 1,4")
    f.add_argument("--input", help="fit this trace CSV instead of simulating")
    f.add_argument("--noise", type=float, default=0.0, help="complex noise added to simulated maps")
    f.add_argument("--tolerance", type=float, default=1.0, help="allowed |g - g_config| in MHz")

    d = sub.add_parser("demo", parents=[common], help="figure-style demos")
    d.add_argument("name", choices=DEMOS)

    v = sub.add_parser("verify", parents=[common], help="re-check a manifest")
    v.add_argument("manifest")
    v.add_argument("--no-rerun", action="store_true", help="only compare stored checksums")
    return p


def _spec(args, name: str, sweeps=None, options=None) -> ScenarioSpec:
    return ScenarioSpec(name, args.config, args.out, args.seed, sweeps or {}, options or {}, args.threads)


def spec_from_args(args) -> ScenarioSpec:
    if args.command == "simulate":
        sweeps, opts = {}, {"coil": args.coil - 1, "method": args.method, "background": args.background}
        if args.qubits:
            opts["qubits"] = args.qubits
        if args.currents:
            sweeps["current_A"] = args.currents
        if args.probe:
            sweeps["probe_GHz"] = args.probe
        return _spec(args, "simulate", sweeps, opts)
    if args.command == "calibrate":
        return _spec(args, "calibration", options={"noise": args.noise, "mode": args.mode})
    if args.command == "fit":
        opts = {"qubits": args.qubits, "noise": args.noise, "tolerance_mhz": args.tolerance}
        if args.input:
            opts["input"] = args.input
        return _spec(args, "fit", options=opts)
    if args.command == "demo":
        return _spec(args, args.name)
    raise ValueError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "verify":
            report = verify_run(args.manifest, rerun=not args.no_rerun)
            print(json.dumps({"manifest": str(report.manifest), "changed_on_disk": report.changed_on_disk,
                              "differs_on_rerun": report.differs_on_rerun, "rerun_checks": report.rerun_checks,
                              "ok": report.ok}, indent=2))
            return 0 if report.ok else 1
        spec = spec_from_args(args)
        log.info("running %s into %s", spec.name, spec.out_dir)
        result = run_scenario(spec)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"tcqed: error: {exc}", file=sys.stderr)
        return 2
    print(result.summary())
    print(f"manifest: {result.manifest}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
