"""Command-line experiment runner.

    psnym fig5 --N 50 --gamma 3 --tau-ms 4 --out fig5.csv
    psnym clogging --attack_rate 1000 --duration 600
    PSNYM_LOG=DEBUG psnym privacy --config run.conf

Tabular experiments write CSV; simulations write ``metric,value`` rows.
Floats are printed with 9 significant digits so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import enum
import io
import json
import logging
import os
import sys
import threading
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import analytics, simulator
from .credentials import FakePseudonymList, LifetimeMode, PcaRegistry, get_scheme
from .errors import BadSpec, PsnymError
from .filters import BloomFilter, FilterParams
from .service import PcaServer, PublicationState
from .validation import ValidatorConfig, VehicleValidator, replay_trace_csv

log = logging.getLogger("psnym")

EXPERIMENTS = (
    "fig2", "fig4", "fig5", "fp-empirical", "delta-size", "queue-sim",
    "bruteforce", "clogging", "privacy", "serve", "validate-trace",
)
_SIM_EXPERIMENTS = {"queue-sim", "bruteforce", "clogging", "privacy"}


def fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format(value, ".9g")
    if isinstance(value, enum.Enum):
        return str(value.value)
    return str(value)


def write_rows(out, rows: Sequence[dict]) -> None:
    if not rows:
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(rows[0].keys())
    for row in rows:
        w.writerow(fmt(v) for v in row.values())


def write_metrics(out, rows: Iterable[tuple[str, object]]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["metric", "value"])
    for name, value in rows:
        w.writerow([name, fmt(value)])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise BadSpec(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    return [int(x) for x in _floats(text)]


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    """One ``--field`` flag per SimConfig field, parsed with the config-file coercion rules."""
    for f in dataclasses.fields(simulator.SimConfig):
        if f.name == "seed":
            continue
        p.add_argument(f"--{f.name}", dest=f"sim_{f.name}", metavar=type(f.default).__name__.upper())
    p.add_argument("--tau-ms", dest="sim_tau_ms", type=float)
    p.add_argument("--hash-cost-us", dest="sim_hash_cost_us", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psnym", description="Filter-based pseudonym validation experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True, parser_class=_Parser)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", type=Path, help="output file (default: stdout)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", type=Path, help="key = value file with simulator settings")
        return p

    p = add("fig2", "false-positive rate against bits per element")
    p.add_argument("--lo", type=float, default=8)
    p.add_argument("--hi", type=float, default=128)
    p.add_argument("--step", type=float, default=1)

    p = add("fig4", "delta compression rate against fraction of added elements")
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--f-max", type=float, default=1.0)
    p.add_argument("--step", type=float, default=0.01)

    p = add("fig5", "analytic mean system time against refresh ratio")
    p.add_argument("--N", type=int, default=50)
    p.add_argument("--gamma", type=float, default=3)
    p.add_argument("--tau-ms", type=float, default=4)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--hash-cost-us", type=float, default=0)

    p = add("fp-empirical", "measured false-positive rate of a desk-scale filter")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--bits-per-element", type=float, default=16)
    p.add_argument("--k", type=int, default=11)
    p.add_argument("--probes", type=int, default=1_000_000)

    p = add("delta-size", "encoded delta size against the entropy bound")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--bits-per-element", type=float, default=96)
    p.add_argument("--fractions", type=_floats, default=[0.001, 0.01, 0.1])

    p = add("queue-sim", "discrete-event queue simulation")
    _add_sim_flags(p)
    p.add_argument("--grid-c", type=_floats, help="sweep these refresh ratios instead of one run")
    p.add_argument("--grid-gamma", type=_floats)
    p.add_argument("--arrivals", type=int, help="size each grid run for this many measured arrivals")

    for name, help in (("bruteforce", "search for filter false positives"),
                       ("clogging", "junk-signature flood against a budgeted validator")):
        _add_sim_flags(add(name, help))

    p = add("privacy", "newcomer anonymity sets under batching")
    _add_sim_flags(p)
    p.add_argument("--v-mins", type=_ints, help="sweep these batch thresholds")

    p = add("serve", "run a PCA distribution server over TCP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7400)
    p.add_argument("--vehicles", type=int, default=100)
    p.add_argument("--pseudonyms", type=int, default=144)
    p.add_argument("--capacity", type=int, default=20_000)
    p.add_argument("--bits-per-element", type=float, default=32)
    p.add_argument("--scheme", default="ecdsa")
    p.add_argument("--v-min", type=int, default=1000)
    p.add_argument("--max-seconds", type=float, help="stop after this long")

    p = add("validate-trace", "replay a received-pseudonym trace through a validator")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--snapshot", type=Path, required=True, help="serialized snapshot")
    p.add_argument("--fpl", type=Path, help="serialized fake-pseudonym list")
    p.add_argument("--cross-verify-probability", type=float, default=0.01)
    p.add_argument("--fallback-rate", type=float, default=20)
    p.add_argument("--fallback-burst", type=float, default=40)
    return parser


def _sim_config(args: argparse.Namespace) -> simulator.SimConfig:
    values: dict[str, object] = {}
    if args.config is not None:
        values.update(simulator.parse_config(args.config.read_text()))
    defaults = {f.name: f.default for f in dataclasses.fields(simulator.SimConfig)}
    for name, default in defaults.items():
        raw = getattr(args, f"sim_{name}", None)
        if raw is not None:
            values[name] = simulator._coerce(name, default, raw)
    if args.sim_tau_ms is not None:
        values["tau"] = args.sim_tau_ms / 1e3
    if args.sim_hash_cost_us is not None:
        values["hash_cost"] = args.sim_hash_cost_us / 1e6
    values["seed"] = args.seed
    return simulator.config_from(values)


def _resolved(args: argparse.Namespace, cfg=None) -> dict:
    params = {k: v for k, v in vars(args).items() if not k.startswith("sim_") and v is not None}
    if cfg is not None:
        params["config"] = dataclasses.asdict(cfg)
    return params


def _run_sim(args, out) -> None:
    cfg = _sim_config(args)
    log.info("resolved parameters: %s", json.dumps(_resolved(args, cfg), default=fmt, sort_keys=True))
    exp = args.experiment
    if exp == "queue-sim" and (args.grid_c or args.grid_gamma):
        rows = simulator.queue_grid(cfg, args.grid_c or [cfg.c], args.grid_gamma or [cfg.gamma],
                                    arrivals=args.arrivals)
        write_rows(out, rows)
        return
    if exp == "privacy" and args.v_mins:
        write_rows(out, simulator.privacy_sweep(cfg, args.v_mins))
        return
    runner: Callable[[simulator.SimConfig], simulator.SimReport] = {
        "queue-sim": simulator.run_queue_sim,
        "bruteforce": simulator.run_bruteforce_attack,
        "clogging": simulator.run_clogging_attack,
        "privacy": simulator.run_privacy_experiment,
    }[exp]
    write_metrics(out, runner(cfg).summary_rows())


def _serve(args) -> None:
    scheme = get_scheme(args.scheme)
    reg = PcaRegistry(FilterParams.for_capacity(args.capacity, args.bits_per_element, seed=args.seed),
                      scheme, seed=args.seed)
    for v in range(args.vehicles):
        reg.issue_batch(f"v{v}", args.pseudonyms)
    state = PublicationState(reg, v_min=args.v_min)
    snap, _ = state.publish()
    server = PcaServer(state, (args.host, args.port))
    host, port = server.server_address[:2]
    log.warning("serving snapshot v%d (m=%d, k=%d) on %s:%d", snap.version, snap.params.m, snap.params.k, host, port)
    if args.max_seconds is not None:
        threading.Timer(args.max_seconds, server.shutdown).start()
    try:
        server.serve_forever()
    finally:
        server.server_close()


def _validate_trace(args, out) -> None:
    snapshot = BloomFilter.from_bytes(args.snapshot.read_bytes())
    fpl = FakePseudonymList.from_bytes(args.fpl.read_bytes()) if args.fpl else None
    cfg = ValidatorConfig(args.cross_verify_probability, args.fallback_rate, args.fallback_burst,
                          args.seed, LifetimeMode.NON_OVERLAPPING)
    with args.trace.open(newline="") as src:
        n = replay_trace_csv(VehicleValidator(snapshot, fpl, cfg), src, out)
    log.info("replayed %d trace rows", n)


def run(args: argparse.Namespace, out) -> None:
    exp = args.experiment
    if exp in _SIM_EXPERIMENTS:
        _run_sim(args, out)
        return
    log.info("resolved parameters: %s", json.dumps(_resolved(args), default=fmt, sort_keys=True))
    if exp == "fig2":
        write_rows(out, analytics.fig2_rows(args.lo, args.hi, args.step))
    elif exp == "fig4":
        write_rows(out, analytics.fig4_rows(args.p, args.f_max, args.step))
    elif exp == "fig5":
        write_rows(out, analytics.fig5_rows(args.N, args.gamma, args.tau_ms / 1e3, args.step, args.hash_cost_us / 1e6))
    elif exp == "fp-empirical":
        r = simulator.measure_fp_rate(args.n, args.bits_per_element, args.k, args.probes, args.seed)
        write_metrics(out, [("hits", r.hits), ("probes", r.probes), ("observed", r.observed),
                            ("reference", r.reference), ("sigma", r.sigma), ("z", r.z),
                            ("fill_ratio", r.fill_ratio), ("k", r.k)])
    elif exp == "delta-size":
        write_rows(out, simulator.delta_size_experiment(args.n, args.bits_per_element, args.fractions, args.seed))
    elif exp == "serve":
        _serve(args)
    elif exp == "validate-trace":
        _validate_trace(args, out)


def _setup_logging() -> None:
    level = os.environ.get("PSNYM_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        buf = io.StringIO()
        run(args, buf)
        if args.out is None:
            sys.stdout.write(buf.getvalue())
        else:
            with open(args.out, "w", newline="") as fh:
                fh.write(buf.getvalue())
    except (PsnymError, ValueError, OSError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"psnym: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2 if isinstance(exc, BadSpec) else 1
    except KeyboardInterrupt:
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
