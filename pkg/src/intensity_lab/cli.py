"""``intensity-lab`` command line.

Exit codes: 0 success, 1 validation or tolerance failure, 2 usage error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import signal
import sys
import threading
import time
from pathlib import Path

from .errors import IntensityLabError
from .metrics import aggregate_events, build_level_table, dense_counts, read_counts_csv, read_events, write_stats_csv
from .replay import figure_data, replay_groups, replay_table, write_figures
from .sequence import analysis_report, detect_saturation
from .serving import ServingParams, load_serve_config, make_http_server
from .simulator import SimConfig, write_event_log

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("intensity_lab")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- output helpers


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=str) + "\n"


def _cells_csv(report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cell_id", "computed", "expected", "delta", "passed", "tolerance", "raw", "gated"])
    for c in report.cells + report.segments:
        writer.writerow([c.cell_id, c.computed, c.expected, "" if c.delta is None else c.delta,
                         int(c.passed), c.tolerance, "" if c.raw is None else c.raw, int(c.gated)])
    return buf.getvalue()


def _clock_start(args) -> float:
    if args.fixed_clock:
        return args.clock_start if args.clock_start is not None else 0.0
    return time.time()


# --------------------------------------------------------------------------- commands


def cmd_replay(args) -> int:
    with open(args.fixture, encoding="utf-8") as fh:
        header = fh.readline()
    if header.startswith("group"):
        report = replay_groups(args.fixture, args.expected)
    else:
        report = replay_table(args.fixture, args.expected)
    _emit(_cells_csv(report) if args.format == "csv" else _json(report.to_dict()), args.out)
    for cell in report.failures:
        print(f"mismatch {cell.cell_id}: computed {cell.computed} expected {cell.expected}"
              f"{'' if cell.gated else ' (not gated)'}", file=sys.stderr)
    summary = report.summary()
    print(f"{summary['fixture']}: {summary['passed']}/{summary['cells']} cells, "
          f"cr pass fraction {summary['cr_pass_fraction']:.3f}, ok={summary['ok']}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_simulate(args) -> int:
    config = SimConfig.load(args.config)
    overrides = {k: v for k, v in (("seed", args.seed), ("n_users", args.n_users)) if v is not None}
    if overrides:
        config = dataclasses.replace(config, **overrides)
    clock_start = _clock_start(args)
    if args.out is None or args.out == "-":
        write_event_log(config, sys.stdout, clock_start)
        return EXIT_OK
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        n_events = write_event_log(config, fh, clock_start)
    manifest = {
        "log": out.name,
        "log_sha256": hashlib.sha256(out.read_bytes()).hexdigest(),
        "n_events": n_events,
        "n_users": config.n_users,
        "seed": config.seed,
        "sim_config_digest": config.digest(),
        "clock_start": clock_start,
    }
    out.with_name(out.name + ".manifest.json").write_text(_json(manifest), encoding="utf-8")
    print(f"wrote {n_events} events to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args) -> int:
    header, records = read_events(args.events)
    types = None if args.interaction_type is None else set(args.interaction_type)
    per_group = aggregate_events(records, t_start=args.t_start, t_end=args.t_end, interaction_types=types)
    status = EXIT_OK
    if not per_group:
        log.warning("no events in %s", args.events)
        group, table = args.group, []
        status = EXIT_FAIL
    else:
        group = args.group
        if group is None:
            if len(per_group) > 1:
                raise UsageError(f"log has several groups {sorted(per_group)}; pass --group")
            group = next(iter(per_group))
        if group not in per_group:
            print(f"unknown group {group!r}; available groups: {', '.join(sorted(per_group))}", file=sys.stderr)
            return EXIT_FAIL
        table = build_level_table(dense_counts(per_group[group]))

    report: dict = {"group": group, "log_header": header}
    if table and all(r.rpf is not None for r in table) and len(table) > 1:
        report.update(analysis_report([r.rpf for r in table], [r.rnf for r in table],
                                      views=[r.views for r in table]))
    csv_text = write_stats_csv(table)
    if args.out is None:
        _emit(csv_text if args.format != "json" else _json({"table": [r.to_dict() for r in table], **report}), None)
    else:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = group or "empty"
        (out / f"{stem}.csv").write_text(csv_text, encoding="utf-8")
        (out / f"{stem}.analysis.json").write_text(_json(report), encoding="utf-8")
    return status


def cmd_detect(args) -> int:
    table = build_level_table(read_counts_csv(args.table))
    if any(r.rpf is None for r in table):
        print("every level needs at least one view", file=sys.stderr)
        return EXIT_FAIL
    report = detect_saturation(
        [r.rpf for r in table], [r.rnf for r in table], window=args.window, epsilon=args.epsilon,
        rise=args.rise, views=None if args.unweighted else [r.views for r in table],
    )
    _emit(_json(report.to_dict()), args.out)
    return EXIT_FAIL if report.fallback else EXIT_OK


def cmd_figures(args) -> int:
    table = build_level_table(read_counts_csv(args.table))
    data = figure_data(table, args.direction)
    for name, reason in data.skipped.items():
        log.warning("skipped %s: %s", name, reason)
    paths = write_figures(data, args.out or "figures")
    for path in paths:
        print(path, file=sys.stderr)
    return EXIT_OK


def cmd_serve(args) -> int:
    fixed = _clock_start(args) if args.fixed_clock else None
    clock = (lambda: fixed) if fixed is not None else time.time
    config = load_serve_config(args.config, clock=clock)
    server = config.server
    if args.params:
        with open(args.params, encoding="utf-8") as fh:
            server.update_params(ServingParams.from_dict(json.load(fh), server.spec))
    host = args.host or config.host
    port = config.port if args.port is None else args.port
    httpd = make_http_server(server, host, port)
    print(f"serving on http://{httpd.server_address[0]}:{httpd.server_address[1]}", file=sys.stderr, flush=True)

    def stop(signum, frame):
        threading.Thread(target=httpd.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    try:
        httpd.serve_forever()
    finally:
        httpd.server_close()
        config.close()
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _add_globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--out", default=default, help="output file or directory")
    parser.add_argument("--seed", type=int, default=default, help="override the configured seed")
    parser.add_argument("--fixed-clock", action="store_true", default=default,
                        help="use a deterministic clock starting at --clock-start")
    parser.add_argument("--clock-start", type=float, default=default, metavar="T",
                        help="fixed clock origin (default 0)")
    parser.add_argument("--format", choices=("csv", "json"), default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intensity-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("replay", cmd_replay, "compare a fixture with its printed values")
    p.add_argument("fixture")
    p.add_argument("--expected", help="printed-value sidecar (default <stem>.expected.csv)")

    p = add("simulate", cmd_simulate, "write a synthetic event log")
    p.add_argument("config")
    p.add_argument("--n-users", type=int)

    p = add("analyze", cmd_analyze, "aggregate an event log and analyze one group")
    p.add_argument("events")
    p.add_argument("--group")
    p.add_argument("--t-start", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--interaction-type", type=int, action="append")

    p = add("detect", cmd_detect, "locate the saturation level of a count table")
    p.add_argument("table")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--epsilon", type=float, default=0.02)
    p.add_argument("--rise", type=float, default=0.4)
    p.add_argument("--unweighted", action="store_true", help="do not weight pooled means by views")

    p = add("figures", cmd_figures, "export per-figure CSV series")
    p.add_argument("table")
    p.add_argument("--direction", choices=("increasing", "decreasing"))

    p = add("serve", cmd_serve, "run the decision HTTP service")
    p.add_argument("config")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--params", help="params file applied before the first request")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (IntensityLabError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
