"""Command line: ``run``, ``validate`` and ``analyze``.

Exit codes: 0 success, 2 configuration or input error, 3 transport/session failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import config as config_mod
from .config import ConfigError
from .engine import simulate
from .metrics import analyze, export
from .protocol.parties import SessionAborted
from .protocol.transport import TransportError
from .protocol.wire import ProtocolError

EXIT_OK, EXIT_CONFIG, EXIT_TRANSPORT = 0, 2, 3

log = logging.getLogger("activeqkd")


def _load(spec: str) -> config_mod.RunConfig:
    try:
        return config_mod.load(spec)
    except FileNotFoundError:
        raise ConfigError([f"<file>: no such config file {spec!r}"]) from None


def _report_config_error(exc: ConfigError) -> int:
    for v in exc.violations:
        print(f"config error: {v}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config)
        overrides = {k: v for k, v in (("seed", args.seed), ("duration_s", args.duration),
                                       ("transport", args.transport), ("mode", args.mode)) if v is not None}
        if overrides:
            cfg = cfg.replace(**overrides)
    except ConfigError as exc:
        return _report_config_error(exc)
    log.info("running %.1f s at %d Hz, seed %d, transport %s", cfg.duration_s, cfg.clock_hz, cfg.seed, cfg.transport)
    try:
        traces = simulate(cfg)
    except (TransportError, SessionAborted, ProtocolError) as exc:
        print(f"session aborted: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    summary = export(traces, args.out)
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as exc:
        return _report_config_error(exc)
    print(f"ok: {cfg.duration_s:g} s at {cfg.clock_hz} Hz")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        summary = analyze(args.out)
    except FileNotFoundError as exc:
        print(f"missing run output: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        return _report_config_error(exc)
    except ValueError as exc:
        print(f"bad run output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="activeqkd", description="Actively compensated one-way BB84 link simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="simulate a session and write summary + figure data")
    r.add_argument("--config", required=True, help="JSON file or preset:NAME")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--duration", type=float, help="simulated seconds")
    r.add_argument("--transport", help="inproc or tcp:HOST:PORT")
    r.add_argument("--mode", choices=config_mod.MODES)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a config and list every violation")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)

    a = sub.add_parser("analyze", help="recompute metrics from the traces in a run directory")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
