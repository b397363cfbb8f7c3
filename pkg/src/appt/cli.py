"""``appt`` command line: serve, keygen, user provisioning, attack scenarios."""
from __future__ import annotations

import argparse
import getpass
import json
import logging
import sys

from . import crypto, harness
from .errors import ApptError, UnknownScenario
from .gate import Gate
from .service import ServiceConfig, build_app, resolve_config_path, serve


def _load_config(path: str | None) -> ServiceConfig:
    path = resolve_config_path(path)
    if not path:
        raise SystemExit("no config: pass --config or set APPT_CONFIG")
    return ServiceConfig.from_file(path)


def cmd_serve(args) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    serve(_load_config(args.config), insecure_dev=args.insecure_dev)
    return 0


def cmd_keygen(args) -> int:
    pair = crypto.generate_keypair(args.bits)
    priv, pub = crypto.save_keypair(pair, args.out)
    print(f"wrote {priv}\nwrote {pub}")
    return 0


def cmd_user_add(args) -> int:
    cfg = _load_config(args.config)
    if not cfg.snapshot_path:
        print("config has no snapshot_path; nowhere to store users", file=sys.stderr)
        return 2
    if args.password_stdin:
        password = sys.stdin.readline().rstrip("\n")
    else:
        password = getpass.getpass("password: ")
        if password != getpass.getpass("repeat: "):
            print("passwords differ", file=sys.stderr)
            return 1
    app = build_app(cfg)
    gate: Gate = app.gate
    gate.provision_user(args.username, password, args.mobile, args.email)
    app.save_snapshot()
    print(f"user {args.username} stored in {cfg.snapshot_path}")
    return 0


def cmd_scenario_list(args) -> int:
    for name, description in harness.list_scenarios():
        print(f"{name:<24} {description}")
    return 0


def cmd_scenario_run(args) -> int:
    try:
        report = harness.run_scenario(args.name, seed=args.seed, over_http=args.over_http)
    except UnknownScenario:
        names = ", ".join(n for n, _ in harness.list_scenarios())
        print(f"unknown scenario {args.name!r}; choose from: {names}", file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps(report.to_json(), indent=2))
    else:
        print(report.to_table())
    return 0 if harness.scenario_passed(report) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="appt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTPS gateway")
    p.add_argument("--config", help="JSON config file (APPT_CONFIG overrides)")
    p.add_argument("--insecure-dev", action="store_true",
                   help="plaintext listener; every login is then denied as InsecureTransport")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("keygen", help="generate the token keypair as PEM files")
    p.add_argument("--bits", type=int, default=2048)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_keygen)

    user = sub.add_parser("user", help="user provisioning").add_subparsers(dest="user_command", required=True)
    p = user.add_parser("add", help="add or replace a user (prompts for the password)")
    p.add_argument("username")
    p.add_argument("--mobile", required=True)
    p.add_argument("--email", required=True)
    p.add_argument("--config")
    p.add_argument("--password-stdin", action="store_true", help="read the password from stdin")
    p.set_defaults(func=cmd_user_add)

    scen = sub.add_parser("scenario", help="phishing attack scenarios").add_subparsers(
        dest="scenario_command", required=True)
    p = scen.add_parser("list", help="list registered scenarios")
    p.set_defaults(func=cmd_scenario_list)
    p = scen.add_parser("run", help="run one scenario")
    p.add_argument("name")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--over-http", action="store_true", help="drive a loopback HTTPS listener")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.set_defaults(func=cmd_scenario_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ApptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
