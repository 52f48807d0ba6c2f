"""``affordgvf`` command line: oracle, learn, eval and demo subcommands.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
import argparse
import sys

from . import commands
from .config import build_experiment, load_config
from .errors import AffordGvfError, ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", required=True, metavar="PATH", help="experiment JSON file")
    p.add_argument("--seed", type=int, default=None, metavar="N", help="override run.seed")
    p.add_argument("--out", default=None, metavar="DIR", help="override output.dir")
    p.add_argument("--quiet", action="store_true", help="print nothing on success")


def build_parser():
    parser = _Parser(prog="affordgvf", description="Learn and evaluate general value functions.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("oracle", help="write exact per-state values"))
    _common(sub.add_parser("learn", help="train every demon from the behavior stream"))
    p = sub.add_parser("eval", help="score saved models against the oracle")
    _common(p)
    p.add_argument("--models", default=None, metavar="DIR", help="model directory (default: output models)")
    p = sub.add_parser("demo", help="run a control scenario")
    p.add_argument("which", choices=sorted(commands.DEMOS))
    _common(p)
    return parser


def _say(args, text):
    if not args.quiet:
        print(text)


def _summary_text(summary):
    parts = []
    for k, v in summary.items():
        if isinstance(v, (int, float, bool, str)):
            parts.append(f"{k}={v}")
    return " ".join(parts)


def run(args):
    cfg = load_config(args.config)
    exp = build_experiment(cfg, seed=args.seed, out_dir=args.out)
    if args.command == "oracle":
        _say(args, f"wrote {commands.cmd_oracle(exp)}")
    elif args.command == "learn":
        _, log = commands.cmd_learn(exp)
        _say(args, f"wrote {log} and {len(exp.demons)} model(s) in {exp.path('models')}")
    elif args.command == "eval":
        summary = commands.cmd_eval(exp, args.models)
        for name, linf in summary.items():
            _say(args, f"{name}: Linf={float(linf)!r}")
        _say(args, f"wrote {exp.path('eval')}")
    else:
        summary = commands.cmd_demo(args.which, exp)
        _say(args, f"{args.which}: {_summary_text(summary)}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ConfigError as exc:
        print(f"affordgvf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AffordGvfError, OSError, ValueError) as exc:
        print(f"affordgvf: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
