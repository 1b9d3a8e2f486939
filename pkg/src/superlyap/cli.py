"""Command line entry point: ``superlyap <subcommand> [options]``.

Every subcommand accepts its options as flags or as a JSON file given with
``--config`` (flags override the file).  Outputs go to ``--out``, or to the
directory named by ``SUPERLYAP_OUTPUT_DIR``, or to ``./superlyap-out``.
Each output file name carries the first 12 hex digits of the config hash and
every JSON output stores the resolved config and its full hash.

Exit codes: 0 success, 2 infeasible constants, 3 certification failure,
64 invalid configuration, 70 runtime fault.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import re
import sys
import traceback
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_UNCERTIFIED = 3
EXIT_USAGE = 64
EXIT_SOFTWARE = 70
OUTPUT_ENV = "SUPERLYAP_OUTPUT_DIR"
# options that do not influence results
_VOLATILE = ("out", "config", "threads", "command", "verbose")

log = logging.getLogger("superlyap")


class UsageError(Exception):
    """Invalid configuration (exit 64)."""


class _Parser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        # let values such as "-3,1" through as arguments, not flags
        self._negative_number_matcher = re.compile(r"^-[\d.][\d.,eE+-]*$")

    def error(self, message):
        raise UsageError(message)


def _pair(text):
    try:
        parts = [float(p) for p in str(text).split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}") from exc
    if len(parts) != 2 or not all(math.isfinite(p) for p in parts):
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}")
    return parts


def _floats(text):
    try:
        return [float(p) for p in str(text).split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text):
    try:
        return [int(p) for p in str(text).split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
def _common(p):
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./superlyap-out)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _model(p, sigma_x=1.0):
    p.add_argument("--sigma-x", type=float, default=sigma_x)
    p.add_argument("--sigma-y", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="superlyap", description="Super-Lyapunov experiments for a planar quadratic SDE.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("certify", help="tune constants, build V and certify it on a grid")
    _common(p)
    _model(p)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--ctil1", type=float, default=0.1)
    p.add_argument("--ctil2", type=float, default=0.8)
    p.add_argument("--alpha-min", type=float, default=0.0)
    p.add_argument("--n-radial", type=int, default=160)
    p.add_argument("--n-angular", type=int, default=81)
    p.add_argument("--r-hi-factor", type=float, default=1e4)

    p = sub.add_parser("simulate", help="simulate an ensemble of paths")
    _common(p)
    _model(p)
    p.add_argument("--z0", type=_pair, default=[-1.0, 0.5])
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--h0", type=float, default=5e-3)
    p.add_argument("--mode", choices=("tamed", "euler"), default="tamed")
    p.add_argument("--record-path", action="store_true", help="also write the first path as CSV")

    p = sub.add_parser("exit-time", help="Monte-Carlo E[exp(dhat tau)] against the BVP")
    _common(p)
    p.add_argument("--sigma-y", type=float, default=1.0)
    p.add_argument("--z0", type=float, default=0.0)
    p.add_argument("--n", type=int, default=100000)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--alpha", type=float, default=None, help="default: smallest alpha passing the sign checks")
    p.add_argument("--no-splitting", action="store_true")

    p = sub.add_parser("invariant", help="occupation histogram after burn-in")
    _common(p)
    _model(p)
    p.add_argument("--z0", type=_pair, default=[-1.0, 0.5])
    p.add_argument("--t-end", type=float, default=20.0)
    p.add_argument("--burn-in", type=float, default=None)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--h0", type=float, default=5e-3)
    p.add_argument("--window", type=_floats, default=[-6.0, 6.0, -6.0, 6.0])
    p.add_argument("--bins", type=_ints, default=[200, 200])

    p = sub.add_parser("converge", help="histogram TV proxy between two ensembles")
    _common(p)
    _model(p)
    p.add_argument("--from-a", type=_pair, default=[3.0, 1.0])
    p.add_argument("--from-b", type=_pair, default=[-3.0, 1.0])
    p.add_argument("--checkpoints", type=_floats, default=[1.0, 2.0, 4.0, 8.0])
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--h0", type=float, default=5e-3)
    p.add_argument("--window", type=_floats, default=[-6.0, 6.0, -6.0, 6.0])
    p.add_argument("--bins", type=_ints, default=[200, 200])
    p.add_argument("--n-boot", type=int, default=200)

    p = sub.add_parser("control", help="synthesize and integrate a steering control")
    _common(p)
    p.add_argument("--from", dest="z0", type=_pair, default=[1.5, 0.0])
    p.add_argument("--to", dest="z_star", type=_pair, default=[-3.0, 1.0])
    p.add_argument("--T", dest="T", type=float, default=None)
    p.add_argument("--M", dest="M_push", type=float, default=None)

    p = sub.add_parser("bvp", help="solve the exit-profile boundary value problem")
    _common(p)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--sigma-y", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--n-table", type=int, default=201)
    return parser


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------
def _resolve(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        cfg = cfg.get("config", cfg)
        # file values become flags placed before the command line ones, so they
        # go through the same type checks and explicit flags win
        args = parser.parse_args([argv[0], *_as_flags(parser, argv[0], cfg), *argv[1:]])
    _validate(args)
    return args


def _as_flags(parser, command, cfg) -> list:
    sub = parser._subparsers._group_actions[0].choices[command]
    by_dest = {a.dest: a for a in sub._actions if a.option_strings}
    unknown = sorted(set(cfg) - set(by_dest))
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    tokens = []
    for key, value in cfg.items():
        if key in _VOLATILE or value is None:
            continue
        act = by_dest[key]
        flag = act.option_strings[-1]
        if act.nargs == 0:
            if value is True:
                tokens.append(flag)
            elif value is not False:
                raise UsageError(f"{key} must be true or false")
        elif isinstance(value, (list, tuple)):
            tokens.append(f"{flag}={','.join(str(v) for v in value)}")
        elif isinstance(value, (int, float, str)) and not isinstance(value, bool):
            tokens.append(f"{flag}={value}")
        else:
            raise UsageError(f"bad value for {key}: {value!r}")
    return tokens


def _validate(args):
    def positive(name):
        v = getattr(args, name, None)
        if v is not None and not v > 0:
            raise UsageError(f"{name} must be positive")

    for name in ("n", "t_end", "h0", "n_radial", "n_angular", "r_hi_factor", "n_boot", "n_table"):
        positive(name)
    for name in ("sigma_x",):
        v = getattr(args, name, None)
        if v is not None and v < 0:
            raise UsageError(f"{name} must be non-negative")
    if getattr(args, "sigma_y", None) is not None and args.sigma_y < 0:
        raise UsageError("sigma_y must be non-negative")
    if hasattr(args, "window") and (len(args.window) != 4 or args.window[1] <= args.window[0] or args.window[3] <= args.window[2]):
        raise UsageError("window must be xlo,xhi,ylo,yhi with xlo<xhi and ylo<yhi")
    if hasattr(args, "bins") and (len(args.bins) != 2 or min(args.bins) < 1):
        raise UsageError("bins must be two positive integers")
    if args.threads is not None and args.threads < 1:
        raise UsageError("threads must be at least 1")


def config_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _VOLATILE}


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


class _Output:
    """Writes files into one directory, tagging names with the config hash."""

    def __init__(self, args):
        self.dir = Path(args.out or os.environ.get(OUTPUT_ENV) or "superlyap-out")
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = args.command
        self.config = config_of(args)
        self.hash = config_hash(self.config)
        self.files = []

    def path(self, stem: str, ext: str) -> Path:
        p = self.dir / f"{self.command}-{stem}-{self.hash[:12]}.{ext}"
        self.files.append(str(p))
        return p

    def json(self, stem: str, payload: dict) -> Path:
        doc = {"command": self.command, "config": self.config, "config_hash": self.hash, **payload}
        p = self.path(stem, "json")
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(_plain(doc), fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")
        return p


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _integrator(args, **kw):
    from .sde import IntegratorConfig

    return IntegratorConfig(h0=getattr(args, "h0", 5e-3), seed=args.seed, threads=args.threads, **kw)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_certify(args) -> int:
    from .lyapunov import InfeasibleError, bvp_for, choose_constants
    from .sde import ModelParams
    from .verifier import certify

    out = _Output(args)
    ckw = {"n_radial": args.n_radial, "n_angular": args.n_angular, "r_hi_factor": args.r_hi_factor}
    try:
        if args.sigma_y == 0:
            # V needs sigma_y > 0: build it for sigma_y = 1 and test it against
            # the noiseless dynamics, which is expected to fail
            spec, g, _, tlog = choose_constants(args.delta, args.sigma_x, 1.0, args.ctil1, args.ctil2, args.alpha_min, certify_kw=ckw)
            report = certify(spec, g, model=ModelParams(args.sigma_x, 0.0), **ckw)
            report.notes.append("V was built for sigma_y = 1 and certified against sigma_y = 0")
        else:
            spec, g, report, tlog = choose_constants(
                args.delta, args.sigma_x, args.sigma_y, args.ctil1, args.ctil2, args.alpha_min, certify_kw=ckw
            )
            if report is None:
                report = certify(spec, g or bvp_for(spec), **ckw)
    except InfeasibleError as exc:
        out.json("report", {"certified": False, "error": str(exc), "diagnostic": exc.diagnostic})
        log.error("infeasible: %s", exc)
        return EXIT_INFEASIBLE
    report.write_csv(out.path("margins", "csv"))
    payload = report.to_json()
    payload["tuning"] = {k: v for k, v in (tlog or {}).items() if k != "feasibility"}
    out.json("report", payload)
    log.info("certified=%s worst margin %.6g in %s", report.certified, report.worst_margin, report.worst_zone)
    return EXIT_OK if report.certified else EXIT_UNCERTIFIED


def cmd_simulate(args) -> int:
    from .sde import ModelParams, integrate_path, run_ensemble, write_path_csv

    out = _Output(args)
    params = ModelParams(args.sigma_x, args.sigma_y)
    cfg = _integrator(args, mode=args.mode)
    ens = run_ensemble(params, cfg, tuple(args.z0), args.t_end, args.n)
    term = out.path("terminal", "csv")
    with open(term, "w", encoding="utf-8", newline="") as fh:
        import csv

        w = csv.writer(fh)
        w.writerow(["path", "x", "y", "exploded"])
        for i, (row, e) in enumerate(zip(ens.terminal, ens.exploded)):
            w.writerow([i, f"{row[0]:.17g}", f"{row[1]:.17g}", int(e)])
    if args.record_path:
        p = integrate_path(params, cfg, tuple(args.z0), args.t_end)
        write_path_csv(out.path("path", "csv"), p["t"], p["x"], p["y"])
    out.json("summary", {"ensemble": ens.summary(), "stream_ids": ens.stream_ids})
    return EXIT_OK


def cmd_exit_time(args) -> int:
    from .lyapunov import LyapunovSpec, bvp_for, choose_constants
    from .sde import exit_time_mc, tail_bound

    out = _Output(args)
    if args.alpha is None:
        spec, g, _, _ = choose_constants(args.delta, 1.0, args.sigma_y, certify_fn=False)
    else:
        spec = LyapunovSpec(args.delta, args.alpha, 1.0, sigma_y=args.sigma_y)
        g = bvp_for(spec)
    L = math.sqrt(2 * spec.alpha)
    if abs(args.z0) > L:
        raise UsageError(f"z0 must lie in [-{L}, {L}]")
    r = exit_time_mc(spec, args.z0, args.n, seed=args.seed, splitting=not args.no_splitting)
    gz = float(g.value(args.z0))
    s = np.array([2.0, 5.0, 10.0])
    tail = {
        "s": s.tolist(),
        "empirical": [float(np.mean(r["samples"] > v)) for v in s],
        "bound": tail_bound(s, spec.alpha, spec.sigma_y, spec.delta_hat).tolist(),
    }
    out.json(
        "summary",
        {
            "alpha": spec.alpha,
            "delta_hat": spec.delta_hat,
            "z0": args.z0,
            "estimate": r["estimate"],
            "std_error": r["std_error"],
            "n_capped": r["n_capped"],
            "N": r["N"],
            "bvp_value": gz,
            "z_score": (r["estimate"] - gz) / r["std_error"] if r["std_error"] > 0 else 0.0,
            "tail": tail,
        },
    )
    return EXIT_OK


def cmd_invariant(args) -> int:
    from .ergodics import invariant_histogram
    from .sde import ModelParams

    out = _Output(args)
    h = invariant_histogram(
        ModelParams(args.sigma_x, args.sigma_y), _integrator(args), args.t_end, args.burn_in, args.n, tuple(args.z0), tuple(args.window), tuple(args.bins)
    )
    h.write_csv(out.path("histogram", "csv"))
    out.json("summary", h.summary())
    return EXIT_OK


def cmd_converge(args) -> int:
    from .ergodics import tv_decay
    from .sde import ModelParams

    out = _Output(args)
    r = tv_decay(
        ModelParams(args.sigma_x, args.sigma_y), _integrator(args), tuple(args.from_a), tuple(args.from_b), args.checkpoints, args.n,
        tuple(args.window), tuple(args.bins), args.n_boot,
    )
    r.write_csv(out.path("series", "csv"))
    out.json("summary", r.to_json())
    return EXIT_OK


def cmd_control(args) -> int:
    from .control import ControlError, gram_matrix, integrate_controlled, synthesize

    out = _Output(args)
    try:
        sch = synthesize(tuple(args.z0), tuple(args.z_star), args.T, args.M_push)
    except ControlError as exc:
        payload = {"error": str(exc)}
        if hasattr(exc, "T_star"):
            payload["T_star"] = exc.T_star
        out.json("schedule", payload)
        raise UsageError(str(exc)) from exc
    path = integrate_controlled(sch, tuple(args.z0))
    path.write_csv(out.path("path", "csv"))
    gram = gram_matrix(sch, tuple(args.z0))
    end = path.end
    out.json(
        "schedule",
        {
            "schedule": sch.to_json(),
            "end": end.tolist(),
            "end_error": float(np.hypot(*(end - np.asarray(args.z_star)))),
            "event_times": path.event_times,
            "axis_violations": path.axis_violations(),
            "gram": gram.to_json(),
        },
    )
    return EXIT_OK


def cmd_bvp(args) -> int:
    from .bvp import solve_g_bvp

    out = _Output(args)
    if (args.alpha is None) == (args.epsilon is None):
        if args.alpha is None:
            args.alpha = 3.0
        else:
            raise UsageError("give either --alpha or --epsilon, not both")
    sol = solve_g_bvp(args.delta, args.sigma_y, alpha=args.alpha if args.epsilon is None else None, epsilon=args.epsilon)
    tab = sol.table(args.n_table)
    p = out.path("table", "csv")
    with open(p, "w", encoding="utf-8", newline="") as fh:
        import csv

        w = csv.writer(fh)
        w.writerow(["z", "g", "dg", "d2g"])
        for row in tab:
            w.writerow([f"{v:.17g}" for v in row])
    out.json("metadata", {"bvp": sol.metadata(), "boundary_values": [float(tab[0, 1]), float(tab[-1, 1])]})
    return EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "exit-time": cmd_exit_time,
    "invariant": cmd_invariant,
    "converge": cmd_converge,
    "control": cmd_control,
    "bvp": cmd_bvp,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = _resolve(argv)
    except UsageError as exc:
        print(f"superlyap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.verbose:
        log.setLevel(logging.DEBUG)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"superlyap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:  # noqa: BLE001 - every other fault maps to exit 70
        traceback.print_exc()
        return EXIT_SOFTWARE


if __name__ == "__main__":
    sys.exit(main())
