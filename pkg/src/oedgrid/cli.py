"""Command line interface and CSV/JSON output.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
Settings are resolved as command line flag, then ``--config`` JSON file, then
defaults; ``OEDGRID_SEED`` supplies the seed when neither flag nor file does.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .casefile import builtin_case_path, load_case, model_to_json
from .errors import CaseFormatError, NumericalError
from .grid import full_voltages
from .loop import RunConfig, compare_seeds, run
from .powerflow import solve_powerflow

log = logging.getLogger(__name__)

SEED_ENV = "OEDGRID_SEED"

# option name -> (RunConfig field, type, default)
RUN_OPTIONS = {
    "policy": ("policy", str, "oed"),
    "seed": ("seed", int, None),
    "noise": ("noise_variance", float, 1e-4),
    "rho": ("rho", float, 8e-4),
    "eps": ("eps", float, 1e-3),
    "max_iters": ("max_iters", int, 100),
    "sigma0": ("sigma0_scale", float, 1e4),
    "starts": ("oed_starts", int, 4),
}

SUMMARY_FIELDS = ("seed", "iters", "oed_mre_g", "oed_mre_b", "oed_trace",
                  "const_mre_g", "const_mre_b", "const_trace", "crossover")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(v):
    return f"{v:.17g}"


def run_csv_header(net):
    ids = [net.bus_ids[k] for k in net.controllable]
    u_cols = [c for bus in ids for c in (f"p_g{bus}", f"q_g{bus}")]
    return ["iter", "mre_g", "mre_b", "trace_v", *u_cols, "objective", "wall_ms"]


def write_run_csv(path_or_file, net, records, timing=True):
    """One row per iteration with the fixed header of :func:`run_csv_header`.

    Floats carry 17 significant digits so that values round-trip exactly.
    With ``timing=False`` the ``wall_ms`` column is written as 0, which makes
    the file a pure function of the run configuration.
    """
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(run_csv_header(net))
        for r in records:
            wall = 1e3 * r.wall_time if timing else 0.0
            w.writerow([r.iter, _fmt(r.mre_g), _fmt(r.mre_b), _fmt(r.total_variance),
                        *(_fmt(v) for v in r.u), _fmt(r.oed_objective), _fmt(wall)])
    finally:
        if own:
            fh.close()


def read_run_csv(path):
    """Rows of a run CSV as dictionaries of floats (``iter`` as int)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: int(v) if k == "iter" else float(v) for k, v in row.items()} for row in rows]


def write_summary_csv(path, comparisons):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for c in comparisons:
            s = c.summary()
            w.writerow(["" if s[k] is None else (_fmt(s[k]) if isinstance(s[k], float) else s[k])
                        for k in SUMMARY_FIELDS])


def _floats(text):
    try:
        return np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _seeds(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser():
    p = _Parser(prog="oedgrid", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("parse", help="print the network summary as JSON")
    sp.add_argument("case")

    sp = sub.add_parser("powerflow", help="solve the power flow and print the state")
    sp.add_argument("case")
    sp.add_argument("--u", type=_floats, help="generator inputs p,q per bus (default: dataset)")

    def run_opts(sp):
        sp.add_argument("case")
        sp.add_argument("--config", help="JSON file with default option values")
        sp.add_argument("--policy", choices=("oed", "constant"), default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--noise", type=float, default=None, help="measurement noise variance")
        sp.add_argument("--rho", type=float, default=None)
        sp.add_argument("--eps", type=float, default=None)
        sp.add_argument("--max-iters", dest="max_iters", type=int, default=None)
        sp.add_argument("--sigma0", type=float, default=None, help="initial prior variance")
        sp.add_argument("--starts", type=int, default=None, help="design starting points")
        sp.add_argument("--no-timing", dest="timing", action="store_false",
                        help="write 0 for wall_ms (byte-reproducible output)")

    sp = sub.add_parser("run", help="run the estimation loop and write a CSV")
    run_opts(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth-out", dest="truth_out")

    sp = sub.add_parser("compare", help="paired OED/constant runs over several seeds")
    run_opts(sp)
    sp.add_argument("--seeds", type=_seeds, required=True)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", required=True)
    return p


def resolve_options(args, environ=None):
    """Merge flags, config file, environment and defaults into RunConfig kwargs."""
    environ = os.environ if environ is None else environ
    file_values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: {exc}")
        if not isinstance(file_values, dict):
            raise UsageError("--config: expected a JSON object")
        unknown = set(file_values) - set(RUN_OPTIONS)
        if unknown:
            raise UsageError(f"--config: unknown keys {sorted(unknown)}")
    kw = {}
    for name, (field_, typ, default) in RUN_OPTIONS.items():
        value = getattr(args, name, None)
        if value is None:
            value = file_values.get(name, default)
        if value is None and name == "seed":
            value = environ.get(SEED_ENV, 0)
        try:
            kw[field_] = typ(value)
        except (TypeError, ValueError):
            raise UsageError(f"--{name.replace('_', '-')}: invalid value {value!r}")
    return kw


def _load(case):
    """Load a case file; a bare name such as ``case5`` selects a bundled case."""
    if not os.path.exists(case) and os.path.exists(builtin_case_path(case)):
        case = builtin_case_path(case)
    try:
        return load_case(case)
    except FileNotFoundError:
        raise UsageError(f"case file not found: {case}")
    except (CaseFormatError, KeyError, ValueError) as exc:
        raise UsageError(f"{case}: {exc}")


def _run_config(args):
    kw = resolve_options(args)
    try:
        return RunConfig(model=_load(args.case), **kw)
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_parse(args, out):
    model = _load(args.case)
    net = model.network
    summary = {"n_buses": net.n_buses, "n_lines": net.n_lines,
               "n_generators": len(net.generators), **model_to_json(model)}
    json.dump(summary, out, indent=2)
    out.write("\n")


def cmd_powerflow(args, out):
    model = _load(args.case)
    net = model.network
    u = model.u_dataset if args.u is None else args.u
    if u.shape != (net.n_inputs,):
        raise UsageError(f"--u: expected {net.n_inputs} values, got {u.size}")
    sol = solve_powerflow(net, model.y_true, u)
    v, th = full_voltages(net, sol.state)
    json.dump({"bus_ids": list(net.bus_ids), "v": v.tolist(), "theta": th.tolist(),
               "iterations": sol.iterations, "residual": sol.residual_norm}, out, indent=2)
    out.write("\n")


def cmd_run(args, out):
    cfg = _run_config(args)
    result = run(cfg)
    write_run_csv(args.out, cfg.network, result.records, timing=args.timing)
    if args.truth_out:
        net = cfg.network
        lines = [[net.bus_ids[k], net.bus_ids[l]] for k, l in net.lines]
        with open(args.truth_out, "w", encoding="utf-8") as fh:
            json.dump({"lines": lines, "g_true": cfg.truth()[0::2].tolist(),
                       "b_true": cfg.truth()[1::2].tolist(),
                       "g_est": result.final.y[0::2].tolist(),
                       "b_est": result.final.y[1::2].tolist()}, fh, indent=2)
    f = result.final
    out.write(f"{len(result.records)} iterations ({result.reason}): "
              f"mre_g {f.mre_g:.4g} mre_b {f.mre_b:.4g} trace {f.total_variance:.4g}\n")


def cmd_compare(args, out):
    cfg = _run_config(args)
    if args.workers < 1:
        raise UsageError("--workers: must be at least 1")
    comps = compare_seeds(cfg, args.seeds, workers=args.workers)
    write_summary_csv(args.out, comps)
    for c in comps:
        s = c.summary()
        out.write(f"seed {s['seed']}: trace oed {s['oed_trace']:.4g} const {s['const_trace']:.4g}"
                  f", mre_g oed {s['oed_mre_g']:.4g} const {s['const_mre_g']:.4g}\n")


COMMANDS = {"parse": cmd_parse, "powerflow": cmd_powerflow, "run": cmd_run,
            "compare": cmd_compare}


def main(argv=None, out=None):
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
