"""Command-line front end.

Exit codes: 0 ok, 2 parse/validation error, 3 infeasible or failed
precondition, 4 resource guard (enumeration cap).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
import warnings
from importlib import metadata

import numpy as np

from .bounds import SuperpositionConfig, error_exponent, superposition_best, superposition_rate, upper_bound
from .core import LN2, PreconditionError, ResourceLimitError, ValidationError, compose_channel
from .instances import load_instance
from .lm import SimplexSearch, lm_rate, lm_rate_max_input
from .metric_analysis import (
    binary_mismatch_capacity,
    binary_pre_capacity,
    is_useless,
    witness_channel,
)
from .preprocessing import PreProcessor, r_pre_lm, r_pre_lm_budgeted
from .simulate import random_cc_codebook, simulate, simulate_random_coding

EXIT_OK, EXIT_INPUT, EXIT_PRECONDITION, EXIT_RESOURCE = 0, 2, 3, 4


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def _rate(nats):
    return {"nats": float(nats), "bits": float(nats) / LN2}


def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def _search(args):
    return SimplexSearch(resolution=args.resolution)


def instance_hash(inst):
    text = json.dumps(inst.to_json(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _pre(inst):
    return inst.pre_processor or PreProcessor.identity(inst.w.shape[1])


def _channel(inst):
    return compose_channel(inst.w, _pre(inst).matrix())


# ---------------------------------------------------------------------------
# subcommands; each returns a results dict


def cmd_lm_rate(inst, args):
    v = _channel(inst)
    if inst.p_x is not None:
        p_x, sol = inst.p_x, lm_rate(inst.p_x, v, inst.q)
    else:
        p_x, sol = lm_rate_max_input(v, inst.q, _search(args))
    return {
        "rate": _rate(sol.rate),
        "P_X": _arr(p_x),
        "pre_processor": _pre(inst).to_json(),
        "minimizer": _arr(sol.minimizer),
        "solver_status": sol.solver_status,
    }


def _report_pre(rep):
    return {
        "rate": _rate(rep.rate),
        "best_f": rep.best_f.to_json(),
        "best_P_X": _arr(rep.best_p_x),
        "per_function_rates": [[f.to_json(), _rate(r)] for f, r in rep.per_function_rates],
        "pruned": [[f.to_json(), float(b)] for f, b in rep.pruned],
        "budget_B": rep.budget_constraint,
    }


def cmd_pre_opt(inst, args):
    budget = args.budget if args.budget is not None else inst.budget
    if budget is not None:
        rep = r_pre_lm_budgeted(inst.w, inst.q, budget, search=_search(args))
    else:
        rep = r_pre_lm(inst.w, inst.q, _search(args))
    return _report_pre(rep)


def cmd_useless(inst, args):
    v = is_useless(inst.q)
    return {"useless": v.useless, "witness": None if v.witness is None else list(v.witness)}


def cmd_witness(inst, args):
    v = is_useless(inst.q)
    if v.useless:
        raise PreconditionError("metric is useless: no witness channel exists")
    return {"witness": list(v.witness), "W": witness_channel(inst.q, v.witness).tolist()}


def _rho(inst, args):
    rho = args.rho if args.rho is not None else inst.rho
    if isinstance(rho, str):
        return None if rho == "matched" else load_instance_rho(rho)
    return rho


def load_instance_rho(path):
    with open(path) as fh:
        obj = json.load(fh)
    return np.asarray(obj["rho"] if isinstance(obj, dict) else obj, dtype=float)


def cmd_upper_bound(inst, args):
    res = upper_bound(inst.w, inst.q, rho=_rho(inst, args), restarts=args.restarts,
                      seed=args.seed, strict=args.strict)
    kernel, p_x = res.certificate
    return {
        "bound": _rate(res.bound),
        "best_f": res.best_f.to_json(),
        "certificate": {"P_ZYt_given_X": _arr(kernel), "P_X": _arr(p_x)},
        "per_function": [[f.to_json(), float(v), s] for f, v, s in res.per_function],
        "infeasible": [f.to_json() for f in res.infeasible],
    }


def _rate_grid(args, top):
    if args.rates:
        return [float(r) for r in args.rates.split(",")]
    return list(np.linspace(0.0, top, args.points))


def cmd_exponent(inst, args):
    rep = r_pre_lm(inst.w, inst.q, _search(args))
    grid = _rate_grid(args, rep.rate * 1.2 + 1e-3)
    curve = error_exponent(inst.w, inst.q, grid, resolution=args.resolution)
    return {
        "r_pre_lm": _rate(rep.rate),
        "rates": [_rate(r) for r in curve.rate_grid],
        "exponents": [_rate(e) for e in curve.exponents],
        "optimizers": [None if k is None else [k[0].to_json(), _arr(k[1])] for k in curve.optimizer_kernels],
    }


def cmd_superpose(inst, args):
    if args.q_ux:
        cfg = SuperpositionConfig(np.asarray(json.loads(args.q_ux), dtype=float))
        res = superposition_rate(inst.w, inst.q, cfg, _pre(inst))
        f = _pre(inst)
    else:
        res, f, cfg = superposition_best(inst.w, inst.q, search=_search(args))
    return {
        "total": _rate(res.total),
        "r0": _rate(res.r0),
        "r1": [_rate(r) for r in res.r1],
        "subset": list(res.subset),
        "pre_processor": f.to_json(),
        "Q_UX": _arr(cfg.q_ux),
    }


def _composition(inst, args):
    if inst.p_x is not None:
        return inst.p_x
    return lm_rate_max_input(_channel(inst), inst.q, _search(args))[0]


def cmd_simulate(inst, args):
    comp = _composition(inst, args)
    f = _pre(inst)
    if args.ensemble:
        res = simulate_random_coding(inst.w, inst.q, f, args.n, args.rate, comp, args.trials,
                                     args.seed, threads=args.threads)
    else:
        cb = random_cc_codebook(args.n, args.rate, comp, args.seed)
        res = simulate(inst.w, cb, inst.q, f, args.trials, args.seed, trace=args.trace,
                       threads=args.threads)
    return {
        "p_err": res.p_err, "errors": res.errors, "trials": res.trials,
        "ci95_halfwidth": res.ci95_halfwidth, "n": args.n, "rate": _rate(args.rate),
        "pre_processor": f.to_json(), "composition": _arr(comp),
    }


def cmd_sweep(inst, args):
    rep = r_pre_lm(inst.w, inst.q, _search(args))
    grid = _rate_grid(args, rep.rate * 1.2 + 1e-3)
    curve = error_exponent(inst.w, inst.q, grid, resolution=args.resolution)
    rows = []
    for r, e in zip(curve.rate_grid, curve.exponents):
        p_err = ""
        if args.n and r > 0:
            sim = simulate_random_coding(inst.w, inst.q, rep.best_f, args.n, r, rep.best_p_x,
                                         args.trials, args.seed, threads=args.threads)
            p_err = sim.p_err
        rows.append({"rate_bits": r / LN2, "exponent_bits": e / LN2, "p_err": p_err,
                     "n": args.n or "", "seed": args.seed})
    return {"rows": rows, "r_pre_lm": _rate(rep.rate)}


def cmd_analyze(inst, args):
    w, q = inst.w, inst.q
    verdict = is_useless(q)
    out = {"useless": verdict.useless, "witness": None if verdict.witness is None else list(verdict.witness)}
    ident_p, ident = lm_rate_max_input(w, q, _search(args))
    out["identity_lm_rate"] = _rate(ident.rate)
    rep = r_pre_lm(w, q, _search(args))
    out["pre_opt"] = _report_pre(rep)
    if w.shape == (2, 2):
        bc = binary_mismatch_capacity(w, q)
        bp = binary_pre_capacity(w, q)
        out["binary"] = {"C_q": _rate(bc.value), "regime": bc.regime.value,
                         "pre_capacity": _rate(bp.value), "f": bp.f.to_json()}
    try:
        ub = upper_bound(w, q, rho=_rho(inst, args), restarts=args.restarts, seed=args.seed)
        out["upper_bound"] = {"bound": _rate(ub.bound), "best_f": ub.best_f.to_json(),
                              "infeasible": [f.to_json() for f in ub.infeasible]}
    except ResourceLimitError as exc:
        out["upper_bound"] = {"skipped": str(exc)}
    return out


COMMANDS = {
    "analyze": cmd_analyze,
    "lm-rate": cmd_lm_rate,
    "pre-opt": cmd_pre_opt,
    "useless": cmd_useless,
    "witness": cmd_witness,
    "upper-bound": cmd_upper_bound,
    "exponent": cmd_exponent,
    "superpose": cmd_superpose,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def build_parser():
    p = argparse.ArgumentParser(prog="predecode", description="Mismatched decoding with pre-processing.")
    p.add_argument("--version", action="version", version=_version())
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--instance", required=True, help="instance JSON path")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trials", type=int, default=10_000)
    common.add_argument("--budget", type=float, default=None, help="I(Y;Z) budget in nats")
    common.add_argument("--rho", default=None, help="'matched' or a JSON file holding rho")
    common.add_argument("--restarts", type=int, default=32)
    common.add_argument("--resolution", type=int, default=16, help="input-simplex lattice resolution")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--trace", default=None, help="JSONL trial trace path (simulate)")
    common.add_argument("--format", choices=["json", "csv"], default="json")
    common.add_argument("--output", default=None, help="write the report here instead of stdout")
    common.add_argument("--no-timing", action="store_true", help="omit the timing field")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "upper-bound":
            sp.add_argument("--strict", action="store_true",
                            help="fail when every pre-processor's polytope is empty")
        if name in ("exponent", "sweep"):
            sp.add_argument("--rates", default=None, help="comma-separated rates in nats")
            sp.add_argument("--points", type=int, default=9)
        if name in ("simulate", "sweep"):
            sp.add_argument("--n", type=int, default=0 if name == "sweep" else 16)
        if name == "simulate":
            sp.add_argument("--rate", type=float, default=0.1, help="code rate in nats")
            sp.add_argument("--ensemble", action="store_true",
                            help="fresh random codebook per trial (no stored codebook)")
        if name == "superpose":
            sp.add_argument("--q-ux", default=None, help="Q_UX as a JSON matrix")
    return p


def _to_csv(results):
    rows = results.get("rows")
    if rows is None:
        raise ValidationError("csv output is only available for sweep")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["rate_bits", "exponent_bits", "p_err", "n", "seed"],
                            lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def run(argv=None):
    """Parse, execute and render; returns ``(exit_code, text)``."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return (EXIT_OK if exc.code == 0 else EXIT_INPUT), ""
    start = time.perf_counter()
    try:
        inst = load_instance(args.instance)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            results = COMMANDS[args.command](inst, args)
        text = _to_csv(results) if args.format == "csv" else None
    except (OSError, ValidationError) as exc:
        return EXIT_INPUT, f"error: {exc}\n"
    except PreconditionError as exc:
        return EXIT_PRECONDITION, f"error: {exc}\n"
    except ResourceLimitError as exc:
        return EXIT_RESOURCE, f"error: {exc}\n"
    report = {
        "command": args.command,
        "argv": list(argv) if argv is not None else sys.argv[1:],
        "instance_hash": instance_hash(inst),
        "seed": args.seed,
        "version": _version(),
        "results": _clean(results),
    }
    if not args.no_timing:
        report["timing_s"] = round(time.perf_counter() - start, 6)
    if text is None:
        text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
        return EXIT_OK, ""
    return EXIT_OK, text


def main(argv=None):
    code, text = run(argv)
    if text:
        (sys.stdout if code == EXIT_OK else sys.stderr).write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
