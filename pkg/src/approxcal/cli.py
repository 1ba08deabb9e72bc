"""Command-line front end.

Subcommands ``gen``, ``calibrate``, ``resilience``, ``dse`` and ``energy``
each write their outputs atomically together with a ``manifest.json`` that
records the fully resolved options.  ``replay MANIFEST`` re-executes such a
run; outputs other than the manifest's own timestamp come out byte-identical.

Exit codes
----------
0 success, 2 invalid arguments or configuration, 3 file I/O or unreadable
input, 4 numeric failure, 5 the solver did not converge.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from pathlib import Path

from . import __version__, accel, datagen, resilience
from ._fileio import dump_json, write_csv
from .errormodel import SITES, ErrorModelConfig, wrap_backend, write_decision_log
from .errors import (HarnessError, NumericFailure, ProblemFormatError, ValidationError)
from .stefcal import ReferenceBackend, RunTrace, StefcalConfig, quality_acceptance, run

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_NOT_CONVERGED = 5

MANIFEST_NAME = "manifest.json"

# options that steer a single invocation but never its results
_NOT_RECORDED = {"func", "config", "quiet"}


class _NotConverged(Exception):
    pass


# ---------------------------------------------------------------- parsing helpers


def parse_range(text: str) -> tuple:
    """Expand ``start:step:stop`` (inclusive), ``a,b,c`` or a single number.

    Steps are taken in decimal arithmetic so ``0:0.1:0.3`` yields exactly
    ``0.0, 0.1, 0.2, 0.3``.
    """
    text = text.strip()
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError
            start, step, stop = (Decimal(p) for p in parts)
            if step <= 0 or stop < start:
                raise ValueError
            n = int((stop - start) / step)
            vals = [start + k * step for k in range(n + 1)]
        else:
            vals = [Decimal(p) for p in text.split(",")]
        if any(not v.is_finite() for v in vals):
            raise ValueError
    except (InvalidOperation, ValueError):
        raise argparse.ArgumentTypeError(
            f"invalid range {text!r}; expected start:step:stop with step > 0, "
            "a comma list, or a number") from None
    return tuple(float(v) for v in vals)


def _n_ax_range(text: str):
    if text.strip().lower() in ("inf", "none", "unlimited"):
        return (None,)
    return parse_range(text)


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {v}")
    return v


def _sites(text):
    sites = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [s for s in sites if s not in SITES]
    if not sites or bad:
        raise argparse.ArgumentTypeError(f"sites must be a comma list drawn from {SITES}")
    return sites


def _load_problem(path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return datagen.load_problem_csv(path)
    return datagen.load_problem(path)


def _stefcal_config(args) -> StefcalConfig:
    return StefcalConfig(max_iters=args.max_iters, tol=args.tol)


def _accel_config(args) -> accel.AccelConfig:
    if getattr(args, "accel_config", None):
        return accel.load_accel_config(args.accel_config)
    return accel.default_accel_config()


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    return v


def _write_manifest(path, args, inputs: dict, outputs: list):
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in _NOT_RECORDED}
    doc = {
        "tool": "approxcal",
        "version": __version__,
        "subcommand": args.command,
        "config": config,
        "seeds": {"seed": getattr(args, "seed", None)},
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": [str(p) for p in outputs],
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    return dump_json(path, doc)


def _say(args, *msg):
    if not getattr(args, "quiet", False):
        print(*msg)


# ---------------------------------------------------------------- subcommands


def cmd_gen(args):
    problem = datagen.synthesize(P=args.P, gain_spread=args.spread, noise_sigma=args.noise,
                                 rank=args.rank, seed=args.seed, phase_spread=args.phase_spread)
    out = Path(args.out)
    written = [datagen.save_problem(problem, out)]
    if args.csv:
        written.append(datagen.save_problem_csv(problem, args.csv))
    manifest = out.with_name(out.name + ".manifest.json")
    _write_manifest(manifest, args, {}, written)
    _say(args, f"wrote P={problem.P} problem to {out}")
    return EXIT_OK


def _calibration_backend(args, acfg: accel.AccelConfig):
    if args.backend == "ref":
        return ReferenceBackend()
    if args.backend == "acc":
        return accel.make_backend(acfg.accurate)
    if args.backend == "ax":
        return accel.make_backend(acfg.approximate)
    if args.n_ax is None:
        raise ValidationError("--backend hetero requires --n-ax")
    return accel.HeteroBackend(accel.make_backend(acfg.accurate),
                               accel.make_backend(acfg.approximate), args.n_ax)


def cmd_calibrate(args):
    problem = _load_problem(args.problem)
    cfg = _stefcal_config(args)
    acfg = _accel_config(args)
    backend = _calibration_backend(args, acfg)
    injecting = args.em is not None or args.ep is not None
    if injecting:
        if args.seed is None:
            raise ValidationError("error injection requires --seed")
        emc = ErrorModelConfig(EM=args.em or 0.0, EP=args.ep or 0.0, ER=args.er,
                               N_ax=args.inject_n_ax, sites=args.sites, seed=args.seed)
        backend = wrap_backend(backend, emc)
    reference = RunTrace.read_csv(args.ref_trace) if args.ref_trace else None

    trace = run(problem, cfg, backend, reference)
    out = Path(args.out)
    written = list(trace.write_csv(out / "trace.csv"))
    extra = {"backend": args.backend}
    if reference is not None:
        acc = quality_acceptance(trace, reference, cfg)
        extra["acceptance"] = {"accepted": acc.accepted, "reasons": list(acc.reasons),
                               "diff_rel": acc.diff_rel,
                               "reference_iterations": acc.reference_iterations}
    if trace.quant_stats is not None:
        extra["saturations"] = dict(sorted(trace.quant_stats.by_signal.items()))
    written.append(trace.write_summary(out / "summary.json", extra))
    if trace.decision_log is not None:
        written.append(write_decision_log(trace.decision_log, out / "decisions.csv"))
    inputs = {"problem": args.problem}
    if args.ref_trace:
        inputs["ref_trace"] = args.ref_trace
    _write_manifest(out / MANIFEST_NAME, args, inputs, written)
    _say(args, f"{trace.status} after {trace.iterations} iterations "
               f"(convergence {trace.final.convergence:.3e})")
    if not trace.converged:
        raise _NotConverged(f"no convergence within {cfg.max_iters} iterations")
    return EXIT_OK


def cmd_resilience(args):
    problem = _load_problem(args.problem)
    cfg = _stefcal_config(args)
    grid = resilience.SweepGrid(EM=args.em, EP=args.ep, ER=args.er, N_ax=args.n_ax,
                                trials=args.trials, base_seed=args.seed,
                                n_ax_mode=args.n_ax_mode, sites=args.sites)
    er_fixed = args.er_fixed if args.er_fixed is not None else max(grid.ER)
    if er_fixed not in grid.ER:
        raise ValidationError(f"--er-fixed {er_fixed} is not one of the ER values {grid.ER}")
    base = ReferenceBackend() if args.backend == "ref" else accel.make_backend(
        _accel_config(args).accurate)
    profile = resilience.run_sweep(problem, cfg, grid, base, jobs=args.jobs)
    out = Path(args.out)
    written = [
        resilience.write_profile_csv(profile, out / "profile.csv"),
        resilience.write_profile_long_csv(profile, out / "profile_trials.csv"),
        resilience.write_profile_json(profile, out / "profile.json", er_fixed),
    ]
    _write_manifest(out / MANIFEST_NAME, args, {"problem": args.problem}, written)
    f = resilience.frontier(profile, er_fixed)
    _say(args, f"{len(profile.points)} points x {grid.trials} trials; "
               f"reference {profile.reference_iterations} iterations; frontier {f.as_dict()}")
    return EXIT_OK


DSE_COLUMNS = ["rank", "h", "t", "e_sac", "f_sac", "e_mac", "f_mac", "truncated_bits",
               "N_ax", "N_acc", "P_ax_mW", "P_acc_mW", "S_E"]


def _load_candidates(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}") from exc
    if isinstance(doc, dict):
        doc = doc.get("candidates")
    if not isinstance(doc, list) or not doc:
        raise ValidationError(f"{path}: expected a non-empty list of truncation vectors")
    return doc


def cmd_dse(args):
    problem = _load_problem(args.problem)
    cfg = _stefcal_config(args)
    acfg = _accel_config(args)
    candidates = (_load_candidates(args.candidates) if args.candidates
                  else [acfg.approximate.truncation])
    pm = acfg.power_model
    if args.p_acc is not None or args.p_ax is not None or args.anchor_bits is not None:
        pm = accel.LinearPowerModel(
            args.p_acc if args.p_acc is not None else pm.p_full,
            args.p_ax if args.p_ax is not None else pm.p_anchor,
            args.anchor_bits if args.anchor_bits is not None else pm.anchor_bits)
    points = accel.explore_dse(problem, cfg, acfg.accurate, candidates, pm, jobs=args.jobs)
    rows = [[k + 1, *p.truncation, sum(p.truncation), p.N_ax, p.N_acc, repr(p.P_ax),
             repr(p.P_acc), repr(p.S_E)] for k, p in enumerate(points)]
    out = Path(args.out)
    written = [write_csv(out / "dse.csv", DSE_COLUMNS, rows),
               dump_json(out / "dse.json", {"points": [p.as_dict() for p in points]})]
    inputs = {"problem": args.problem}
    if args.candidates:
        inputs["candidates"] = args.candidates
    _write_manifest(out / MANIFEST_NAME, args, inputs, written)
    best = points[0]
    _say(args, f"best: truncation {best.truncation}, N_ax={best.N_ax}/{best.N_acc}, "
               f"S_E={100 * best.S_E:.2f}%")
    return EXIT_OK


def cmd_energy(args):
    rep = accel.energy_savings(accel.EnergyModel(args.P_acc, args.P_ax, args.N_acc, args.N_ax))
    _say(args, f"S_E = {100 * rep.S_E:.2f}%")
    _say(args, f"  per-iteration energy: accurate {rep.E_acc:g}, approximate {rep.E_ax:g}")
    _say(args, f"  accurate-only total {rep.E_a:g}, heterogeneous total {rep.E_h:g}")
    if args.out:
        out = Path(args.out)
        written = [dump_json(out / "energy.json", rep.as_dict())]
        _write_manifest(out / MANIFEST_NAME, args, {}, written)
    return EXIT_OK


def cmd_replay(args):
    try:
        doc = json.loads(Path(args.manifest).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.manifest}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("subcommand") not in _HANDLERS:
        raise ValidationError(f"{args.manifest}: not a run manifest")
    ns = argparse.Namespace(**doc["config"])
    ns.command = doc["subcommand"]
    ns.quiet = args.quiet
    if args.out is not None:
        ns.out = args.out
    if args.jobs is not None and hasattr(ns, "jobs"):
        ns.jobs = args.jobs
    _normalize(ns)
    return _HANDLERS[ns.command](ns)


_HANDLERS = {
    "gen": cmd_gen,
    "calibrate": cmd_calibrate,
    "resilience": cmd_resilience,
    "dse": cmd_dse,
    "energy": cmd_energy,
}


def _normalize(ns):
    """Restore tuple-valued options after a JSON round trip."""
    for key in ("em", "ep", "er", "n_ax", "sites"):
        v = getattr(ns, key, None)
        if isinstance(v, list):
            setattr(ns, key, tuple(v))


# ---------------------------------------------------------------- parser


def _add_solver_flags(p):
    p.add_argument("--tol", type=float, default=1e-6, help="convergence threshold")
    p.add_argument("--max-iters", type=_positive_int, default=500)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="approxcal", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file whose keys override the flags")
        p.add_argument("-q", "--quiet", action="store_true")
        return p

    p = add("gen", "generate a synthetic calibration problem")
    p.add_argument("--P", type=_positive_int, default=124, help="number of antennas")
    p.add_argument("--spread", type=float, default=0.2, help="gain amplitude spread")
    p.add_argument("--phase-spread", type=float, default=datagen.DEFAULT_PHASE_SPREAD,
                   help="gain phase half-range in radians")
    p.add_argument("--noise", type=float, default=0.0, help="visibility noise sigma")
    p.add_argument("--rank", type=_positive_int, default=3, help="point sources in the model")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="problem file to write")
    p.add_argument("--csv", help="also write a long-format CSV copy here")

    p = add("calibrate", "run StEFCal on a problem file")
    p.add_argument("problem")
    p.add_argument("--backend", choices=("ref", "acc", "ax", "hetero"), default="ref")
    p.add_argument("--n-ax", type=int, help="approximate iterations for --backend hetero")
    p.add_argument("--accel-config", help="accelerator JSON config")
    p.add_argument("--ref-trace", help="trace CSV of a reference run, for diff_rel")
    p.add_argument("--em", type=float, help="inject errors with this mean (percent)")
    p.add_argument("--ep", type=float, help="inject errors with this spread (percent)")
    p.add_argument("--er", type=float, default=100.0, help="injection rate (percent)")
    p.add_argument("--inject-n-ax", type=int, help="inject only in the first N iterations")
    p.add_argument("--sites", type=_sites, default=("Z_kernel",))
    p.add_argument("--seed", type=int, help="required when injecting")
    p.add_argument("--out", required=True, help="output directory")
    _add_solver_flags(p)

    p = add("resilience", "sweep injected-error parameters")
    p.add_argument("problem")
    p.add_argument("--em", type=parse_range, required=True, help="e.g. 5:5:20")
    p.add_argument("--ep", type=parse_range, default=(0.0,))
    p.add_argument("--er", type=parse_range, default=(100.0,), help="e.g. 20:20:100")
    p.add_argument("--n-ax", type=_n_ax_range, default=(None,),
                   help="approximate-iteration budget axis; 'inf' for none")
    p.add_argument("--n-ax-mode", choices=("percent", "absolute"), default="percent")
    p.add_argument("--trials", type=_positive_int, default=5)
    p.add_argument("--er-fixed", type=float, help="ER at which the frontier is reported")
    p.add_argument("--sites", type=_sites, default=("Z_kernel",))
    p.add_argument("--backend", choices=("ref", "acc"), default="ref")
    p.add_argument("--accel-config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    _add_solver_flags(p)

    p = add("dse", "rank approximate-core truncations by energy saving")
    p.add_argument("problem")
    p.add_argument("--candidates", help="JSON list of truncation vectors")
    p.add_argument("--accel-config")
    p.add_argument("--p-acc", type=float, help="accurate-core power, mW")
    p.add_argument("--p-ax", type=float, help="approximate-core power at the anchor, mW")
    p.add_argument("--anchor-bits", type=int, help="truncated bits at the power anchor")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    _add_solver_flags(p)

    p = add("energy", "energy saving of a two-core schedule")
    p.add_argument("P_acc", type=float)
    p.add_argument("P_ax", type=float)
    p.add_argument("N_acc", type=int)
    p.add_argument("N_ax", type=int)
    p.add_argument("--out", help="output directory for a JSON report")

    p = sub.add_parser("replay", help="re-run an invocation from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write outputs here instead")
    p.add_argument("--jobs", type=_positive_int)
    p.add_argument("-q", "--quiet", action="store_true")
    return parser


def _apply_config_file(parser, args):
    try:
        doc = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.config}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{args.config}: expected a JSON object")
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest in _NOT_RECORDED or dest == "command" or not hasattr(args, dest):
            raise ValidationError(f"{args.config}: unknown option {key!r} for {args.command}")
        if dest in ("em", "ep", "er", "n_ax") and args.command == "resilience":
            value = _config_axis(dest, value)
        elif dest == "sites" and isinstance(value, (list, str)):
            value = _sites(value if isinstance(value, str) else ",".join(value))
        setattr(args, dest, value)


def _config_axis(dest, value):
    if isinstance(value, str):
        return _n_ax_range(value) if dest == "n_ax" else parse_range(value)
    if isinstance(value, (int, float)) or value is None:
        value = [value]
    return tuple(None if v is None else float(v) for v in value)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            return cmd_replay(args)
        if args.config:
            _apply_config_file(parser, args)
        return _HANDLERS[args.command](args)
    except argparse.ArgumentTypeError as exc:
        print(f"approxcal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"approxcal: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ProblemFormatError) as exc:
        print(f"approxcal: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericFailure as exc:
        print(f"approxcal: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (_NotConverged, HarnessError) as exc:
        print(f"approxcal: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
