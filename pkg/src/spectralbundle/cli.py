"""Batch command-line front end: ``solve``, ``generate``, ``convert`` and ``report``.

Every command that writes files also writes ``<out>.manifest.json`` next to
its main output. The manifest records the command line, the effective
configuration, the seed, a SHA-256 hash of each input and output, and
start and end timestamps.

Exit codes: 0 converged (or success), 1 invalid input or usage, 2 iteration
limit reached, 3 subproblem stall.
"""

import argparse
import datetime
import hashlib
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import SpectralBundleError
from .generators import gen_random_sdp, maxcut_sdp, read_graph
from .penalty import PenaltyConfig, PenaltySource, maxcut_rho_dual, maxcut_rho_primal, rho_from_known
from .problem import (
    convert_dual_to_primal,
    convert_primal_to_dual,
    read_json_with_solution,
    read_sdpa,
    write_json,
)
from .solver import SolverConfig, Status, read_history_csv, sbmd_solve, sbmp_solve, write_history_csv

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_MAXITER = 2
EXIT_STALL = 3

_STATUS_EXIT = {Status.Converged: EXIT_OK, Status.MaxIter: EXIT_MAXITER, Status.SubproblemStall: EXIT_STALL}

# flag name -> SolverConfig field
_CONFIG_FLAGS = {
    "rp": "r_p",
    "rc": "r_c",
    "tol": "tol",
    "max_iter": "max_iter",
    "alpha0": "alpha0",
    "beta": "beta",
    "mr": "m_r",
    "seed": "seed",
}


class UsageError(Exception):
    """Bad flag combination detected after argparse has run."""


# ---------------------------------------------------------------------------
# file helpers


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_manifest(out, argv, started, config=None, seed=None, inputs=(), outputs=(), extra=None):
    manifest = {
        "schema_version": 1,
        "version": __version__,
        "command_line": list(argv),
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "started": started,
        "finished": _now(),
    }
    if extra:
        manifest.update(extra)
    path = Path(str(out) + ".manifest.json")
    _atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _read_problem(path, fmt=None):
    """Return ``(problem, KnownSolution or None)``; the format defaults to the file extension."""
    fmt = fmt or ("sdpa" if str(path).endswith((".dat-s", ".dat", ".sdpa")) else "json")
    if fmt == "sdpa":
        return read_sdpa(path), None
    return read_json_with_solution(path)


def _error(msg):
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_INPUT


# ---------------------------------------------------------------------------
# solve


def _solver_config(args, problem, solution):
    """Defaults, then ``--config`` JSON, then explicit flags."""
    values = {}
    rho_mode = None
    rho = None
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise UsageError("--config must hold a JSON object")
        rho = loaded.pop("rho", None)
        rho_mode = loaded.pop("rho_mode", None)
        known = set(SolverConfig.__dataclass_fields__) - {"rho"}
        unknown = set(loaded) - known
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        values.update(loaded)
    for flag, name in _CONFIG_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            values[name] = v
    if args.rho is not None:
        rho, rho_mode = args.rho, None
    if args.rho_mode is not None:
        rho, rho_mode = None, args.rho_mode
    if rho_mode is not None:
        rho = _rho_from_mode(rho_mode, args.alg, problem, solution)
    elif rho is None:
        rho = 1.0
    values["rho"] = rho
    return SolverConfig(**values)


def _rho_from_mode(mode, alg, problem, solution):
    if mode == "maxcut-dual":
        return PenaltyConfig(float(maxcut_rho_dual(problem.n)), PenaltySource.MaxCutDual)
    if mode == "maxcut-primal":
        # the Max-Cut cost matrix is L/4
        return PenaltyConfig(maxcut_rho_primal(4.0 * problem.C), PenaltySource.MaxCutPrimal)
    if mode == "from-solution":
        if solution is None:
            raise UsageError("--rho-mode from-solution needs an input file with a known solution")
        side = "primal" if alg == "sbmp" else "dual"
        return PenaltyConfig(rho_from_known(solution, side), PenaltySource.FromKnownSolution)
    raise UsageError(f"unknown rho mode {mode!r}")


def _solve_one(job):
    """Solve one input file; returns ``(exit code, message)``. Runs in worker processes."""
    args, path, out, history, argv = job
    started = _now()
    try:
        problem, solution = _read_problem(path, args.format)
        cfg = _solver_config(args, problem, solution)
        cfg.validate(problem.n)
        solve = sbmp_solve if args.alg == "sbmp" else sbmd_solve
        report = solve(problem, cfg)
    except (SpectralBundleError, UsageError, OSError, ValueError) as exc:
        return EXIT_INPUT, f"{path}: {exc}"
    wall_ns = report.history[-1].wall_ns if report.history else 0
    if not args.timings:
        # wall-clock times would make otherwise identical histories differ byte for byte
        report.history = [_without_time(h) for h in report.history]
    data = report.to_dict()
    data["input"] = str(path)
    data["offset"] = problem.offset
    data["wall_ns"] = wall_ns
    outputs = []
    if out is not None:
        _atomic_write_text(out, json.dumps(data, indent=1) + "\n")
        outputs.append(out)
    if history is not None:
        Path(history).parent.mkdir(parents=True, exist_ok=True)
        write_history_csv(report, history)
        outputs.append(history)
    if outputs:
        _write_manifest(outputs[0], argv, started, cfg.snapshot(), cfg.seed, [path], outputs)
    last = report.history[-1] if report.history else None
    msg = f"{path}: {report.status.value} after {report.iterations} iterations"
    if last is not None:
        msg += f", objective {last.objective:.10g}, max eta {max(last.eta):.3e}"
    return _STATUS_EXIT[report.status], msg


def _without_time(rec):
    return replace(rec, wall_ns=0)


def _worst(codes):
    for code in (EXIT_INPUT, EXIT_STALL, EXIT_MAXITER):
        if code in codes:
            return code
    return EXIT_OK


def cmd_solve(args, argv=()):
    inputs = [Path(p) for p in args.input]
    if args.rc is not None and args.rc < 1:
        return _error("--rc must be at least 1")
    if len(inputs) == 1:
        jobs = [(args, inputs[0], args.out, args.history, argv)]
    else:
        # several inputs: --out and --history name directories
        jobs = []
        for p in inputs:
            out = Path(args.out) / f"{p.stem}.report.json" if args.out else None
            hist = Path(args.history) / f"{p.stem}.history.csv" if args.history else None
            jobs.append((args, p, out, hist, argv))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_solve_one, jobs))
    else:
        results = [_solve_one(j) for j in jobs]
    for code, msg in results:
        print(msg, file=sys.stderr if code == EXIT_INPUT else sys.stdout)
    return _worst([code for code, _ in results])


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args, argv=()):
    started = _now()
    inputs = []
    try:
        if args.kind == "random":
            missing = [f for f in ("n", "m", "rank") if getattr(args, f) is None]
            if missing:
                raise UsageError("random instances need " + ", ".join(f"--{f}" for f in missing))
            seed = 0 if args.seed is None else args.seed
            inst = gen_random_sdp(args.n, args.m, args.rank, seed)
            write_json(inst.problem, args.out, solution=inst.solution)
            config = {"kind": "random", "n": args.n, "m": args.m, "rank": args.rank,
                      "sigma_p": inst.sigma_p, "sigma_d": inst.sigma_d}
        else:
            if args.graph is None:
                raise UsageError("maxcut instances need --graph")
            g = read_graph(args.graph)
            write_json(maxcut_sdp(g, sense=args.sense), args.out)
            inputs.append(args.graph)
            seed = None
            config = {"kind": "maxcut", "n": g.n, "edges": len(g.edges), "sense": args.sense}
    except (SpectralBundleError, UsageError, OSError, ValueError) as exc:
        return _error(str(exc))
    _write_manifest(args.out, argv, started, config, seed, inputs, [args.out])
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# convert


def cmd_convert(args, argv=()):
    started = _now()
    try:
        problem, _ = _read_problem(args.input, args.format)
        if args.direction == "p2d":
            converted = convert_primal_to_dual(problem)
        else:
            converted, _ = convert_dual_to_primal(problem)
        dim = problem.n * (problem.n + 1) // 2 - problem.m
        write_json(converted, args.out)
    except (SpectralBundleError, UsageError, OSError, ValueError) as exc:
        return _error(str(exc))
    extra = {"null_space_dim": int(dim), "offset": converted.offset}
    _write_manifest(args.out, argv, started, {"direction": args.direction}, None, [args.input], [args.out], extra)
    print(f"wrote {args.out} (null-space dimension {dim})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

REPORT_COLUMNS = ["history", "iterations", "objective", "eta1", "eta2", "eta3", "eta4", "eta5",
                  "max_eta", "cost_gap", "wall_s"]


def cmd_report(args, argv=()):
    rows = []
    try:
        for path in args.histories:
            hist = read_history_csv(path)
            if not hist:
                raise UsageError(f"{path}: empty history")
            last = hist[-1]
            eta = [float(last[f"eta{i}"]) for i in range(1, 6)]
            obj = float(last["objective"])
            gap = ""
            if args.reference is not None:
                ref = args.reference
                gap = (obj - ref) / abs(ref) if ref != 0 else obj - ref
            rows.append([str(path), len(hist), obj, *eta, max(eta), gap, int(last["wall_ns"]) * 1e-9])
    except (SpectralBundleError, UsageError, OSError, ValueError) as exc:
        return _error(str(exc))

    def fmt(v):
        return format(v, ".6e") if isinstance(v, float) else str(v)

    lines = [",".join(REPORT_COLUMNS)] + [",".join(fmt(v) for v in r) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        _atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; 2 is reserved for the iteration limit here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="spectralbundle", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="run SBMP or SBMD on one or more problem files")
    s.add_argument("--alg", choices=["sbmp", "sbmd"], required=True)
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--format", choices=["json", "sdpa"])
    s.add_argument("--rp", type=int)
    s.add_argument("--rc", type=int)
    rho = s.add_mutually_exclusive_group()
    rho.add_argument("--rho", type=float)
    rho.add_argument("--rho-mode", choices=["maxcut-dual", "maxcut-primal", "from-solution"])
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--alpha0", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--mr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="JSON file of SolverConfig fields; flags take precedence")
    s.add_argument("--history", help="history CSV path (a directory when several inputs are given)")
    s.add_argument("--out", help="report JSON path (a directory when several inputs are given)")
    s.add_argument("--jobs", type=int, default=1, help="solve several input files in parallel")
    s.add_argument("--timings", action="store_true",
                   help="record wall-clock times in the history (makes output non-reproducible)")
    s.set_defaults(func=cmd_solve)

    g = sub.add_parser("generate", help="write a random or Max-Cut instance")
    g.add_argument("--kind", choices=["random", "maxcut"], required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--rank", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--graph")
    g.add_argument("--sense", choices=["min", "max"], default="min",
                   help="maxcut only: 'max' writes the cut bound as min <-L/4, X>")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("convert", help="rewrite a problem between equality and inequality form")
    c.add_argument("--direction", choices=["p2d", "d2p"], required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--format", choices=["json", "sdpa"])
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convert)

    r = sub.add_parser("report", help="summarize history CSV files")
    r.add_argument("--histories", nargs="+", required=True)
    r.add_argument("--reference", type=float, help="optimal value for the cost-gap column")
    r.add_argument("--out", help="table path (stdout when omitted)")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "jobs", 1) < 1:
        return _error("--jobs must be positive")
    try:
        return args.func(args, ["spectralbundle", *argv])
    except UsageError as exc:
        return _error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
