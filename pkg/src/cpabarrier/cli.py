"""Command-line front end: cpabarrier {sample,synth,verify,simulate,refine,export}.

Exit codes: 0 success, 2 usage or malformed input, 3 phase 1 stalled,
4 numerical breakdown in the cone solver, 5 certificate check failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import bundle as bdl
from . import dataset as ds
from .config import SynthesisConfig
from .dynamics import BENCHMARKS, ConstantController, benchmark, save_trajectory, simulate
from .exceptions import CpaBarrierError, NumericalBreakdown, SchemaError
from .synthesis import run
from .verify import empirical_invariance, extract_controller

EXIT_OK, EXIT_USAGE, EXIT_STALL, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4, 5
DEFAULT_SPACING = 0.0625
DEFAULT_U_SPACING = 0.1

log = logging.getLogger("cpabarrier")


class UsageError(Exception):
    pass


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _box(text: Optional[str], default) -> np.ndarray:
    if text is None:
        return default
    vals = _floats(text)
    if len(vals) % 2:
        raise UsageError(f"box {text!r} needs lo,hi pairs")
    box = np.array(vals).reshape(-1, 2)
    if np.any(box[:, 0] >= box[:, 1]):
        raise UsageError(f"box {text!r} has lo >= hi")
    return box


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

_FLAG_FIELDS = {
    "epsilon": "epsilon",
    "rho": "rho",
    "max_iter_phase1": "max_iter_phase1",
    "max_iter_phase2": "max_iter_phase2",
    "refine": "refine",
    "refine_rounds": "refine_rounds",
    "b_mode": "b_mode",
    "slack_form": "slack_form",
    "norm": "norm",
    "dump_dir": "dump_dir",
    "tol": "tol",
}


def _load_config_file(path) -> tuple[dict, dict]:
    """Synthesis settings and pipeline source from a config JSON.

    Accepts either a bare SynthesisConfig dictionary or a bundle's
    config.json (which nests it under "synthesis" next to "source").
    """
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if "synthesis" in raw:
        return dict(raw["synthesis"]), dict(raw.get("source") or {})
    return raw, {}


def _build_config(args, base: Optional[dict] = None) -> SynthesisConfig:
    d = dict(base or {})
    for attr, key in _FLAG_FIELDS.items():
        v = getattr(args, attr, None)
        if v is not None:
            d[key] = v
    try:
        return SynthesisConfig.from_dict(d)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad synthesis settings: {exc}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _sample_benchmark(name: str, spacing: float, u_spacing: float, state_box=None, input_box=None):
    oracle = benchmark(name)
    sbox = _box(state_box, oracle.state_box)
    ibox = _box(input_box, oracle.input_box) if oracle.m else None
    if spacing <= 0 or (oracle.m and u_spacing <= 0):
        raise UsageError("spacings must be positive")
    return ds.grid_sample(oracle, sbox, spacing, ibox, u_spacing if oracle.m else None)


def cmd_sample(args) -> int:
    data = _sample_benchmark(args.benchmark, args.spacing, args.u_spacing, args.state_box, args.input_box)
    out = Path(args.out or f"{args.benchmark}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save(out)
    print(f"wrote {data.N * data.M} transitions ({data.N} states x {data.M} inputs) to {out}")
    return EXIT_OK


def _resolve_source(args, source: dict):
    """Dataset and oracle from a positional path, --benchmark, or a config source."""
    if args.dataset and args.benchmark:
        raise UsageError("give either a dataset path or --benchmark, not both")
    if args.dataset:
        source = {"kind": "dataset", "path": str(Path(args.dataset).resolve())}
    elif args.benchmark:
        source = {"kind": "benchmark", "name": args.benchmark,
                  "spacing": args.spacing or DEFAULT_SPACING, "u_spacing": args.u_spacing or DEFAULT_U_SPACING}
    elif not source:
        raise UsageError("a dataset path or --benchmark is required")
    if source.get("kind") == "dataset":
        data = ds.load(source["path"])
    elif source.get("kind") == "benchmark":
        data = _sample_benchmark(source["name"], source["spacing"], source["u_spacing"])
    else:
        raise UsageError(f"unrecognised source {source!r}")
    oracle_name = getattr(args, "oracle", None) or source.get("oracle") or (
        source["name"] if source["kind"] == "benchmark" else None)
    if oracle_name:
        source["oracle"] = oracle_name
    return data, source, (benchmark(oracle_name) if oracle_name else None)


def _progress(rec: dict) -> None:
    log.info("iter %d %s cost=%.6g max_slack=%.3g b=%.4g", rec["iter"], rec["phase"], rec["cost"],
             rec["max_slack"], rec["b"])


def _finish_synthesis(result, out: Path, source: dict, seed) -> int:
    bdl.write_bundle(result, out, source=source, seed=seed)
    print(f"bundle written to {out}")
    print(f"feasible={result.feasible} area={result.area:.6g} b={result.b:.6g} "
          f"iterations={result.stats['iterations']} vertices={result.stats['n_vertices']}")
    if result.inserted_points:
        print(f"inserted {len(result.inserted_points)} points (see inserted_points.csv)")
    if result.certificate is not None:
        print(result.certificate.summary())
    if not result.feasible:
        print("phase 1 did not reach a verified certificate; worst-slack simplices: "
              + ", ".join(str(i) for i in result.worst_simplices))
        return EXIT_STALL
    return EXIT_OK


def cmd_synth(args) -> int:
    base, source = _load_config_file(args.config) if args.config else ({}, {})
    config = _build_config(args, base)
    data, source, oracle = _resolve_source(args, source)
    if config.refine != "none" and oracle is None:
        raise UsageError(f"--refine {config.refine} needs --oracle")
    result = run(data, config, oracle=oracle, log=_progress)
    return _finish_synthesis(result, Path(args.out or "bundle"), source, args.seed)


def cmd_refine(args) -> int:
    b = bdl.read_bundle(args.bundle)
    data = b.dataset()
    if data is None:
        raise SchemaError(f"bundle {args.bundle} has no dataset.csv")
    source = dict(b.source)
    name = args.oracle or source.get("oracle")
    if not name:
        raise UsageError("refine needs --oracle (the bundle does not record one)")
    source["oracle"] = name
    base = b.config.to_dict()
    if args.config:
        base.update(_load_config_file(args.config)[0])
    args.refine = args.mode
    config = _build_config(args, base)
    result = run(data, config, oracle=benchmark(name), tri=b.tri, log=_progress)
    return _finish_synthesis(result, Path(args.out or args.bundle), source, args.seed)


def cmd_verify(args) -> int:
    b = bdl.read_bundle(args.bundle)
    data = ds.load(args.dataset) if args.dataset else None
    if args.tol is not None:
        b.config = b.config.with_(tol=args.tol)
    report = b.verify(data)
    print(report.summary())
    if args.out:
        report.save(args.out)
    if not report.passed:
        print("FAILED: " + ", ".join(f"({c})" for c in report.failed()))
        return EXIT_VERIFY
    print("certificate verified")
    return EXIT_OK


def cmd_simulate(args) -> int:
    b = bdl.read_bundle(args.bundle) if args.bundle else None
    name = args.oracle or (b.source.get("oracle") or b.source.get("name") if b else None)
    if not name:
        raise UsageError("simulate needs --oracle or a bundle that records one")
    oracle = benchmark(name)
    seed = 0 if args.seed is None else args.seed
    if args.audit:
        if b is None:
            raise UsageError("--audit needs a bundle")
        res = b.as_result()
        audit = empirical_invariance(oracle, res, samples=args.audit, horizon=args.horizon, seed=seed)
        out = Path(args.out or Path(args.bundle) / "audit.json")
        audit.save(out)
        print(f"audit: {len(audit.violations)} of {audit.samples} trajectories left S within {audit.horizon} steps; "
              f"{audit.input_violations} inputs outside U; written to {out}")
        return EXIT_OK if not audit.violations and not audit.input_violations else EXIT_VERIFY
    if args.x0 is None:
        raise UsageError("simulate needs --x0 (or --audit)")
    x0 = np.array(args.x0)
    if x0.shape != (oracle.n,):
        raise UsageError(f"--x0 needs {oracle.n} coordinates")
    controller = None
    if oracle.m:
        if args.input is not None:
            controller = ConstantController(args.input)
        elif b is not None:
            controller = extract_controller(b.as_result())
        else:
            raise UsageError("a system with inputs needs --input or a bundle")
    states, inputs = simulate(oracle, controller, x0, args.horizon, return_inputs=True)
    out = Path(args.out or "trajectory.csv")
    save_trajectory(out, states, inputs if oracle.m else None)
    print(f"wrote {len(states)} states to {out}")
    if b is not None:
        w = b.function().evaluate_many(states, extended=True)
        print(f"max W along trajectory: {w.max():.6g} ({'stays in' if w.max() <= 0 else 'leaves'} S)")
    return EXIT_OK


def cmd_export(args) -> int:
    b = bdl.read_bundle(args.bundle)
    if b.tri.dim != 2:
        raise UsageError(f"export needs a 2-D bundle, got {b.tri.dim}-D")
    files = bdl.export_bundle(b, args.out or args.bundle, args.format)
    for f in files:
        print(f)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--seed", type=int, default=None, help="random seed (recorded in bundles)")
    common.add_argument("--tol", type=float, default=None, help="cone solver tolerance")
    common.add_argument("--config", help="JSON file with synthesis settings (a bundle config.json works)")
    common.add_argument("-v", "--verbose", action="store_true", help="log ICO progress to stderr")

    synth_flags = argparse.ArgumentParser(add_help=False)
    synth_flags.add_argument("--epsilon", type=float)
    synth_flags.add_argument("--rho", type=float)
    synth_flags.add_argument("--max-iter-phase1", type=int)
    synth_flags.add_argument("--max-iter-phase2", type=int)
    synth_flags.add_argument("--refine-rounds", type=int)
    synth_flags.add_argument("--b-mode", choices=["decision-variable", "frozen"])
    synth_flags.add_argument("--slack-form", choices=["corner", "identity"])
    synth_flags.add_argument("--norm", choices=["euclidean", "max"])
    synth_flags.add_argument("--dump-dir", help="write every cone subproblem here")
    synth_flags.add_argument("--oracle", choices=sorted(BENCHMARKS), help="benchmark oracle used for refinement")

    p = argparse.ArgumentParser(prog="cpabarrier", description="CPA barrier function synthesis from one-step data")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="grid-sample a benchmark into a dataset CSV")
    s.add_argument("benchmark", choices=sorted(BENCHMARKS))
    s.add_argument("--spacing", type=float, default=DEFAULT_SPACING)
    s.add_argument("--u-spacing", type=float, default=DEFAULT_U_SPACING)
    s.add_argument("--state-box", help="lo1,hi1,lo2,hi2,...")
    s.add_argument("--input-box", help="lo1,hi1,...")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("synth", parents=[common, synth_flags], help="run ICO synthesis and write a bundle")
    s.add_argument("dataset", nargs="?", help="dataset CSV (with JSON sidecar)")
    s.add_argument("--benchmark", choices=sorted(BENCHMARKS), help="sample this benchmark instead of reading a file")
    s.add_argument("--spacing", type=float)
    s.add_argument("--u-spacing", type=float)
    s.add_argument("--refine", choices=["none", "feasibility", "boundary"])
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("refine", parents=[common, synth_flags], help="refine an existing bundle with oracle samples")
    s.add_argument("bundle")
    s.add_argument("--mode", choices=["feasibility", "boundary"], default="boundary")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("verify", parents=[common], help="re-check the barrier conditions of a bundle")
    s.add_argument("bundle")
    s.add_argument("dataset", nargs="?", help="dataset CSV (defaults to the bundle copy)")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", parents=[common], help="simulate a benchmark, optionally under a bundle controller")
    s.add_argument("bundle", nargs="?")
    s.add_argument("--oracle", choices=sorted(BENCHMARKS))
    s.add_argument("--x0", type=_floats)
    s.add_argument("--horizon", type=int, default=100)
    s.add_argument("--input", type=_floats, help="constant input instead of the bundle controller")
    s.add_argument("--audit", type=int, metavar="N", help="audit N seeded trajectories started in S")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("export", parents=[common], help="write SVG figures and CSV tables of a 2-D bundle")
    s.add_argument("bundle")
    s.add_argument("--format", choices=["svg", "csv"], default="svg")
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on bad usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cpabarrier: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalBreakdown as exc:
        print(f"cpabarrier: numerical breakdown: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SchemaError, FileNotFoundError) as exc:
        print(f"cpabarrier: malformed input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CpaBarrierError as exc:
        print(f"cpabarrier: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
