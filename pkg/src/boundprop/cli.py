"""Command-line front end.

Exit codes: 0 analysis completed (whatever the verdict), 1 usage or
parse error, 2 timeout (partial bounds are still printed), 3 the model
uses an operator outside the supported subset.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass

import numpy as np

from .alpha import OptimizerConfig, run_alpha_crown
from .engine import AnalysisMode, Deadline, preprocess_C, run_crown, run_ibp
from .errors import (
    AnalysisTimeout,
    BoundPropError,
    OnnxImportError,
    UnsupportedOperatorError,
    VnnLibError,
)
from .onnx_import import parse_onnx
from .tensors import BoundedTensor
from .vnnlib import load_specification

_USAGE = "usage: boundprop --input MODEL.onnx [--vnnlib SPEC.vnnlib] [options]"


class UsageError(Exception):
    """Bad flags or flag combinations; reported on exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); route to our code 1
        raise UsageError(message)


@dataclass
class Configuration:
    model_path: str
    vnnlib_path: str | None = None
    method: str = "crown"             # crown | alpha-crown | ibp
    ibp_intermediates: bool = False   # --crown-ibp
    optimize_lower: bool = True
    optimize_upper: bool = True
    iterations: int = 20
    lr: float = 0.5
    lr_decay: float = 0.98
    patience: int = 5
    timeout: float | None = None
    seed: int = 0
    verbosity: int = 1
    device: str = "cpu"
    json_output: bool = False
    best_restore: bool = True


def parse_config(argv) -> Configuration:
    p = _Parser(prog="boundprop",
                description="Sound output bounds for ReLU networks "
                            "(interval and backward linear propagation).")
    p.add_argument("--input", dest="model_path", required=True, metavar="MODEL.onnx",
                   help="network in ONNX format")
    p.add_argument("--vnnlib", dest="vnnlib_path", metavar="SPEC.vnnlib",
                   help="input box and output constraints (VNN-LIB)")
    p.add_argument("--method", choices=("crown", "alpha-crown", "ibp"), default="crown")
    variant = p.add_mutually_exclusive_group()
    variant.add_argument("--standard-crown", action="store_true",
                         help="tighten intermediate boxes with extra backward passes (default)")
    variant.add_argument("--crown-ibp", action="store_true",
                         help="take every intermediate box from the forward interval pass")
    p.add_argument("--optimize-lower", action=argparse.BooleanOptionalAction, default=True,
                   help="tune lower-bound slopes (alpha-crown only)")
    p.add_argument("--optimize-upper", action=argparse.BooleanOptionalAction, default=True,
                   help="tune upper-bound slopes (alpha-crown only)")
    p.add_argument("--iterations", type=int, default=20, metavar="N")
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--lr-decay", type=float, default=0.98)
    p.add_argument("--patience", type=int, default=5, metavar="N")
    p.add_argument("--no-best-restore", dest="best_restore", action="store_false",
                   help="report the final iteration instead of the best one")
    p.add_argument("--timeout", type=float, metavar="SECONDS")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--verbosity", type=int, metavar="LEVEL")
    dev = p.add_mutually_exclusive_group()
    dev.add_argument("--cpu", action="store_true", help="run on the CPU (default)")
    dev.add_argument("--cuda", action="store_true",
                     help="accepted for compatibility; falls back to CPU")
    p.add_argument("--json", dest="json_output", action="store_true",
                   help="print one JSON object instead of text")
    ns = p.parse_args(argv)

    if ns.verbose and ns.quiet:
        raise UsageError("--verbose conflicts with --quiet")
    if ns.verbosity is not None and (ns.verbose or ns.quiet):
        raise UsageError("--verbosity conflicts with --verbose/--quiet")
    verbosity = ns.verbosity if ns.verbosity is not None else (
        2 if ns.verbose else 0 if ns.quiet else 1)
    if verbosity < 0:
        raise UsageError("verbosity must be non-negative")
    if ns.iterations < 1:
        raise UsageError("--iterations must be at least 1")
    if not ns.lr > 0.0:
        raise UsageError("--lr must be positive")
    if not 0.0 < ns.lr_decay <= 1.0:
        raise UsageError("--lr-decay must lie in (0, 1]")
    if ns.patience < 1:
        raise UsageError("--patience must be at least 1")
    if ns.timeout is not None and not ns.timeout > 0.0:
        raise UsageError("--timeout must be positive")
    if (ns.standard_crown or ns.crown_ibp) and ns.method != "crown":
        raise UsageError("--standard-crown/--crown-ibp apply to --method crown")

    return Configuration(
        model_path=ns.model_path,
        vnnlib_path=ns.vnnlib_path,
        method=ns.method,
        ibp_intermediates=bool(ns.crown_ibp),
        optimize_lower=ns.optimize_lower,
        optimize_upper=ns.optimize_upper,
        iterations=ns.iterations,
        lr=ns.lr,
        lr_decay=ns.lr_decay,
        patience=ns.patience,
        timeout=ns.timeout,
        seed=ns.seed,
        verbosity=verbosity,
        device="cuda" if ns.cuda else "cpu",
        json_output=ns.json_output,
        best_restore=ns.best_restore,
    )


# ---------------------------------------------------------------------------
# report formatting
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    if np.isposinf(v):
        return "inf"
    if np.isneginf(v):
        return "-inf"
    return format(float(v), ".17g")


def _json_num(v: float) -> str:
    if np.isposinf(v):
        return '"inf"'
    if np.isneginf(v):
        return '"-inf"'
    return format(float(v), ".17g")


def _branch_verified(bounds: BoundedTensor, rhs: np.ndarray) -> bool:
    return bool(np.all(bounds.upper <= rhs))


def _text_report(bounds, rhs_list, verdict, elapsed) -> str:
    lines = []
    for b_i, b in enumerate(bounds):
        if len(bounds) > 1:
            lines.append(f"branch {b_i}:")
        lo = b.lower.reshape(-1)
        hi = b.upper.reshape(-1)
        for i in range(lo.size):
            lines.append(f"row {i}: [{_fmt(lo[i])}, {_fmt(hi[i])}]")
    lines.append(f"verdict: {verdict}")
    lines.append(f"time: {elapsed:.3f} s")
    return "\n".join(lines) + "\n"


def _json_report(bounds, rhs_list, verdict, elapsed, input_size, output_size) -> str:
    def rows_of(b: BoundedTensor) -> str:
        lo = b.lower.reshape(-1)
        hi = b.upper.reshape(-1)
        return ", ".join(f"[{_json_num(lo[i])}, {_json_num(hi[i])}]" for i in range(lo.size))

    first = rows_of(bounds[0]) if bounds else ""
    branch_objs = []
    for b, rhs in zip(bounds, rhs_list):
        ok = "true" if _branch_verified(b, rhs) else "false"
        branch_objs.append('{"rows": [' + rows_of(b) + '], "verified": ' + ok + "}")
    parts = [
        '"rows": [' + first + "]",
        '"branches": [' + ", ".join(branch_objs) + "]",
        f'"verdict": "{verdict}"',
        f'"time_seconds": {elapsed:.6f}',
        f'"input_size": {input_size}',
        f'"output_size": {output_size}',
    ]
    return "{" + ", ".join(parts) + "}\n"


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run_cli(config: Configuration) -> int:
    t0 = time.perf_counter()

    def debug(msg: str) -> None:
        if config.verbosity >= 2:
            print(msg, file=sys.stderr)

    if config.device == "cuda" and config.verbosity >= 1:
        print("warning: CUDA support is not built in; falling back to CPU",
              file=sys.stderr)

    try:
        graph = parse_onnx(config.model_path)
    except UnsupportedOperatorError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (OnnxImportError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    n = graph.input_size
    m = graph.nodes[graph.output_id].size
    debug(f"loaded network: {n} inputs, {m} outputs, {len(graph.nodes)} nodes")

    spec = None
    box = BoundedTensor(np.full(n, -np.inf), np.full(n, np.inf))
    if config.vnnlib_path is not None:
        try:
            parsed_box, spec = load_specification(config.vnnlib_path, n, m)
        except (VnnLibError, OSError) as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        if parsed_box is not None:
            box = parsed_box

    try:
        branches = preprocess_C(spec, m)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    rhs_list = [b.rhs for b in branches]
    debug(f"analyzing {len(branches)} branch(es), method={config.method}")

    deadline = Deadline(config.timeout)
    complete = True
    try:
        if config.method == "ibp":
            result = run_ibp(graph, box, branches, deadline)
            bounds = result.branch_bounds
            debug(f"backward passes: {result.passes}")
        elif config.method == "crown":
            mode = (AnalysisMode.CROWN_IBP if config.ibp_intermediates
                    else AnalysisMode.CROWN_STANDARD)
            result = run_crown(graph, box, branches, mode, deadline=deadline)
            bounds = result.branch_bounds
            debug(f"backward passes: {result.passes}")
        else:
            opt = OptimizerConfig(
                iterations=config.iterations,
                lr=config.lr,
                lr_decay=config.lr_decay,
                patience=config.patience,
                optimize_lower=config.optimize_lower,
                optimize_upper=config.optimize_upper,
                best_restore=config.best_restore,
                seed=config.seed,
            )
            ares = run_alpha_crown(graph, box, branches, opt, deadline)
            bounds = ares.branch_bounds
            complete = ares.complete
            debug(f"backward passes: {ares.passes}, "
                  f"gradient iterations: {ares.iterations_used}")
    except AnalysisTimeout as e:
        bounds = e.partial or []
        complete = False
    except BoundPropError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    if not complete:
        verdict = "timeout"
    elif any(_branch_verified(b, rhs) for b, rhs in zip(bounds, rhs_list)):
        verdict = "verified"
    else:
        verdict = "unknown"

    elapsed = time.perf_counter() - t0
    if config.json_output:
        sys.stdout.write(_json_report(bounds, rhs_list, verdict, elapsed, n, m))
    else:
        sys.stdout.write(_text_report(bounds, rhs_list, verdict, elapsed))
    return 2 if not complete else 0


def main(argv=None) -> int:
    try:
        config = parse_config(sys.argv[1:] if argv is None else argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        print(_USAGE, file=sys.stderr)
        return 1
    return run_cli(config)


if __name__ == "__main__":
    sys.exit(main())
