"""End-to-end command line runs against models and specs on disk."""

import json
import pathlib
import re
import subprocess
import sys

import numpy as np
import pytest

from conftest import netgen

TINY_SPEC = """\
; unit box, one ceiling row
(declare-const X_0 Real)
(declare-const X_1 Real)
(declare-const Y_0 Real)
(assert (<= X_0 1.0))
(assert (>= X_0 -1.0))
(assert (<= X_1 1.0))
(assert (>= X_1 -1.0))
(assert (<= Y_0 3.5))
"""


def run_cli(*args, timeout=60):
    return subprocess.run(["boundprop", *args], capture_output=True,
                          text=True, timeout=timeout)


@pytest.fixture(scope="module")
def tiny_model(tmp_path_factory):
    """The 2-2-1 net with W1=[[1,1],[1,-1]], W2=[1,1] as an ONNX file."""
    path = tmp_path_factory.mktemp("models") / "tiny.onnx"
    w1 = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.float64)
    w2 = np.array([[1.0, 1.0]], dtype=np.float64)
    layers = [(w1, None), (w2, None)]
    netgen.save_model(netgen.build_model(layers, flavor="gemm"), str(path))
    return path


@pytest.fixture(scope="module")
def tiny_spec(tmp_path_factory, tiny_model):
    path = tiny_model.parent / "tiny.vnnlib"
    path.write_text(TINY_SPEC)
    return path


@pytest.fixture(scope="module")
def random_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "rand.onnx"
    rng = np.random.default_rng(91)
    layers = netgen.random_layers(rng, 3, 2, 3, 6)
    netgen.save_model(netgen.build_model(layers, flavor="mixed"), str(path))
    return path, layers


# ---------------------------------------------------------------------------
# text and JSON reports
# ---------------------------------------------------------------------------

def test_text_report_structure(tiny_model, tiny_spec):
    r = run_cli("--input", str(tiny_model), "--vnnlib", str(tiny_spec))
    assert r.returncode == 0, r.stderr
    lines = r.stdout.splitlines()
    row = next(l for l in lines if l.startswith("row 0:"))
    m = re.match(r"row 0: \[(-?[\d.e+-]+), (-?[\d.e+-]+)\]", row)
    assert m, row
    assert float(m.group(1)) == -2.0 and float(m.group(2)) == 3.0
    assert "verdict: verified" in r.stdout      # upper 3 <= rhs 3.5
    assert any(l.startswith("time: ") and l.endswith(" s") for l in lines)
    assert "branch" not in r.stdout             # single branch: no headers


def test_json_report_schema(tiny_model, tiny_spec):
    r = run_cli("--input", str(tiny_model), "--vnnlib", str(tiny_spec), "--json")
    assert r.returncode == 0, r.stderr
    doc = json.loads(r.stdout)
    assert set(doc) == {"rows", "branches", "verdict", "time_seconds",
                        "input_size", "output_size"}
    assert doc["input_size"] == 2 and doc["output_size"] == 1
    assert doc["rows"] == [[-2.0, 3.0]]
    assert doc["branches"] == [{"rows": [[-2.0, 3.0]], "verified": True}]
    assert doc["verdict"] == "verified"
    assert isinstance(doc["time_seconds"], float)


def test_json_numbers_survive_17g_round_trip(random_model):
    path, _ = random_model
    r = run_cli("--input", str(path), "--method", "crown", "--json",
                "--vnnlib", _box_spec(path.parent, 3, radius=0.7))
    doc = json.loads(r.stdout)
    from boundprop.model import BoundModel

    model = BoundModel.from_onnx(str(path))
    model.set_input_bounds(np.full(3, -0.7), np.full(3, 0.7))
    lo, hi = model.compute_bounds(method="CROWN")
    got = np.array(doc["rows"])
    assert got[:, 0].tobytes() == lo.tobytes()
    assert got[:, 1].tobytes() == hi.tobytes()


def _box_spec(directory, n, radius):
    path = pathlib.Path(directory) / f"box{n}_{radius}.vnnlib"
    lines = [f"(declare-const X_{i} Real)" for i in range(n)]
    for i in range(n):
        lines.append(f"(assert (>= X_{i} -{radius}))")
        lines.append(f"(assert (<= X_{i} {radius}))")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_no_spec_runs_unbounded_box(tiny_model):
    r = run_cli("--input", str(tiny_model), "--json")
    assert r.returncode == 0, r.stderr
    doc = json.loads(r.stdout)
    # the relaxed lower line has no box to concretize against, so both
    # sides of the row are unbounded and nothing can be verified
    assert doc["rows"][0] == ["-inf", "inf"]
    assert doc["verdict"] == "unknown"


def test_infinities_serialize_as_quoted_strings(tiny_model):
    r = run_cli("--input", str(tiny_model), "--json")
    assert '"inf"' in r.stdout
    json.loads(r.stdout)   # stays valid JSON


def test_multi_branch_text_headers(tiny_model, tmp_path):
    spec = tmp_path / "or.vnnlib"
    spec.write_text(TINY_SPEC + "(assert (or (<= Y_0 -10.0) (>= Y_0 10.0)))\n")
    r = run_cli("--input", str(tiny_model), "--vnnlib", str(spec))
    assert r.returncode == 0
    assert "branch 0:" in r.stdout and "branch 1:" in r.stdout
    # neither disjunct is certified on [-2,3]; the method is incomplete,
    # so failure to verify reports as unknown rather than a refutation
    assert "verdict: unknown" in r.stdout


def test_alpha_crown_tightens_reported_rows(random_model):
    path, _ = random_model
    spec = _box_spec(path.parent, 3, radius=0.9)
    plain = json.loads(run_cli("--input", str(path), "--method", "crown",
                               "--json", "--vnnlib", spec).stdout)
    tuned = json.loads(run_cli("--input", str(path), "--method", "alpha-crown",
                               "--json", "--vnnlib", spec).stdout)
    for (plo, phi), (tlo, thi) in zip(plain["rows"], tuned["rows"]):
        assert tlo >= plo - 1e-9
        assert thi <= phi + 1e-9


def test_crown_ibp_variant_flag(random_model):
    path, _ = random_model
    spec = _box_spec(path.parent, 3, radius=0.9)
    std = json.loads(run_cli("--input", str(path), "--standard-crown",
                             "--json", "--vnnlib", spec).stdout)
    via = json.loads(run_cli("--input", str(path), "--crown-ibp",
                             "--json", "--vnnlib", spec).stdout)
    assert std["rows"] != via["rows"]   # three layers: lazy passes matter


def test_reruns_byte_identical_modulo_time(tiny_model, tiny_spec):
    def scrub(out):
        return re.sub(r'"time_seconds": [0-9.]+', '"time_seconds": T',
                      out)

    a = run_cli("--input", str(tiny_model), "--vnnlib", str(tiny_spec), "--json")
    b = run_cli("--input", str(tiny_model), "--vnnlib", str(tiny_spec), "--json")
    assert scrub(a.stdout) == scrub(b.stdout)
    assert a.returncode == b.returncode == 0


# ---------------------------------------------------------------------------
# flags and diagnostics
# ---------------------------------------------------------------------------

def test_cuda_flag_warns_and_falls_back(tiny_model, tiny_spec):
    r = run_cli("--input", str(tiny_model), "--vnnlib", str(tiny_spec), "--cuda")
    assert r.returncode == 0
    assert "CUDA support is not built in" in r.stderr
    assert "verdict:" in r.stdout


def test_quiet_suppresses_warnings_not_report(tiny_model, tiny_spec):
    loud = run_cli("--input", str(tiny_model), "--vnnlib", str(tiny_spec),
                   "--cuda")
    hushed = run_cli("--input", str(tiny_model), "--vnnlib", str(tiny_spec),
                     "--cuda", "--quiet")
    assert hushed.returncode == 0
    assert "CUDA support is not built in" in loud.stderr
    assert hushed.stderr == ""
    # the report itself is the program's output, not a diagnostic
    assert "row 0" in hushed.stdout
    assert "verdict: verified" in hushed.stdout


def test_verbose_adds_analysis_detail(tiny_model, tiny_spec):
    r = run_cli("--input", str(tiny_model), "--vnnlib", str(tiny_spec), "--verbose")
    assert r.returncode == 0
    assert "backward passes" in r.stderr   # diagnostics go to stderr
    assert "loaded network" in r.stderr
    plain = run_cli("--input", str(tiny_model), "--vnnlib", str(tiny_spec))
    assert "backward passes" not in plain.stderr


def test_optimizer_flags_accepted(tiny_model, tiny_spec):
    r = run_cli("--input", str(tiny_model), "--vnnlib", str(tiny_spec),
                "--method", "alpha-crown", "--iterations", "5", "--lr", "0.25",
                "--lr-decay", "0.9", "--patience", "2", "--no-best-restore",
                "--no-optimize-upper", "--seed", "3")
    assert r.returncode == 0, r.stderr


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------

def test_usage_error_exits_1(tiny_model):
    r = run_cli("--input", str(tiny_model), "--verbose", "--quiet")
    assert r.returncode == 1
    assert r.stdout.startswith("error:") or r.stderr.startswith("error:")

    r = run_cli()   # missing --input
    assert r.returncode == 1

    r = run_cli("--input", str(tiny_model), "--method", "ibp", "--crown-ibp")
    assert r.returncode == 1   # variant flags only apply to crown

    r = run_cli("--input", str(tiny_model), "--iterations", "0")
    assert r.returncode == 1


def test_missing_and_malformed_files_exit_1(tmp_path, tiny_model):
    r = run_cli("--input", str(tmp_path / "ghost.onnx"))
    assert r.returncode == 1

    garbage = tmp_path / "bad.onnx"
    garbage.write_bytes(b"\x00\x01not a model")
    r = run_cli("--input", str(garbage))
    assert r.returncode == 1

    bad_spec = tmp_path / "bad.vnnlib"
    bad_spec.write_text("(assert (<= X_0")
    r = run_cli("--input", str(tiny_model), "--vnnlib", str(bad_spec))
    assert r.returncode == 1


def test_unsupported_operator_exits_3(tmp_path):
    from boundprop.onnx_proto import (PGraph, PModel, PNode, PValueInfo,
                                      encode_model, tensor_from_array)

    w = tensor_from_array("W", np.eye(2, dtype=np.float32))
    g = PGraph(
        name="g",
        nodes=[PNode(op_type="MatMul", inputs=["x", "W"], outputs=["h"]),
               PNode(op_type="Sigmoid", inputs=["h"], outputs=["y"])],
        inputs=[PValueInfo("x", 1, [1, 2])],
        outputs=[PValueInfo("y", 1, [1, 2])],
        initializers=[w],
    )
    path = tmp_path / "sigmoid.onnx"
    path.write_bytes(encode_model(PModel(graph=g)))
    r = run_cli("--input", str(path))
    assert r.returncode == 3
    assert "Sigmoid" in (r.stdout + r.stderr)


def test_timeout_exits_2_with_partial_rows(tmp_path):
    rng = np.random.default_rng(5)
    layers = netgen.random_layers(rng, 4, 3, 4, 24)
    path = tmp_path / "slow.onnx"
    netgen.save_model(netgen.build_model(layers, flavor="gemm"), str(path))
    spec = _box_spec(tmp_path, 4, radius=1.0)
    # huge patience so early stopping cannot finish before the deadline
    r = run_cli("--input", str(path), "--vnnlib", spec,
                "--method", "alpha-crown", "--iterations", "5000",
                "--patience", "5000", "--timeout", "0.05", "--json")
    assert r.returncode == 2, (r.stdout, r.stderr)
    doc = json.loads(r.stdout)
    assert doc["verdict"] == "timeout"


def test_startup_stays_snappy(tiny_model, tiny_spec):
    import time

    t0 = time.monotonic()
    r = run_cli("--input", str(tiny_model), "--vnnlib", str(tiny_spec))
    elapsed = time.monotonic() - t0
    assert r.returncode == 0
    assert elapsed < 5.0   # generous CI bound; the strict one is in acceptance
