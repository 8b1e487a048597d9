"""Parser for the VNN-LIB property subset: box input constraints plus a
disjunction of conjunctions of linear output constraints.

The file format is an s-expression dialect: `declare-const` for the
input (X_i) and output (Y_i) variables, `assert` statements with
comparisons, `and` / `or` combinators, and {+, -, *} arithmetic over
output variables and numeric literals.  Everything is normalized into
rows of the form sum(c_i * Y_i) <= rhs, with `or` structure preserved
as separate branches.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import VnnLibError
from .tensors import BoundedTensor

_WORD_OPERATORS = {"and", "or", "assert", "declare-const"}
_VAR_RE = re.compile(r"^([XY])_(\d+)$")


@dataclass(frozen=True)
class Token:
    kind: str  # lparen | rparen | symbol | number | operator
    text: str


@dataclass(frozen=True)
class LinearTerm:
    """One coefficient on one output variable."""

    index: int
    coefficient: float


@dataclass
class ConstraintRow:
    """sum(term.coefficient * Y[term.index]) <= rhs."""

    terms: list[LinearTerm]
    rhs: float

    def evaluate(self, y) -> float:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        return float(sum(t.coefficient * y[t.index] for t in self.terms))

    def satisfied_by(self, y, tol: float = 0.0) -> bool:
        return self.evaluate(y) <= self.rhs + tol


@dataclass
class OutputConstraintSet:
    """Disjunction of conjunctions: the property holds if every row of
    at least one branch holds."""

    branches: list[list[ConstraintRow]] = field(default_factory=list)

    def __post_init__(self):
        if not self.branches or any(not b for b in self.branches):
            raise VnnLibError("output constraints need at least one non-empty branch")


# ---------------------------------------------------------------------------
# lexing
# ---------------------------------------------------------------------------

def tokenize(text: str) -> list[Token]:
    """Split into tokens, dropping ';' comments."""
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c.isspace():
            i += 1
        elif c == "(":
            tokens.append(Token("lparen", "("))
            i += 1
        elif c == ")":
            tokens.append(Token("rparen", ")"))
            i += 1
        elif c in "<>":
            if i + 1 < n and text[i + 1] == "=":
                tokens.append(Token("operator", c + "="))
                i += 2
            else:
                raise VnnLibError(f"illegal character '{c}' (only <= and >= supported)")
        elif c in "+*":
            tokens.append(Token("operator", c))
            i += 1
        elif c == "-" and not (i + 1 < n and (text[i + 1].isdigit() or text[i + 1] == ".")):
            tokens.append(Token("operator", "-"))
            i += 1
        elif c.isdigit() or c == "." or c == "-":
            tok, i = _lex_number(text, i)
            tokens.append(tok)
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] in "_-"):
                j += 1
            word = text[i:j]
            kind = "operator" if word in _WORD_OPERATORS else "symbol"
            tokens.append(Token(kind, word))
            i = j
        else:
            raise VnnLibError(f"illegal character '{c}'")
    return tokens


def _lex_number(text: str, i: int) -> tuple[Token, int]:
    j = i
    n = len(text)
    if text[j] in "+-":
        j += 1
    while j < n and (text[j].isdigit() or text[j] == "."):
        j += 1
    if j < n and text[j] in "eE":
        j += 1
        if j < n and text[j] in "+-":
            j += 1
        while j < n and text[j].isdigit():
            j += 1
    lexeme = text[i:j]
    bad_tail = j < n and (text[j].isalnum() or text[j] in "._")
    try:
        value = float(lexeme)
    except ValueError:
        value = math.nan
    if bad_tail or not math.isfinite(value):
        raise VnnLibError(f"malformed numeric literal '{text[i:j + 1].strip()}'")
    return Token("number", lexeme), j


# ---------------------------------------------------------------------------
# s-expression reading
# ---------------------------------------------------------------------------

def _read_forms(tokens: list[Token]):
    pos = 0

    def read_one():
        nonlocal pos
        t = tokens[pos]
        if t.kind == "lparen":
            pos += 1
            items = []
            while True:
                if pos >= len(tokens):
                    raise VnnLibError("unbalanced parentheses")
                if tokens[pos].kind == "rparen":
                    pos += 1
                    return items
                items.append(read_one())
        if t.kind == "rparen":
            raise VnnLibError("unexpected ')'")
        pos += 1
        return t

    forms = []
    while pos < len(tokens):
        forms.append(read_one())
    return forms


def _head(form) -> str | None:
    if isinstance(form, list) and form and isinstance(form[0], Token):
        return form[0].text
    return None


def _variable(tok) -> tuple[str, int] | None:
    if isinstance(tok, Token) and tok.kind == "symbol":
        m = _VAR_RE.match(tok.text)
        if m:
            return m.group(1), int(m.group(2))
    return None


def _scan_variables(expr, found: set[str]) -> None:
    if isinstance(expr, Token):
        v = _variable(expr)
        if v:
            found.add(v[0])
    elif isinstance(expr, list):
        for item in expr:
            _scan_variables(item, found)


# ---------------------------------------------------------------------------
# linear expressions over the output variables
# ---------------------------------------------------------------------------

def _linear(expr) -> tuple[dict[int, float], float]:
    """Recursive evaluation into ({output index: coefficient}, constant)."""
    if isinstance(expr, Token):
        if expr.kind == "number":
            return {}, float(expr.text)
        v = _variable(expr)
        if v and v[0] == "Y":
            return {v[1]: 1.0}, 0.0
        if v:
            raise VnnLibError(
                f"input variable {expr.text} not allowed in a linear output expression")
        raise VnnLibError(f"unknown symbol '{expr.text}' in linear expression")
    if not isinstance(expr, list) or not expr:
        raise VnnLibError("malformed expression")
    op = _head(expr)
    args = expr[1:]
    if op == "+" and args:
        terms, const = _linear(args[0])
        for a in args[1:]:
            t2, c2 = _linear(a)
            terms = _merge(terms, t2, 1.0)
            const += c2
        return terms, const
    if op == "-" and args:
        terms, const = _linear(args[0])
        if len(args) == 1:
            return {i: -c for i, c in terms.items()}, -const
        for a in args[1:]:
            t2, c2 = _linear(a)
            terms = _merge(terms, t2, -1.0)
            const -= c2
        return terms, const
    if op == "*" and args:
        terms, const = _linear(args[0])
        for a in args[1:]:
            t2, c2 = _linear(a)
            if terms and t2:
                raise VnnLibError("product of two variables is not linear")
            if t2:  # accumulated value is the pure scalar `const`
                terms, const = {i: c * const for i, c in t2.items()}, const * c2
            else:
                terms = {i: c * c2 for i, c in terms.items()}
                const *= c2
        return terms, const
    raise VnnLibError(f"unsupported expression head '{op}'")


def _merge(a: dict[int, float], b: dict[int, float], sign: float) -> dict[int, float]:
    out = dict(a)
    for i, c in b.items():
        out[i] = out.get(i, 0.0) + sign * c
    return out


def parse_linear_expression(tokens: list[Token]) -> tuple[list[LinearTerm], float]:
    """Parse one expression form into sorted sparse terms plus a constant."""
    forms = _read_forms(tokens)
    if len(forms) != 1:
        raise VnnLibError("expected exactly one expression")
    terms, const = _linear(forms[0])
    out = [LinearTerm(i, c) for i, c in sorted(terms.items()) if c != 0.0]
    return out, const


# ---------------------------------------------------------------------------
# condition normalization (assert bodies -> branches of atoms)
# ---------------------------------------------------------------------------

# an atom is ("x", index, op, const) or ("row", ConstraintRow)

def _comparison_atom(form) -> tuple:
    op = _head(form)
    if len(form) != 3:
        raise VnnLibError(f"comparison '{op}' expects two operands")
    lhs, rhs = form[1], form[2]
    used: set[str] = set()
    _scan_variables(lhs, used)
    _scan_variables(rhs, used)
    if used == {"X", "Y"} or used == {"Y", "X"}:
        raise VnnLibError("comparison mixes input and output variables")
    if used == {"X"}:
        v = _variable(lhs) if isinstance(lhs, Token) else None
        is_const = isinstance(rhs, Token) and rhs.kind == "number"
        if not v or not is_const:
            raise VnnLibError(
                "input bounds must have the form (<= X_i c) or (>= X_i c)")
        return ("x", v[1], op, float(rhs.text))
    if used == {"Y"}:
        lt, lc = _linear(lhs)
        rt, rc = _linear(rhs)
        if op == "<=":
            diff = _merge(lt, rt, -1.0)
            bound = rc - lc
        else:  # >= rewritten by swapping sides
            diff = _merge(rt, lt, -1.0)
            bound = lc - rc
        terms = [LinearTerm(i, c) for i, c in sorted(diff.items()) if c != 0.0]
        return ("row", ConstraintRow(terms, bound))
    raise VnnLibError("comparison contains no network variables")


def _branches_of(expr) -> list[list[tuple]]:
    op = _head(expr)
    if op in ("<=", ">="):
        return [[_comparison_atom(expr)]]
    if op == "and":
        if len(expr) < 2:
            raise VnnLibError("'and' needs at least one argument")
        combos = [[]]
        for child in expr[1:]:
            child_branches = _branches_of(child)
            combos = [a + b for a in combos for b in child_branches]
        return combos
    if op == "or":
        if len(expr) < 2:
            raise VnnLibError("'or' needs at least one argument")
        out = []
        for child in expr[1:]:
            out.extend(_branches_of(child))
        return out
    raise VnnLibError(f"unsupported expression head '{op}'")


# ---------------------------------------------------------------------------
# whole-file analysis
# ---------------------------------------------------------------------------

def _analyze(tokens: list[Token], input_size: int | None, output_size: int | None):
    forms = _read_forms(tokens)
    lo = np.full(input_size or 0, -np.inf)
    hi = np.full(input_size or 0, np.inf)

    def check_index(kind: str, idx: int) -> None:
        limit = input_size if kind == "X" else output_size
        if limit is not None and idx >= limit:
            word = "input" if kind == "X" else "output"
            raise VnnLibError(f"{kind}_{idx} exceeds the {word} size {limit}")

    def apply_x(idx: int, op: str, c: float) -> None:
        check_index("X", idx)
        if input_size is None:
            return
        if op == ">=":
            lo[idx] = max(lo[idx], c)
        else:
            hi[idx] = min(hi[idx], c)

    assert_sets: list[list[list[ConstraintRow]]] = []
    for form in forms:
        op = _head(form)
        if op == "declare-const":
            if len(form) != 3 or not isinstance(form[1], Token):
                raise VnnLibError("malformed declare-const")
            v = _variable(form[1])
            if not v:
                raise VnnLibError(f"cannot declare '{form[1].text}': only X_i / Y_i supported")
            check_index(*v)
            sort = form[2]
            if not (isinstance(sort, Token) and sort.text == "Real"):
                raise VnnLibError(f"variable {form[1].text} must have sort Real")
        elif op == "assert":
            if len(form) != 2:
                raise VnnLibError("assert expects exactly one condition")
            branches = _branches_of(form[1])
            if len(branches) > 1 and any(a[0] == "x" for b in branches for a in b):
                raise VnnLibError("disjunctions over input variables are unsupported")
            rows_per_branch: list[list[ConstraintRow]] = []
            for branch in branches:
                rows = []
                for atom in branch:
                    if atom[0] == "x":
                        apply_x(atom[1], atom[2], atom[3])
                    else:
                        row = atom[1]
                        for t in row.terms:
                            check_index("Y", t.index)
                        rows.append(row)
                rows_per_branch.append(rows)
            # a pure-X assert leaves one empty row list behind; under `or`
            # every branch is guaranteed non-empty (X atoms were rejected)
            rows_per_branch = [rows for rows in rows_per_branch if rows]
            if rows_per_branch:
                assert_sets.append(rows_per_branch)
        elif op is None:
            raise VnnLibError("top-level content must be (declare-const ...) or (assert ...)")
        else:
            raise VnnLibError(f"unsupported top-level form '{op}'")

    box = None
    if input_size is not None:
        bad = lo > hi
        if np.any(bad):
            i = int(np.argmax(bad))
            raise VnnLibError(
                f"contradictory bounds for X_{i}: [{lo[i]:g}, {hi[i]:g}]")
        box = BoundedTensor(lo, hi)

    constraints = None
    if assert_sets:
        branches = [[]]
        for rows_per_branch in assert_sets:
            branches = [a + b for a in branches for b in rows_per_branch]
        constraints = OutputConstraintSet(branches)
    return box, constraints


def parse_input_bounds(tokens: list[Token], expected_input_size: int) -> BoundedTensor:
    """The input box asserted over X variables; unasserted entries stay
    unbounded."""
    box, _ = _analyze(tokens, expected_input_size, None)
    return box


def parse_output_constraints(tokens: list[Token],
                             expected_output_size: int) -> OutputConstraintSet | None:
    box_free, constraints = _analyze(tokens, None, expected_output_size)
    return constraints


def parse_specification(text: str, input_size: int,
                        output_size: int) -> tuple[BoundedTensor, OutputConstraintSet | None]:
    """One pass over the whole property file: input box + output branches."""
    return _analyze(tokenize(text), input_size, output_size)


def load_specification(path: str, input_size: int, output_size: int):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise VnnLibError(f"cannot read specification file: {e}") from None
    return parse_specification(text, input_size, output_size)


# ---------------------------------------------------------------------------
# canonical re-serialization
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _expr_text(row: ConstraintRow) -> str:
    if not row.terms:
        return "(* 0 Y_0)"
    parts = [f"(* {_fmt(t.coefficient)} Y_{t.index})" for t in row.terms]
    return parts[0] if len(parts) == 1 else "(+ " + " ".join(parts) + ")"


def serialize_specification(box: BoundedTensor,
                            constraints: OutputConstraintSet | None,
                            output_size: int | None = None) -> str:
    """Canonical text form; parsing it back reproduces the structure."""
    lines = []
    lo = box.lower.reshape(-1)
    hi = box.upper.reshape(-1)
    if output_size is None:
        output_size = 0
        if constraints:
            indices = [t.index for b in constraints.branches for r in b for t in r.terms]
            output_size = max(indices, default=-1) + 1
    for i in range(lo.size):
        lines.append(f"(declare-const X_{i} Real)")
    for j in range(output_size):
        lines.append(f"(declare-const Y_{j} Real)")
    for i in range(lo.size):
        if np.isfinite(lo[i]):
            lines.append(f"(assert (>= X_{i} {_fmt(lo[i])}))")
        if np.isfinite(hi[i]):
            lines.append(f"(assert (<= X_{i} {_fmt(hi[i])}))")
    if constraints is not None:
        if len(constraints.branches) == 1:
            for row in constraints.branches[0]:
                lines.append(f"(assert (<= {_expr_text(row)} {_fmt(row.rhs)}))")
        else:
            parts = []
            for branch in constraints.branches:
                rows = " ".join(f"(<= {_expr_text(r)} {_fmt(r.rhs)})" for r in branch)
                parts.append(f"(and {rows})")
            lines.append("(assert (or " + " ".join(parts) + "))")
    return "\n".join(lines) + "\n"
