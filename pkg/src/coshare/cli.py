"""Command-line front end.

Problem files are JSON documents with an explicit schema_version; extended
reals are encoded as the strings "inf"/"-inf" and rationals are accepted as
"p/q" strings and parsed exactly.  Reports emit numbers with 12 significant
digits and stable key order, so identical inputs produce byte-identical
output.  Exit codes: 0 ok, 1 error, 2 infeasible, 3 reproduction mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from fractions import Fraction

import numpy as np

from .allocation import Allocation, comonotonic_improvement, is_comonotonic
from .constraints import (
    AggregateEnvelope,
    Constraint,
    ExpectationConstraint,
    IdiosyncraticRetention,
    OrliczBound,
    PathwiseBounds,
    RiskCeiling,
    RiskFloor,
    Solidity,
    classify_solidity,
    falsify_solidity,
)
from .errors import CoshareError, InfeasibleError, SchemaError
from .mvsolver import (
    MVProblem,
    mv_objective,
    saturation_curve,
    solve_capped_mv,
    var_scenario,
)
from .oracle import GridSpec, ScalarFamily, comonotone_minimize, grid_minimize
from .probspace import FiniteSpace, RandomVariable
from .riskmeasures import RiskMeasureSpec, evaluate

SCHEMA_VERSION = 1
_TASK_KINDS = ("solve-mv", "improve", "oracle", "check-solidity", "reproduce")
_REPRODUCE_CASES = ("ex-3.1", "ex-4.2", "ex-4.3", "fig-6.3", "sec-6.4")


class ReproduceMismatch(CoshareError):
    """Computed values drifted from the published ones."""

    def __init__(self, diffs):
        self.diffs = tuple(diffs)
        super().__init__("reproduction mismatch:\n" + "\n".join(self.diffs))


def _apply_thread_cap():
    cap = os.environ.get("COSHARE_THREADS")
    if not cap:
        return
    # best effort: BLAS backends read these at thread-pool creation
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = cap


# ---------------------------------------------------------------------------
# number and schema parsing

def _parse_number(value, path, failures, allow_inf=False):
    if isinstance(value, bool):
        failures.append(f"{path}: expected a number, got a boolean")
        return 0.0
    if isinstance(value, (int, float)):
        out = float(value)
        if math.isnan(out):
            failures.append(f"{path}: NaN is not a valid number")
        if math.isinf(out) and not allow_inf:
            failures.append(f"{path}: infinity not allowed here")
        return out
    if isinstance(value, str):
        text = value.strip()
        if text in ("inf", "+inf"):
            if not allow_inf:
                failures.append(f"{path}: infinity not allowed here")
            return math.inf
        if text == "-inf":
            if not allow_inf:
                failures.append(f"{path}: infinity not allowed here")
            return -math.inf
        try:
            return float(Fraction(text))
        except (ValueError, ZeroDivisionError):
            failures.append(f"{path}: cannot parse number {value!r}")
            return 0.0
    failures.append(f"{path}: expected a number, got {type(value).__name__}")
    return 0.0


def _parse_number_list(value, path, failures, allow_inf=False):
    if not isinstance(value, list) or not value:
        failures.append(f"{path}: expected a nonempty list of numbers")
        return []
    return [_parse_number(v, f"{path}[{k}]", failures, allow_inf)
            for k, v in enumerate(value)]


def _parse_measure(obj, path, failures):
    if not isinstance(obj, dict) or "kind" not in obj:
        failures.append(f"{path}: measure needs a 'kind'")
        return None
    kind = obj["kind"]
    try:
        if kind in ("var", "es"):
            level = _parse_number(obj.get("level"), f"{path}.level", failures)
            return RiskMeasureSpec(kind, level=level)
        if kind == "mean_variance":
            delta = _parse_number(obj.get("delta"), f"{path}.delta", failures)
            return RiskMeasureSpec(kind, delta=delta)
        if kind == "expected_convex_loss":
            ladder = _parse_number_list(obj.get("ladder"), f"{path}.ladder", failures)
            if len(ladder) != 4:
                failures.append(f"{path}.ladder: need [alpha, beta, R, B]")
                return None
            return RiskMeasureSpec(kind, ladder=tuple(ladder))
    except CoshareError as exc:
        failures.append(f"{path}: {exc}")
        return None
    failures.append(f"{path}.kind: unknown measure kind {kind!r}")
    return None


def _parse_constraint(obj, path, failures, space):
    if not isinstance(obj, dict) or "kind" not in obj:
        failures.append(f"{path}: constraint needs a 'kind'")
        return None
    kind = obj["kind"]
    scope = obj.get("scope")
    if scope is not None and (not isinstance(scope, int) or scope < 0):
        failures.append(f"{path}.scope: must be null or a nonnegative agent index")
        scope = None
    try:
        if kind == "pathwise_bounds":
            body = PathwiseBounds(
                _parse_number(obj.get("lower", "-inf"), f"{path}.lower", failures, True),
                _parse_number(obj.get("upper", "inf"), f"{path}.upper", failures, True))
        elif kind == "expectation":
            body = ExpectationConstraint(
                obj.get("relation", "<="),
                _parse_number(obj.get("bound"), f"{path}.bound", failures))
        elif kind == "orlicz":
            ladder = _parse_number_list(obj.get("ladder"), f"{path}.ladder", failures)
            if len(ladder) != 4:
                failures.append(f"{path}.ladder: need [alpha, beta, R, B]")
                return None
            body = OrliczBound(tuple(ladder),
                               _parse_number(obj.get("bound"), f"{path}.bound", failures))
        elif kind in ("risk_ceiling", "risk_floor"):
            measure = _parse_measure(obj.get("measure"), f"{path}.measure", failures)
            if measure is None:
                return None
            bound = _parse_number(obj.get("bound"), f"{path}.bound", failures)
            body = (RiskCeiling if kind == "risk_ceiling" else RiskFloor)(measure, bound)
        elif kind == "retention":
            if space is None:
                failures.append(f"{path}: retention needs a finite space")
                return None
            values = _parse_number_list(obj.get("endowment"), f"{path}.endowment", failures)
            if len(values) != space.size:
                failures.append(f"{path}.endowment: need one value per atom")
                return None
            body = IdiosyncraticRetention(
                RandomVariable(space, values),
                _parse_number(obj.get("deductible"), f"{path}.deductible", failures))
        elif kind == "envelope":
            def points(key):
                raw = obj.get(key)
                if not isinstance(raw, list) or not raw:
                    failures.append(f"{path}.{key}: need [s, value] breakpoint pairs")
                    return ((0.0, 0.0),)
                out = []
                for k, pair in enumerate(raw):
                    if not isinstance(pair, list) or len(pair) != 2:
                        failures.append(f"{path}.{key}[{k}]: need an [s, value] pair")
                        continue
                    out.append((
                        _parse_number(pair[0], f"{path}.{key}[{k}][0]", failures),
                        _parse_number(pair[1], f"{path}.{key}[{k}][1]", failures)))
                return tuple(out) or ((0.0, 0.0),)
            body = AggregateEnvelope(points("lower"), points("upper"))
        else:
            failures.append(f"{path}.kind: unknown constraint kind {kind!r}")
            return None
        return Constraint(body, scope)
    except CoshareError as exc:
        failures.append(f"{path}: {exc}")
        return None


def load_problem(path):
    """Parse and validate a problem file; raises SchemaError listing every
    failure at once."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise SchemaError([f"cannot read {path}: {exc}"])
    except json.JSONDecodeError as exc:
        raise SchemaError([f"{path}: invalid JSON: {exc}"])

    failures = []
    if not isinstance(raw, dict):
        raise SchemaError([f"{path}: top level must be an object"])
    if raw.get("schema_version") != SCHEMA_VERSION:
        failures.append(f"schema_version: expected {SCHEMA_VERSION}")

    task = raw.get("task")
    if not isinstance(task, dict) or task.get("kind") not in _TASK_KINDS:
        failures.append(f"task.kind: expected one of {_TASK_KINDS}")
        task = {"kind": None}

    space = None
    gamma = False
    spc = raw.get("space")
    if isinstance(spc, dict) and "atoms" in spc:
        atoms = spc["atoms"]
        if not isinstance(atoms, list) or not atoms:
            failures.append("space.atoms: need a nonempty list")
        else:
            labels, probs = [], []
            for k, atom in enumerate(atoms):
                if not isinstance(atom, dict):
                    failures.append(f"space.atoms[{k}]: expected an object")
                    continue
                labels.append(str(atom.get("label", f"w{k}")))
                probs.append(_parse_number(atom.get("prob"), f"space.atoms[{k}].prob",
                                           failures))
            if not failures:
                try:
                    space = FiniteSpace(zip(labels, probs))
                except CoshareError as exc:
                    failures.append(f"space: {exc}")
    elif isinstance(spc, dict) and "gamma" in spc:
        gamma = True
    else:
        failures.append("space: need either 'atoms' or a 'gamma' tag")

    aggregate = None
    endowments = None
    if "aggregate" in raw and "endowments" in raw:
        failures.append("give either 'aggregate' or 'endowments', not both")
    if "aggregate" in raw:
        aggregate = _parse_number_list(raw["aggregate"], "aggregate", failures)
    elif "endowments" in raw:
        if not isinstance(raw["endowments"], list) or not raw["endowments"]:
            failures.append("endowments: need one list per agent")
        else:
            endowments = [
                _parse_number_list(row, f"endowments[{k}]", failures)
                for k, row in enumerate(raw["endowments"])]
    elif not gamma:
        failures.append("need 'aggregate' values or 'endowments' for a finite space")

    agents = raw.get("agents", [])
    measures, deltas = [], []
    if not isinstance(agents, list):
        failures.append("agents: expected a list")
        agents = []
    for k, agent in enumerate(agents):
        if not isinstance(agent, dict):
            failures.append(f"agents[{k}]: expected an object")
            continue
        if "measure" in agent:
            measures.append(_parse_measure(agent["measure"], f"agents[{k}].measure",
                                           failures))
        else:
            measures.append(None)
        if "delta" in agent:
            deltas.append(_parse_number(agent["delta"], f"agents[{k}].delta", failures))
        else:
            deltas.append(None)

    constraints = []
    for k, obj in enumerate(raw.get("constraints", [])):
        parsed = _parse_constraint(obj, f"constraints[{k}]", failures, space)
        if parsed is not None:
            constraints.append(parsed)

    S = None
    if space is not None:
        n_atoms = space.size
        if aggregate is not None:
            if len(aggregate) != n_atoms:
                failures.append("aggregate: need one value per atom")
            elif not failures:
                # only built from clean parses; flagged values (NaN, stray
                # inf) must reach the SchemaError below, not a constructor
                S = RandomVariable(space, aggregate)
        elif endowments is not None:
            if any(len(e) != n_atoms for e in endowments):
                failures.append("endowments: need one value per atom for every agent")
            elif not failures:
                total = np.sum([np.array(e) for e in endowments], axis=0)
                S = RandomVariable(space, total)

    if failures:
        raise SchemaError(failures)
    return {
        "space": space, "gamma": gamma, "S": S,
        "endowments": endowments, "measures": measures, "deltas": deltas,
        "constraints": constraints, "task": _canonical_value(task), "raw": raw,
    }


def _canonical_value(v):
    """Numbers (including "p/q" and "inf" strings) to floats; structure kept."""
    if isinstance(v, bool) or v is None:
        return v
    if isinstance(v, int):
        return v
    if isinstance(v, float):
        return v
    if isinstance(v, str):
        text = v.strip()
        if text in ("inf", "+inf"):
            return math.inf
        if text == "-inf":
            return -math.inf
        try:
            return float(Fraction(text))
        except (ValueError, ZeroDivisionError):
            return v
    if isinstance(v, dict):
        return {k: _canonical_value(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_canonical_value(x) for x in v]
    return v


def _measure_doc(spec):
    doc = {"kind": spec.kind}
    if spec.level is not None:
        doc["level"] = float(spec.level)
    if spec.delta is not None:
        doc["delta"] = float(spec.delta)
    if spec.ladder is not None:
        doc["ladder"] = [float(x) for x in spec.ladder]
    return doc


def _constraint_doc(constraint):
    kind = constraint.kind
    if isinstance(kind, PathwiseBounds):
        doc = {"kind": "pathwise_bounds", "lower": kind.lower, "upper": kind.upper}
    elif isinstance(kind, ExpectationConstraint):
        doc = {"kind": "expectation", "relation": kind.relation, "bound": kind.bound}
    elif isinstance(kind, OrliczBound):
        doc = {"kind": "orlicz", "ladder": [float(x) for x in kind.ladder],
               "bound": kind.bound}
    elif isinstance(kind, RiskCeiling):
        doc = {"kind": "risk_ceiling", "measure": _measure_doc(kind.measure),
               "bound": kind.bound}
    elif isinstance(kind, RiskFloor):
        doc = {"kind": "risk_floor", "measure": _measure_doc(kind.measure),
               "bound": kind.bound}
    elif isinstance(kind, IdiosyncraticRetention):
        doc = {"kind": "retention",
               "endowment": [float(v) for v in kind.endowment.values],
               "deductible": kind.deductible}
    else:
        doc = {"kind": "envelope",
               "lower": [[float(s), float(v)] for s, v in kind.lower],
               "upper": [[float(s), float(v)] for s, v in kind.upper]}
    if constraint.scope is not None:
        doc["scope"] = constraint.scope
    return doc


def canonical_problem(problem):
    """Rebuild the canonical document for a parsed problem: every number a
    plain float, structure and key order fixed."""
    doc = {"schema_version": SCHEMA_VERSION}
    if problem["gamma"]:
        doc["space"] = {"gamma": {}}
    else:
        space = problem["space"]
        doc["space"] = {"atoms": [
            {"label": label, "prob": float(p)}
            for label, p in zip(space.labels, space.probs)]}
    if problem["endowments"] is not None:
        doc["endowments"] = [[float(v) for v in row]
                             for row in problem["endowments"]]
    elif problem["S"] is not None:
        doc["aggregate"] = [float(v) for v in problem["S"].values]
    agents = []
    for measure, delta in zip(problem["measures"], problem["deltas"]):
        entry = {}
        if measure is not None:
            entry["measure"] = _measure_doc(measure)
        if delta is not None:
            entry["delta"] = float(delta)
        agents.append(entry)
    if agents:
        doc["agents"] = agents
    if problem["constraints"]:
        doc["constraints"] = [_constraint_doc(c) for c in problem["constraints"]]
    doc["task"] = problem["task"]
    return doc


def emit_problem(problem, path=None):
    """Serialize a parsed problem back to schema-valid JSON (round-trips:
    reparsing yields the same canonical document)."""
    def encode(v):
        if isinstance(v, float) and math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if isinstance(v, dict):
            return {k: encode(x) for k, x in v.items()}
        if isinstance(v, list):
            return [encode(x) for x in v]
        return v

    text = json.dumps(encode(canonical_problem(problem)), indent=2) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# deterministic emission

def _scalar_token(v):
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, Fraction):
        return json.dumps(_frac_text(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isinf(f):
            return json.dumps("inf" if f > 0 else "-inf")
        if math.isnan(f):
            return json.dumps("nan")
        return format(f, ".12g")
    return json.dumps(str(v))


def _frac_text(v):
    if v.denominator == 1:
        return str(v.numerator)
    return f"{v.numerator}/{v.denominator}"


def _emit_json(obj, indent=0):
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        parts = [f"{inner}{json.dumps(str(k))}: {_emit_json(v, indent + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(parts) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_scalar_token(v) for v in obj) + "]"
        parts = [f"{inner}{_emit_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(parts) + f"\n{pad}]"
    return _scalar_token(obj)


def _csv_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return format(f, ".12g")
    if isinstance(v, Fraction):
        return _frac_text(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _table_csv(table):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table["header"])
    for row in table["rows"]:
        writer.writerow([_csv_cell(v) for v in row])
    return buf.getvalue()


def _emit_text(report):
    lines = []

    def walk(obj, prefix):
        if isinstance(obj, dict):
            for k, v in obj.items():
                if k == "tables":
                    continue
                walk(v, f"{prefix}{k}." if prefix else f"{k}.")
        elif isinstance(obj, (list, tuple)) and any(isinstance(x, dict) for x in obj):
            for k, v in enumerate(obj):
                walk(v, f"{prefix[:-1]}[{k}].")
        elif isinstance(obj, (list, tuple)):
            lines.append(f"{prefix[:-1]}: "
                         + "[" + ", ".join(_csv_cell(x) if not isinstance(x, (list, tuple))
                                           else "(" + ", ".join(map(_csv_cell, x)) + ")"
                                           for x in obj) + "]")
        else:
            lines.append(f"{prefix[:-1]}: {_csv_cell(obj)}")

    walk(report, "")
    for name, table in report.get("tables", {}).items():
        lines.append("")
        lines.append(f"[{name}]")
        widths = [len(h) for h in table["header"]]
        str_rows = [[_csv_cell(v) for v in row] for row in table["rows"]]
        for row in str_rows:
            widths = [max(w, len(c)) for w, c in zip(widths, row)]
        lines.append("  ".join(h.ljust(w) for h, w in zip(table["header"], widths)))
        for row in str_rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def emit_report(report, fmt="json", stream=None):
    """Render a report deterministically: fixed key order, 12 significant
    digits, byte-stable for identical inputs."""
    if fmt == "json":
        text = _emit_json(report) + "\n"
    elif fmt == "csv":
        chunks = []
        for name, table in report.get("tables", {}).items():
            chunks.append(f"# table: {name}\n" + _table_csv(table))
        text = "\n".join(chunks) if chunks else ""
    elif fmt == "text":
        text = _emit_text(report)
    else:
        raise SchemaError([f"unknown format {fmt!r}"])
    if stream is None:
        stream = sys.stdout
    stream.write(text)
    return text


def _allocation_table(A):
    header = ["atom", "prob", "S"] + [f"X_{i+1}" for i in range(A.n_agents)]
    rows = []
    for k in range(A.space.size):
        rows.append([A.space.labels[k], float(A.space.probs[k]),
                     float(A.aggregate.values[k])]
                    + [float(share.values[k]) for share in A.shares])
    return {"header": header, "rows": rows}


# ---------------------------------------------------------------------------
# task dispatch

def _require(cond, message):
    if not cond:
        raise SchemaError([message])


def _task_solve_mv(problem, args):
    task = problem["task"]
    deltas = problem["deltas"]
    _require(problem["space"] is not None and problem["S"] is not None,
             "solve-mv: needs a finite space with an aggregate")
    _require(all(d is not None for d in deltas) and deltas,
             "solve-mv: every agent needs a delta")
    failures = []
    lower = _parse_number_list(task.get("lower", ["-inf"] * len(deltas)),
                               "task.lower", failures, allow_inf=True)
    upper = _parse_number_list(task.get("upper", ["inf"] * len(deltas)),
                               "task.upper", failures, allow_inf=True)
    if failures:
        raise SchemaError(failures)
    mv = MVProblem(tuple(deltas), tuple(lower), tuple(upper),
                   (problem["space"], problem["S"]))
    allocation, report = solve_capped_mv(mv)
    return {
        "schema_version": SCHEMA_VERSION,
        "task": "solve-mv",
        "objective": mv_objective(deltas, allocation),
        "intercepts": list(report.intercepts),
        "residual": report.residual,
        "breakpoints": list(report.breakpoints),
        "active_sets": [list(a) for a in report.active_sets],
        "slopes": [list(s) for s in report.slopes],
        "comonotonic": is_comonotonic(allocation),
        "tables": {"allocation": _allocation_table(allocation)},
    }


def _task_improve(problem, args):
    task = problem["task"]
    space, S = problem["space"], problem["S"]
    _require(space is not None and S is not None,
             "improve: needs a finite space with an aggregate")
    shares = task.get("shares")
    failures = []
    _require(isinstance(shares, list) and shares, "improve: task.shares required")
    values = [_parse_number_list(row, f"task.shares[{k}]", failures)
              for k, row in enumerate(shares)]
    if failures:
        raise SchemaError(failures)
    _require(all(len(v) == space.size for v in values),
             "improve: every share needs one value per atom")
    A = Allocation(space, tuple(RandomVariable(space, v) for v in values), S)
    measures = problem["measures"]
    specs = measures if measures and all(m is not None for m in measures) else None
    if specs is not None and len(specs) != A.n_agents:
        specs = None
    improved, cert = comonotonic_improvement(A, measures=specs)
    report = {
        "schema_version": SCHEMA_VERSION,
        "task": "improve",
        "transfers": cert.transfers,
        "clearing_residual": cert.clearing_residual,
        "comonotonic": cert.comonotonic_ok,
        "convex_order": list(cert.convex_order_ok),
        "all_verified": cert.all_verified,
        "tables": {"allocation": _allocation_table(improved)},
    }
    if cert.objective_deltas is not None:
        report["objective_deltas"] = list(cert.objective_deltas)
    return report


def _parse_grid(task):
    failures = []
    grid = task.get("grid")
    if not isinstance(grid, dict):
        raise SchemaError(["oracle: task.grid required"])
    if "family" in grid:
        fam = grid["family"]
        if not isinstance(fam, dict):
            raise SchemaError(["task.grid.family: expected an object"])
        base = [_parse_number_list(r, f"task.grid.family.base[{k}]", failures)
                for k, r in enumerate(fam.get("base", []))]
        direction = [_parse_number_list(r, f"task.grid.family.direction[{k}]", failures)
                     for k, r in enumerate(fam.get("direction", []))]
        lo = _parse_number(fam.get("lo"), "task.grid.family.lo", failures)
        hi = _parse_number(fam.get("hi"), "task.grid.family.hi", failures)
        step = _parse_number(fam.get("step"), "task.grid.family.step", failures)
        if failures:
            raise SchemaError(failures)
        return GridSpec(family=ScalarFamily(base, direction, lo, hi, step))
    ranges = grid.get("ranges")
    if not isinstance(ranges, list) or not ranges:
        raise SchemaError(["task.grid: need 'ranges' or 'family'"])
    parsed = []
    for i, agent in enumerate(ranges):
        if not isinstance(agent, list):
            failures.append(f"task.grid.ranges[{i}]: expected a list of triples")
            continue
        row = []
        for j, triple in enumerate(agent):
            vals = _parse_number_list(triple, f"task.grid.ranges[{i}][{j}]", failures)
            if len(vals) != 3:
                failures.append(f"task.grid.ranges[{i}][{j}]: need [lo, hi, step]")
            else:
                row.append(tuple(vals))
        parsed.append(tuple(row))
    if failures:
        raise SchemaError(failures)
    return GridSpec(ranges=tuple(parsed))


def _task_oracle(problem, args):
    task = problem["task"]
    space, S = problem["space"], problem["S"]
    _require(space is not None and S is not None,
             "oracle: needs a finite space with an aggregate")
    measures = problem["measures"]
    _require(measures and all(m is not None for m in measures),
             "oracle: every agent needs a measure")
    grid = _parse_grid(task)
    minimize = comonotone_minimize if task.get("comonotone") else grid_minimize
    tol = args.tol if args.tol is not None else 1e-9
    allocation, value = minimize(space, S, tuple(measures),
                                 tuple(problem["constraints"]), grid, tol=tol)
    return {
        "schema_version": SCHEMA_VERSION,
        "task": "oracle",
        "comonotone": bool(task.get("comonotone")),
        "value": value,
        "objective_parts": [evaluate(m, X) for m, X in zip(measures, allocation.shares)],
        "tables": {"allocation": _allocation_table(allocation)},
    }


def _task_check_solidity(problem, args):
    task = problem["task"]
    constraints = tuple(problem["constraints"])
    verdict = classify_solidity(constraints)
    report = {
        "schema_version": SCHEMA_VERSION,
        "task": "check-solidity",
        "status": verdict.status.value,
        "reason": verdict.reason,
        "tables": {},
    }
    space, S = problem["space"], problem["S"]
    if space is not None and S is not None:
        seed = args.seed if args.seed is not None else int(task.get("seed", 0))
        budget = int(task.get("budget", 10 ** 4))
        start = None
        if "start" in task:
            failures = []
            rows = [_parse_number_list(r, f"task.start[{k}]", failures)
                    for k, r in enumerate(task["start"])]
            if failures:
                raise SchemaError(failures)
            start = Allocation(
                space, tuple(RandomVariable(space, r) for r in rows), S)
        witness = falsify_solidity(constraints, space, S, budget=budget,
                                   seed=seed, start=start)
        report["witness_found"] = witness is not None
        if witness is not None:
            report["witness_method"] = witness.method
            report["tables"]["witness_feasible"] = _allocation_table(witness.feasible)
            report["tables"]["witness_reduction"] = _allocation_table(witness.reduction)
    return report


def run_problem(path, args=None):
    """Load a problem file and run its task; returns the report dict."""
    if args is None:
        args = argparse.Namespace(seed=None, tol=None)
    problem = load_problem(path)
    kind = problem["task"]["kind"]
    if kind == "solve-mv":
        return _task_solve_mv(problem, args)
    if kind == "improve":
        return _task_improve(problem, args)
    if kind == "oracle":
        return _task_oracle(problem, args)
    if kind == "check-solidity":
        return _task_check_solidity(problem, args)
    case = problem["task"].get("case")
    report, _ = reproduce(case, out_dir=getattr(args, "out", None) or ".")
    return report


# ---------------------------------------------------------------------------
# reproduction of the worked examples

def _expect(checks, name, expected, computed, tol):
    ok = abs(float(computed) - float(expected)) <= tol if tol is not None \
        else computed == expected
    checks.append({"name": name, "expected": expected, "computed": computed,
                   "tol": tol, "ok": ok})


def _expect_true(checks, name, flag):
    checks.append({"name": name, "expected": True, "computed": bool(flag),
                   "tol": None, "ok": bool(flag)})


def _example_42():
    space = FiniteSpace((f"s{k}", Fraction(1, 3)) for k in (1, 2, 3))
    S = RandomVariable(space, (1.0, 2.0, 3.0))
    measures = (RiskMeasureSpec.es(0.2), RiskMeasureSpec.es(1.0 / 3.0))
    envelope = AggregateEnvelope(
        lower=((1.0, 0.25), (2.0, 0.25), (3.0, 0.25)),
        upper=((1.0, 0.25), (2.0, 0.25), (3.0, 1.75)))
    constraints = (Constraint(envelope, scope=0),
                   Constraint(PathwiseBounds(lower=0.0), scope=None))
    grid = GridSpec.from_family(
        base=((0.25, 0.25, 0.0),), direction=((0.0, 0.0, 1.0),),
        lo=0.25, hi=1.75, step=0.01)
    return space, S, measures, constraints, grid


def _example_43_space():
    space = FiniteSpace(zip(("A0", "A1a", "A1b", "A2"),
                            (0.9925, 0.0025, 0.0025, 0.0025)))
    S = RandomVariable(space, (0.0, 2.0, 2.0, 4.0))
    measures = (RiskMeasureSpec.es(0.99), RiskMeasureSpec.es(0.9925))
    constraints = (
        Constraint(PathwiseBounds(lower=0.0)),
        Constraint(RiskCeiling(RiskMeasureSpec.var(0.995), 1.0)),
    )
    return space, S, measures, constraints


def _reproduce_ex31(out_dir):
    space = FiniteSpace((label, 0.25) for label in
                        ("(0,0)", "(0,1)", "(1,0)", "(1,1)"))
    zeta1 = RandomVariable(space, (0.0, 0.0, 1.0, 1.0))
    zeta2 = RandomVariable(space, (0.0, 1.0, 0.0, 1.0))
    S = zeta1 + zeta2
    constraints = (
        Constraint(IdiosyncraticRetention(zeta1, 1.0), scope=0),
        Constraint(IdiosyncraticRetention(zeta2, 1.0), scope=1),
    )
    autarky = Allocation(space, (zeta1, zeta2), S)
    checks = []
    verdict = classify_solidity(constraints)
    _expect_true(checks, "classify is NotSolid", verdict.status is Solidity.NOT_SOLID)
    witness = falsify_solidity(constraints, space, S, start=autarky)
    _expect_true(checks, "witness found", witness is not None)
    if witness is not None:
        half = 0.5 * S.values
        for i in (0, 1):
            _expect(checks, f"reduction X_{i+1} is S/2",
                    0.0, float(np.max(np.abs(witness.reduction.shares[i].values - half))),
                    1e-12)
    tables = {"autarky": _allocation_table(autarky)}
    if witness is not None:
        tables["reduction"] = _allocation_table(witness.reduction)
    return {
        "case": "ex-3.1",
        "solidity": verdict.status.value,
        "reason": verdict.reason,
        "tables": tables,
    }, checks


def _reproduce_ex42(out_dir):
    space, S, measures, constraints, grid = _example_42()
    best, value = grid_minimize(space, S, measures, constraints, grid)
    com_best, com_value = comonotone_minimize(space, S, measures, constraints, grid)
    checks = []
    _expect(checks, "constrained minimum 19/8", 19.0 / 8.0, value, 1e-9)
    _expect(checks, "constrained argmin a = 7/4", 1.75,
            float(best.shares[0].values[2]), 1e-9)
    _expect(checks, "comonotone minimum 29/12", 29.0 / 12.0, com_value, 1e-9)
    _expect(checks, "comonotone argmin a = 5/4", 1.25,
            float(com_best.shares[0].values[2]), 1e-9)
    _expect(checks, "gap 1/24", 1.0 / 24.0, com_value - value, 1e-9)
    a_grid = np.linspace(0.25, 1.75, 151)
    rows = []
    for a in a_grid:
        X1 = RandomVariable(space, (0.25, 0.25, float(a)))
        X2 = S - X1
        rows.append([float(a), evaluate(measures[0], X1) + evaluate(measures[1], X2)])
    return {
        "case": "ex-4.2",
        "constrained_value": value,
        "comonotone_value": com_value,
        "gap": com_value - value,
        "tables": {
            "optimizer": _allocation_table(best),
            "comonotone_optimizer": _allocation_table(com_best),
            "value_curve": {"header": ["a", "total_risk"], "rows": rows},
        },
    }, checks


def _reproduce_ex43(out_dir):
    space, S, measures, constraints = _example_43_space()
    grid = GridSpec.uniform(1, 4, 0.0, 4.0, 0.125)
    free, free_value = grid_minimize(space, S, measures, (), grid)
    best, value = grid_minimize(space, S, measures, constraints, grid)
    com_best, com_value = comonotone_minimize(space, S, measures, constraints, grid)
    checks = []
    _expect(checks, "unconstrained 2", 2.0, free_value, 1e-9)
    _expect(checks, "constrained 25/12", 25.0 / 12.0, value, 1e-9)
    _expect(checks, "comonotone 9/4", 2.25, com_value, 1e-9)
    for atom, expected in zip(range(4), (0.0, 1.0, 2.0, 4.0)):
        _expect(checks, f"constrained X_1 atom {atom}", expected,
                float(best.shares[0].values[atom]), 1e-9)
    _expect_true(checks, "constrained optimum splits {S=2}",
                 not is_comonotonic(best))
    return {
        "case": "ex-4.3",
        "unconstrained_value": free_value,
        "constrained_value": value,
        "comonotone_value": com_value,
        "tables": {
            "unconstrained": _allocation_table(free),
            "constrained": _allocation_table(best),
            "comonotone": _allocation_table(com_best),
        },
    }, checks


def _reproduce_fig63(out_dir):
    report = saturation_curve((2, 3, 5, 6), (5, 8, 3, math.inf))
    checks = []
    bps = report.breakpoints
    _expect_true(checks, "three breakpoints", len(bps) == 3)
    expected_bps = (Fraction(12), Fraction(31, 2), Fraction(20))
    for k, (got, want) in enumerate(zip(bps, expected_bps)):
        _expect_true(checks, f"breakpoint {k+1} = {want}", got == want)
    curve_checks = (
        ("agent 1 at s=12", 0, Fraction(12), Fraction(5)),
        ("agent 2 at s=15.5", 1, Fraction(31, 2), Fraction(5)),
        ("agent 4 at s=20", 3, Fraction(20), Fraction(4)),
        ("agent 4 at s=25.5", 3, Fraction(51, 2), Fraction(19, 2)),
    )
    for name, agent, s, want in curve_checks:
        _expect_true(checks, name, report.share_at(agent, s) == want)
    rows = []
    samples = sorted({Fraction(k, 2) for k in range(0, 52)} | set(bps))
    for s in samples:
        rows.append([float(s)] + [float(report.share_at(i, s)) for i in range(4)])
    return {
        "case": "fig-6.3",
        "breakpoints": list(bps),
        "terminal_s": report.terminal_s,
        "tables": {
            "curve": {"header": ["s", "X_1", "X_2", "X_3", "X_4"], "rows": rows},
        },
    }, checks


def _reproduce_sec64(out_dir):
    report = var_scenario()
    checks = []
    _expect(checks, "q", 4.7439, report.q, 1e-3)
    _expect(checks, "unconstrained 2.0198", 2.0198, report.unconstrained, 1e-4)
    _expect(checks, "unconstrained closed form", 2.0 + 202.0 / 10201.0,
            report.unconstrained, 1e-12)
    _expect(checks, "autarky 3.01 exactly", 3.01, report.autarky, None)
    _expect(checks, "constrained 2.0517", 2.0517, report.constrained, 5e-3)
    _expect(checks, "m*", 0.6337, report.m_star, 5e-3)
    _expect(checks, "breakpoint a", 0.6400, report.a, 5e-3)
    _expect(checks, "breakpoint r", 3.6700, report.r, 5e-3)
    _expect(checks, "comonotone-restricted 2.0972", 2.0972,
            report.comonotone_restricted, 1e-2)
    _expect_true(checks, "ordering strict",
                 report.unconstrained < report.constrained
                 < report.comonotone_restricted < report.autarky)
    s_grid = np.arange(0.0, 7.431, 0.01)
    x1, x2 = report.constrained_shares(s_grid)
    g1, g2 = report.comonotone_shares(s_grid)
    rows = [[float(s), float(a), float(b), float(c), float(d)]
            for s, a, b, c, d in zip(s_grid, x1, x2, g1, g2)]
    return {
        "case": "sec-6.4",
        "q": report.q,
        "m_star": report.m_star,
        "a": report.a,
        "r": report.r,
        "values": {
            "unconstrained": report.unconstrained,
            "constrained": report.constrained,
            "comonotone_restricted": report.comonotone_restricted,
            "autarky": report.autarky,
        },
        "jump_agent1": report.jump_agent1,
        "jump_agent2": report.jump_agent2,
        "witness": {
            "s": list(report.witness[0]),
            "X_1": list(report.witness[1]),
            "X_2": list(report.witness[2]),
        },
        "tables": {
            "rule_curve": {
                "header": ["s", "X_1", "X_2", "com_X_1", "com_X_2"],
                "rows": rows,
            },
        },
    }, checks


_REPRODUCERS = {
    "ex-3.1": _reproduce_ex31,
    "ex-4.2": _reproduce_ex42,
    "ex-4.3": _reproduce_ex43,
    "fig-6.3": _reproduce_fig63,
    "sec-6.4": _reproduce_sec64,
}


def reproduce(case, out_dir="."):
    """Run one canonical case, assert its published numbers, and write the
    figure-data CSV artifacts.  Raises ReproduceMismatch when any assertion
    fails."""
    if case not in _REPRODUCERS:
        raise SchemaError([f"unknown reproduce case {case!r}; "
                           f"choose from {_REPRODUCE_CASES}"])
    body, checks = _REPRODUCERS[case](out_dir)
    report = {
        "schema_version": SCHEMA_VERSION,
        "task": "reproduce",
    }
    report.update(body)
    report["checks"] = [
        {"name": c["name"], "expected": c["expected"], "computed": c["computed"],
         "ok": c["ok"]} for c in checks]
    tables = report.get("tables", {})
    os.makedirs(out_dir, exist_ok=True)
    artifacts = []
    for name, table in tables.items():
        path = os.path.join(out_dir, f"{case}-{name}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(_table_csv(table))
        artifacts.append(path)
    report["artifacts"] = artifacts
    failures = [f"{c['name']}: expected {c['expected']!r}, got {c['computed']!r}"
                for c in checks if not c["ok"]]
    if failures:
        raise ReproduceMismatch(failures)
    return report, artifacts


# ---------------------------------------------------------------------------
# entry point

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="coshare",
        description="Constrained risk sharing: solve, improve, classify, reproduce.")
    sub = parser.add_subparsers(dest="command")
    run = sub.add_parser("run", help="run a JSON problem file")
    run.add_argument("path")
    run.add_argument("--format", choices=("json", "csv", "text"), default="json")
    run.add_argument("--out", default=None, help="write the report here as well")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--tol", type=float, default=None)
    rep = sub.add_parser("reproduce", help="rebuild a published example")
    rep.add_argument("case", choices=_REPRODUCE_CASES)
    rep.add_argument("--format", choices=("json", "csv", "text"), default="json")
    rep.add_argument("--out", default=".", help="directory for CSV artifacts")
    rep.add_argument("--seed", type=int, default=None)
    rep.add_argument("--tol", type=float, default=None)
    return parser


def main(argv=None):
    _apply_thread_cap()
    if argv is None:
        argv = sys.argv[1:]
    argv = list(argv)
    if argv and argv[0] not in ("run", "reproduce", "-h", "--help"):
        argv.insert(0, "run")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for infeasibility
        return 0 if exc.code == 0 else 1
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        if args.command == "reproduce":
            try:
                report, _ = reproduce(args.case, out_dir=args.out)
            except ReproduceMismatch as exc:
                for line in exc.diffs:
                    print(f"mismatch: {line}", file=sys.stderr)
                return 3
            emit_report(report, args.format)
            return 0
        report = run_problem(args.path, args)
        text = emit_report(report, args.format)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        return 0
    except SchemaError as exc:
        for line in exc.failures:
            print(f"error: {line}", file=sys.stderr)
        return 1
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except CoshareError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
