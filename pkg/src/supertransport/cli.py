"""Batch runner: ``supertransport run --spec experiment.json``.

Experiment kinds and their CSV columns:

  flow         quantity,value
  trotter      n,error,observed_order
  odd-flow     quantity,value
  transport    quantity,value
  roundtrip    quantity,value
  verify-all   name,anchor,residual,threshold,passed

Exit status: 0 all asserted residuals within threshold, 1 assertion failure,
2 malformed or schema-invalid spec, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path as FilePath

import jsonschema
import numpy as np

from . import grassmann as gr
from .bundles import ConnectionFormatError, GradedConnection
from .checks import CATALOG, list_checks, run_check
from .flows import even_flow, odd_flow, compose_odd_flows, trotter_table
from .integrate import DEFAULT_TOL, DivergenceError
from .manifold_forms import DifferentialForm, VectorField
from .probes import random_form
from .transport import (ConnectionTransport, Path, Reparametrization, SuperPath, check_gluing,
                        check_identity_on_constant, check_q_naturality, check_reparam_invariance,
                        check_s_naturality, endpoint_map, roundtrip_residual)

REPORT_VERSION = 1

EXIT_OK, EXIT_ASSERT, EXIT_SCHEMA, EXIT_DIVERGENCE = 0, 1, 2, 3

_number = {"type": "number"}
_positive = {"type": "number", "exclusiveMinimum": 0}
_vector = {"type": "array", "items": _number, "minItems": 1}
_poly = {"type": "array", "items": {
    "type": "object", "required": ["exp", "c"], "additionalProperties": False,
    "properties": {"exp": {"type": "array", "items": {"type": "integer", "minimum": 0}}, "c": _number}}}
_field = {"type": "object", "required": ["dim", "components"],
          "properties": {"dim": {"type": "integer", "minimum": 1}, "components": {"type": "array", "items": _poly}}}
_form = {"type": "object", "required": ["dim", "terms"],
         "properties": {"dim": {"type": "integer", "minimum": 1}, "terms": {"type": "array", "items": {
             "type": "object", "required": ["indices", "poly"],
             "properties": {"indices": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                            "poly": _poly}}}}}
_connection = {"type": "object", "required": ["p", "q", "A"],
               "properties": {"p": {"type": "integer", "minimum": 0}, "q": {"type": "integer", "minimum": 0},
                              "even": {"type": "boolean"},
                              "A": {"type": "array", "minItems": 1, "items": {"type": "array", "items": _form}}}}
_path = {"type": "object", "required": ["coeffs"],
         "properties": {"coeffs": {"type": "array", "minItems": 1},
                        "odd_coeffs": {"type": "array"},
                        "generators": {"type": "integer", "minimum": 0, "maximum": 8},
                        "horizon": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}}}

_common = {"kind": {"type": "string"}, "seed": {"type": "integer", "minimum": 0},
           "tol": _positive, "threshold": {"type": "number", "minimum": 0}, "description": {"type": "string"}}

SCHEMAS = {
    "flow": {"required": ["field", "x0", "t"],
             "properties": {"field": _field, "x0": _vector, "t": _number, "expected": _vector}},
    "trotter": {"required": ["X", "Y", "x0", "t"],
                "properties": {"X": _field, "Y": _field, "x0": _vector, "t": _number,
                               "levels": {"type": "integer", "minimum": 1, "maximum": 14},
                               "min_order": _number, "max_error": _positive}},
    "odd-flow": {"required": ["X", "form"],
                 "properties": {"X": _field, "Y": _field, "form": _form,
                                "probes": {"type": "integer", "minimum": 0, "maximum": 200}}},
    "transport": {"required": ["connection", "path", "v0"],
                  "properties": {"connection": _connection, "path": _path, "v0": _vector,
                                 "checks": {"type": "array", "items": {"enum": [
                                     "gluing", "identity-on-constant", "q-naturality",
                                     "s-naturality", "reparametrization"]}}}},
    "roundtrip": {"required": ["connection"],
                  "properties": {"connection": _connection,
                                 "points": {"type": "array", "items": _vector}}},
    "verify-all": {"properties": {"checks": {"type": "array", "items": {"enum": sorted(CATALOG)}}}},
}

DEFAULT_THRESHOLDS = {"flow": 1e-8, "odd-flow": 1e-12, "transport": 1e-6, "roundtrip": 1e-5}

SPEC_SCHEMA = {
    "type": "object", "required": ["kind"], "properties": {"kind": {"enum": sorted(SCHEMAS)}},
    "allOf": [{"if": {"properties": {"kind": {"const": k}}},
               "then": {"required": s.get("required", []), "properties": {**_common, **s["properties"]},
                        "additionalProperties": False}}
              for k, s in SCHEMAS.items()],
}


class SpecError(Exception):
    pass


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


def load_spec(path: str) -> dict:
    """Read, resolve ``{"file": ...}`` references and validate; raises SpecError with a location."""
    try:
        text = FilePath(path).read_text()
    except OSError as exc:
        raise SpecError(f"{path}: {exc.strerror}") from exc
    try:
        spec = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    except ValueError as exc:
        raise SpecError(f"{path}: {exc}") from exc
    spec = _resolve(spec, FilePath(path).parent)
    validate_spec(spec, path)
    return spec


def _resolve(node, base: FilePath):
    if isinstance(node, dict):
        if set(node) == {"file"} and isinstance(node["file"], str):
            ref = base / node["file"]
            try:
                return _resolve(json.loads(ref.read_text(), parse_constant=_reject_constant), ref.parent)
            except (OSError, ValueError) as exc:
                raise SpecError(f"{ref}: {exc}") from exc
        return {k: _resolve(v, base) for k, v in node.items()}
    if isinstance(node, list):
        return [_resolve(v, base) for v in node]
    return node


def validate_spec(spec, source: str = "<spec>") -> None:
    errors = sorted(jsonschema.Draft202012Validator(SPEC_SCHEMA).iter_errors(spec),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        loc = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        raise SpecError(f"{source}: at {loc}: {err.message}")


# -- experiments ------------------------------------------------------------------


def _floats(x) -> list:
    return [float(v) for v in np.ravel(x)]


def run_flow(spec, rng, tol):
    X = VectorField.from_json(spec["field"])
    t, x0 = float(spec["t"]), np.asarray(spec["x0"], dtype=float)
    final = even_flow(X, t, x0, tol)
    halves = even_flow(X, t / 2, even_flow(X, t / 2, x0, tol), tol)
    values = {"group_law_residual": float(np.max(np.abs(final - halves)))}
    if "expected" in spec:
        values["expected_residual"] = float(np.max(np.abs(final - np.asarray(spec["expected"]))))
    return {"final": _floats(final)}, values, None


def run_trotter(spec, rng, tol):
    X, Y = VectorField.from_json(spec["X"]), VectorField.from_json(spec["Y"])
    rep = trotter_table(X, Y, float(spec["t"]), spec["x0"], spec.get("levels", 10), tol)
    rows = [{"n": r.n, "error": r.error,
             "observed_order": None if np.isnan(r.observed_order) else r.observed_order} for r in rep.rows]
    failures = []
    if rep.fitted_order < spec.get("min_order", 0.9):
        failures.append(f"fitted order {rep.fitted_order:.4g} below {spec.get('min_order', 0.9)}")
    if "max_error" in spec and rows[-1]["error"] > spec["max_error"]:
        failures.append(f"error {rows[-1]['error']:.4g} at n={rows[-1]['n']} above {spec['max_error']}")
    data = {"fitted_order": rep.fitted_order, "oracle": _floats(rep.oracle), "rows": rows}
    return data, {}, (rows, ["n", "error", "observed_order"], failures)


def run_odd_flow(spec, rng, tol):
    X = VectorField.from_json(spec["X"])
    omega = DifferentialForm.from_json(spec["form"])
    n = X.dim
    flow = odd_flow(X)
    image = flow(omega)
    values = {}
    probes = [random_form(n, rng) for _ in range(spec.get("probes", 10))]
    hom = 0.0
    for a, b in zip(probes[::2], probes[1::2]):
        hom = max(hom, flow(a.wedge(b)).max_abs_diff(flow(a) * flow(b)))
    values["homomorphism_residual"] = hom
    if "Y" in spec:
        Y = VectorField.from_json(spec["Y"])
        comp = compose_odd_flows(flow, odd_flow(Y))
        values["composition_residual"] = comp.max_abs_diff(odd_flow(X + Y), probes + [omega])
    data = {"theta^0": image.coefficient(0).to_json(), "theta^1": image.coefficient(1).to_json()}
    return data, values, None


def _build_path(p):
    k = p.get("generators", 0)
    horizon = p.get("horizon", [0.0, 1.0])
    coeffs = np.asarray(p["coeffs"], dtype=float)
    if "odd_coeffs" in p:
        return SuperPath.polynomial(coeffs, np.asarray(p["odd_coeffs"], dtype=float), horizon, k)
    return Path.polynomial(coeffs, horizon, k)


def _random_hom(k, rng):
    images = []
    for _ in range(k):
        g = np.zeros(2 ** k)
        g[[1 << i for i in range(k)]] = rng.integers(-8, 9, k) / 8.0
        images.append(gr.odd_part(g))
    return gr.GrassmannHom(images, k)


def run_transport(spec, rng, tol):
    nabla = GradedConnection.from_json(spec["connection"])
    curve = _build_path(spec["path"])
    T = ConnectionTransport(nabla, tol)
    v0 = np.asarray(spec["v0"], dtype=float)
    if isinstance(curve, SuperPath) or spec["path"].get("generators", 0):
        v0 = gr.embed(v0, spec["path"].get("generators", 0))
    sec = T.transport(curve, v0)
    ep = endpoint_map(T, curve)
    values = {}
    t0, t1 = curve.t0, curve.t1
    for name in spec.get("checks", []):
        if name == "gluing":
            values[name] = check_gluing(T, curve, (t0 + t1) / 2, v0)
        elif name == "identity-on-constant":
            start = (curve.body if isinstance(curve, SuperPath) else curve).position(t0)
            values[name] = check_identity_on_constant(T, start, v0, (t0, t1), isinstance(curve, SuperPath))
        elif name == "q-naturality" and isinstance(curve, Path):
            values[name] = check_q_naturality(T, curve, v0)
        elif name == "s-naturality":
            values[name] = check_s_naturality(T, curve, _random_hom(spec["path"].get("generators", 0), rng), v0)
        elif name == "reparametrization":
            span = t1 - t0
            rep = Reparametrization(lambda u: t0 + span * (((u - t0) / span) + ((u - t0) / span) ** 2) / 2,
                                    lambda u: 0.5 + (u - t0) / span, t0, t1)
            values[name] = check_reparam_invariance(T, curve, rep, v0)
    data = {"endpoint": np.asarray(sec.endpoint).tolist(), "holonomy_condition": ep.condition,
            "holonomy_even": ep.is_even, "error_estimate": sec.error_estimate}
    return data, values, None


def run_roundtrip(spec, rng, tol):
    nabla = GradedConnection.from_json(spec["connection"])
    if not nabla.is_even:
        raise SpecError("roundtrip requires an even connection")
    points = [np.asarray(p, dtype=float) for p in spec["points"]] if "points" in spec else None
    rep = roundtrip_residual(nabla, points, rng, tol)
    values = {"residual": rep.residual, "leg_residual": rep.leg_residual,
              "iota_residual": rep.iota_residual, "higher_form_residual": rep.higher_form_residual}
    failures = [] if rep.recovered_even else ["recovered connection is not even"]
    return {"points": rep.points, "recovered_even": rep.recovered_even}, values, (None, None, failures)


def run_verify_all(spec, seed, tol):
    results = [run_check(name, seed, tol) for name in spec.get("checks", list(CATALOG))]
    rows = [{"name": r.name, "anchor": r.anchor, "residual": r.residual, "threshold": r.threshold,
             "passed": r.passed} for r in results]
    failures = [f"{r.name}: residual {r.residual:.3g} > {r.threshold:g}" for r in results if not r.passed]
    data = {"checks": [r.to_json() for r in results]}
    return data, rows, failures


RUNNERS = {"flow": run_flow, "trotter": run_trotter, "odd-flow": run_odd_flow,
           "transport": run_transport, "roundtrip": run_roundtrip}


def run(spec: dict, seed: int = 0, tol: float | None = None) -> tuple[dict, list, list[str], list[dict]]:
    """Execute one experiment.  Returns ``(report, csv_columns, failures, csv_rows)``."""
    kind = spec["kind"]
    tol = float(tol if tol is not None else spec.get("tol", DEFAULT_TOL))
    seed = int(spec.get("seed", seed))
    report = {"report_version": REPORT_VERSION, "kind": kind, "seed": seed, "tol": tol}
    if kind == "verify-all":
        data, rows, failures = run_verify_all(spec, seed, tol)
        columns = ["name", "anchor", "residual", "threshold", "passed"]
    else:
        data, values, table = RUNNERS[kind](spec, np.random.default_rng(seed), tol)
        threshold = spec.get("threshold", DEFAULT_THRESHOLDS.get(kind, 0.0))
        failures = [f"{k}: {v:.3g} > {threshold:g}" for k, v in values.items() if not v <= threshold]
        rows = [{"quantity": k, "value": v} for k, v in values.items()]
        columns = ["quantity", "value"]
        if table is not None:
            t_rows, t_cols, extra = table
            failures += extra
            if t_rows is not None:
                rows, columns = t_rows, t_cols
        report["threshold"] = threshold
        report["residuals"] = values
    report.update(data)
    report["failures"] = failures
    report["passed"] = not failures
    return report, columns, failures, rows


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _emit(report, columns, rows, fmt: str, out: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"
    table = _csv_text(columns, rows)
    if out is None:
        sys.stdout.write(table if fmt == "csv" else text)
        return
    d = FilePath(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / "report.json").write_text(text)
    if fmt == "csv":
        (d / "report.csv").write_text(table)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supertransport", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="directory for report.json / report.csv (default: stdout)")
        p.add_argument("--seed", type=int, default=0, help="seed for random probes (default 0)")
        p.add_argument("--tol", type=float, default=None,
                       help=f"ODE step-doubling tolerance (default {DEFAULT_TOL:g} or the spec's 'tol')")
        fmt = p.add_mutually_exclusive_group()
        fmt.add_argument("--json", dest="format", action="store_const", const="json", help="JSON report (default)")
        fmt.add_argument("--csv", dest="format", action="store_const", const="csv", help="CSV table")
        p.set_defaults(format="json")

    run_p = sub.add_parser("run", help="run an experiment spec")
    run_p.add_argument("--spec", required=True, help="experiment JSON file")
    common(run_p)
    verify = sub.add_parser("verify-all", help="run the named check catalog")
    verify.add_argument("--spec", help="optional verify-all spec selecting checks")
    common(verify)
    sub.add_parser("list-checks", help="print check names and what each exercises")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-checks":
        for name, anchor in list_checks():
            print(f"{name}\t{anchor}")
        return EXIT_OK
    try:
        if args.tol is not None and not args.tol > 0:
            raise SpecError(f"--tol must be positive, got {args.tol}")
        if args.seed < 0:
            raise SpecError(f"--seed must be non-negative, got {args.seed}")
        if args.command == "verify-all" and args.spec is None:
            spec = {"kind": "verify-all"}
        else:
            spec = load_spec(args.spec)
            if args.command == "verify-all" and spec["kind"] != "verify-all":
                raise SpecError(f"{args.spec}: at $.kind: expected 'verify-all'")
        report, columns, failures, rows = run(spec, args.seed, args.tol)
    except (SpecError, ConnectionFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    _emit(report, columns, rows, args.format, args.out)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_ASSERT if failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
