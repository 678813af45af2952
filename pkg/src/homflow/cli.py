"""Scenario runner: ``homflow run|check|sweep|oracle``.

Exit codes: 0 when every gating check passes, 1 when any gating check fails,
2 on configuration, schema or solver errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import tomli
from referencing import Registry, Resource

from . import estimates as est
from .engine import (
    ForcingTerm,
    RefinePolicy,
    evolve,
    evolve_forced,
    evolve_perturbed,
    fractional_backend,
    tv_backend,
)
from .exceptions import HomflowError
from .grid import Domain, ResolventTolerance, TimeGrid
from .nemytskii import from_config
from .oracles import (
    PlateauState,
    chain_weights,
    dense_resolvent_oracle,
    plateau_events,
    plateau_ode_oracle,
    quadrature_oracle,
)

OUT_ENV = "HOMFLOW_OUT_DIR"
DEFAULT_OUT = "homflow-out"
AXES = ("t", "h", "lambda", "mu", "s", "omega")

EXIT_OK, EXIT_VIOLATION, EXIT_ERROR = 0, 1, 2


class ScenarioError(HomflowError):
    """Schema violations, with one message per offending field."""

    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


# --------------------------------------------------------------------------
# schemas and loading


def _schema(name):
    return json.loads(resources.files("homflow").joinpath("data", name).read_text())


def _registry():
    scen = _schema("scenario.schema.json")
    return Registry().with_resource("scenario.schema.json", Resource.from_contents(scen))


def validate(doc, schema_name):
    """Raise :class:`ScenarioError` listing every violation with its field path."""
    validator = jsonschema.Draft202012Validator(_schema(schema_name), registry=_registry())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        raise ScenarioError([f"{_path(e)}: {e.message}" for e in errors])


def _path(err):
    parts = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
    return "$" + parts


def load_toml(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise ScenarioError([f"{path}: {exc.strerror}"]) from exc
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError([f"{path}: {exc}"]) from exc


def load_scenario(path):
    doc = load_toml(path)
    validate(doc, "scenario.schema.json")
    return doc


def shipped(name: str) -> Path:
    """Path of a scenario or fixture shipped with the package."""
    base = resources.files("homflow").joinpath("data")
    for sub in ("scenarios", "fixtures"):
        cand = base.joinpath(sub, f"{name}.toml")
        if cand.is_file():
            return Path(str(cand))
    raise FileNotFoundError(name)


# --------------------------------------------------------------------------
# scenario -> objects


@dataclass
class Scenario:
    doc: dict
    root: Path
    seed: int

    @property
    def name(self):
        return self.doc["name"]

    def section(self, key):
        return self.doc.get(key, {})


def build_domain(b):
    kind = b["domain"]
    ndim = 1 if kind == "interval_1d" else 2
    cells = list(b["cells"])
    lengths = list(b.get("lengths", [1.0] * ndim))
    if len(cells) == 1 and ndim == 2:
        cells = cells * 2
    if len(lengths) == 1 and ndim == 2:
        lengths = lengths * 2
    default_bc = "dirichlet_zero" if b["kind"] == "fractional" else "neumann"
    return Domain(kind, tuple(lengths), tuple(cells), b.get("boundary", default_bc))


def build_backend(b):
    dom = build_domain(b)
    if b["kind"] == "tv":
        return tv_backend(dom)
    return fractional_backend(dom, b.get("s", 0.5), b.get("collar_cells"))


def build_tol(b):
    return ResolventTolerance(rel_gap=b.get("rel_gap", 1e-8), max_iters=b.get("max_iters", 200_000))


def build_initial(spec, dom, seed, root):
    kind = spec["kind"]
    x = dom.centers()
    if kind == "constant":
        return dom.constant(spec.get("value", 1.0))
    if kind == "indicator":
        lower = spec.get("lower", [1 / 3] * dom.ndim)
        upper = spec.get("upper", [2 / 3] * dom.ndim)
        return dom.box_indicator(_per_axis(lower, dom), _per_axis(upper, dom)).scale(spec.get("height", 1.0))
    if kind == "bump":
        center = np.asarray(_per_axis(spec.get("center", [0.5 * L for L in dom.lengths]), dom))
        width = spec.get("width", 0.25 * min(dom.lengths))
        r2 = np.sum(((x - center) / width) ** 2, axis=1)
        return dom.grid_function(spec.get("height", 1.0) * np.maximum(0.0, 1.0 - r2))
    if kind == "random":
        rng = np.random.default_rng(seed)
        return dom.grid_function(rng.uniform(0.0, spec.get("high", 1.0), dom.size))
    path = Path(spec.get("path", ""))
    if not path.is_absolute():
        path = root / path
    try:
        vals = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=",", ndmin=1)
    except OSError as exc:
        raise ScenarioError([f"$.initial.path: cannot read {path}"]) from exc
    vals = np.asarray(vals, dtype=float).ravel()
    if vals.size != dom.size:
        raise ScenarioError([f"$.initial.path: expected {dom.size} values, got {vals.size}"])
    return dom.grid_function(vals)


def _per_axis(vals, dom):
    vals = list(vals)
    return vals * dom.ndim if len(vals) == 1 else vals


def build_forcing(spec, dom, horizon):
    if not spec:
        return None
    kind = spec["kind"]
    T = spec.get("horizon", horizon)
    if kind == "constant":
        c = dom.constant(spec.get("value", 1.0))
        return ForcingTerm.sampled([0.0, T], [c, c], [dom.zeros(), dom.zeros()])
    if kind == "step":
        bps = spec.get("breakpoints")
        vals = spec.get("values")
        if bps is None or vals is None or len(vals) != len(bps) - 1:
            raise ScenarioError(["$.forcing: step forcing needs breakpoints and one value per interval"])
        return ForcingTerm.step(bps, [dom.constant(v) for v in vals])
    rate = spec.get("rate", 1.0)
    c = spec.get("value", 1.0)
    ts = np.linspace(0.0, T, spec.get("samples", 65))
    return ForcingTerm.sampled(
        ts, [dom.constant(c * np.exp(-rate * s)) for s in ts], [dom.constant(-rate * c * np.exp(-rate * s)) for s in ts]
    )


class Built:
    """Everything a scenario needs, constructed once."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        b = sc.doc["backend"]
        self.op = build_backend(b)
        self.tol = build_tol(b)
        self.dom = self.op.domain
        self.u0 = build_initial(sc.doc["initial"], self.dom, sc.seed, sc.root)
        tsec = sc.doc["time"]
        self.grid = TimeGrid(tsec["times"])
        self.refine = RefinePolicy(
            tol=tsec.get("refine_tol", 1e-6), n_max=tsec.get("n_max", 2**16), fixed_n=tsec.get("n")
        )
        chk = sc.section("checks")
        self.checks = chk.get("names", [])
        self.n = chk.get("n", est.DEFAULT_N)
        self.h_ratio = chk.get("h_ratio", 1e-2)
        self.ps = [np.inf if p == "inf" else p for p in chk.get("p", [1, 2, "inf"])]
        self.lams = chk.get("lambda", [0.5, 2.0])
        self.mu = chk.get("mu", 0.05)
        self.pairs = chk.get("pairs", 3)
        self.q = chk.get("q", 2.0)
        self.smoothing_times = chk.get("smoothing_times")
        self.slack = chk.get("slack", {})
        horizon = 1.5 * float(self.grid.times[-1]) if self.grid.times[-1] > 0 else 1.0
        self.forcing = build_forcing(sc.section("forcing"), self.dom, horizon)
        pert = sc.section("perturbation")
        self.F = None
        if pert:
            extra = {"scale": pert["scale"]} if "scale" in pert else {}
            self.F = from_config(pert["family"], pert.get("omega", 0.0), **extra)
        self.corrupt = sc.section("inject").get("corrupt_trajectory", False)
        self.check_times = [float(t) for t in self.grid.times if t > 0]

    # states are corrupted here when the injection flag is set
    def _corrupt(self, u):
        if not self.corrupt:
            return u
        vals = u.values.copy()
        vals[0] += max(1.0, float(np.abs(self.u0.values).max()))
        return u.with_values(vals)

    def pair(self, t, h, **kw):
        a, b = est.flow_pair(self.op, self.u0, t, h, self.n, self.tol, **kw)
        return a, self._corrupt(b)

    def trajectory(self):
        if self.F is not None:
            tr = evolve_perturbed(self.op, self.F, self.u0, self.grid, self.refine, self.tol)
        elif self.forcing is not None:
            tr = evolve_forced(self.op, self.u0, self.forcing, self.grid, self.refine, self.tol)
        else:
            tr = evolve(self.op, self.u0, self.grid, self.refine, self.tol)
        tr.states = [s if t == 0 else self._corrupt(s) for t, s in zip(self.grid.times, tr.states)]
        return tr


# --------------------------------------------------------------------------
# check suite


def _pair_data(bt, k):
    rng = np.random.default_rng([bt.sc.seed, k])
    noise = rng.uniform(0.0, 1.0, bt.dom.size) * max(1.0, float(np.abs(bt.u0.values).max()))
    return bt.u0.with_values(bt.u0.values + noise)


def run_checks(bt: Built):
    reports = []
    for name in bt.checks:
        reports.extend(_run_check(bt, name))
    for r in reports:
        if r.name in bt.slack or r.name.split("[")[0] in bt.slack:
            r.slack_budget = float(bt.slack.get(r.name, bt.slack.get(r.name.split("[")[0])))
            r.context["slack_override"] = True
        r.context["scenario"] = bt.sc.name
        r.context["seed"] = bt.sc.seed
    return sorted(reports, key=lambda r: r.name)


def _run_check(bt, name):
    op, u0, tol, n = bt.op, bt.u0, bt.tol, bt.n
    out = []
    if name == "resolvent_homogeneity":
        for lam in bt.lams:
            out.append(est.check_resolvent_homogeneity(op, u0, bt.mu, lam, tol))
    elif name == "semigroup_homogeneity":
        for t in bt.check_times:
            for lam in bt.lams:
                out.append(est.check_semigroup_homogeneity(op, u0, t, lam, n, tol))
    elif name in ("global_decay", "pointwise_bound", "mass_estimates"):
        for t in bt.check_times:
            h = bt.h_ratio * t
            st = bt.pair(t, h)
            if name == "global_decay":
                for p in bt.ps:
                    for form in ("finite_h", "quotient"):
                        out.append(est.check_global_decay(op, u0, t, h, p, n, tol, form, states=st))
            elif name == "pointwise_bound":
                out.append(est.check_pointwise_bound(op, u0, t, h, n, tol, states=st))
            else:
                out.extend(est.check_mass_estimates(op, u0, t, h, n, tol, states=st))
    elif name in ("contraction", "complete_contraction", "order_preservation"):
        for t in bt.check_times:
            for k in range(bt.pairs):
                v0 = _pair_data(bt, k)
                if name == "contraction":
                    out.extend(est.check_contraction(op, u0, v0, t, p, n, tol) for p in bt.ps)
                elif name == "complete_contraction":
                    out.append(est.check_complete_contraction(op, u0, v0, t, n, tol))
                else:
                    out.append(est.check_order_preservation(op, u0, v0, t, n, tol))
    elif name == "perturbed_decay":
        if bt.F is None:
            raise ScenarioError(["$.checks.names: perturbed_decay needs a [perturbation] table"])
        for t in bt.check_times:
            h = bt.h_ratio * t
            st = bt.pair(t, h, F=bt.F)
            out.extend(est.check_perturbed_decay(op, bt.F, u0, t, h, p, n, tol, states=st) for p in bt.ps)
    elif name == "forced_decay":
        if bt.forcing is None:
            raise ScenarioError(["$.checks.names: forced_decay needs a [forcing] table"])
        for t in bt.check_times:
            h = bt.h_ratio * t
            st = bt.pair(t, h, forcing=bt.forcing)
            out.append(est.check_forced_decay(op, u0, bt.forcing, t, h, 1, n, tol, states=st))
    elif name == "smoothing_exponent":
        b = bt.sc.doc["backend"]
        times = bt.smoothing_times or list(np.geomspace(bt.check_times[0], bt.check_times[-1], 8))
        out.append(est.check_smoothing_exponent(op, u0, times, b.get("s", 0.5), bt.dom.ndim, bt.q, n, tol))
    elif name == "plateau_oracle":
        out.append(plateau_report(bt))
    return out


def plateau_report(bt):
    if bt.dom.ndim != 1 or bt.dom.boundary != "neumann" or bt.sc.doc["backend"]["kind"] != "tv" or bt.F or bt.forcing:
        raise ScenarioError(["$.checks.names: plateau_oracle needs an unforced 1D Neumann TV scenario"])
    (w,) = bt.dom.widths
    edges = np.arange(bt.dom.size + 1) * w
    p0 = PlateauState(edges, bt.u0.values)
    worst = 0.0
    tr = bt.trajectory()
    for t, s in zip(bt.grid.times, tr.states):
        ref = plateau_ode_oracle(p0, float(t)).cell_average(bt.dom)
        worst = max(worst, (s - ref).norm(1))
    ev = plateau_events(p0)
    ctx = {"backend": bt.op.name, "times": [float(t) for t in bt.grid.times], "extinction_time": ev[-1] if ev else 0.0}
    return est.InequalityReport("plateau_oracle", worst, 0.0, 1e-2 * bt.u0.norm(1), ctx)


# --------------------------------------------------------------------------
# output


def out_dir(args):
    base = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    return Path(base)


def write_reports(path: Path, reports):
    payload = [r.to_dict() for r in reports]
    jsonschema.validate(payload, _schema("report.schema.json"))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_trajectory(path: Path, tr):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "cell_index", "value"])
    for t, s in zip(tr.grid.times, tr.states):
        for i, v in enumerate(s.values):
            w.writerow([repr(float(t)), i, repr(float(v))])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _verdict(reports, label):
    failed = [r for r in reports if r.gating and not r.passed]
    for r in failed:
        print(f"FAIL {label}: {r.name} lhs={r.lhs!r} rhs={r.rhs!r} slack={r.slack_budget!r}", file=sys.stderr)
    return EXIT_VIOLATION if failed else EXIT_OK


# --------------------------------------------------------------------------
# commands


def _scenario(path, seed):
    doc = load_scenario(path)
    return Scenario(doc, Path(path).resolve().parent, seed if seed is not None else doc.get("seed", 0))


def _job_run(path, seed, out, with_trajectory):
    try:
        sc = _scenario(path, seed)
        bt = Built(sc)
        target = Path(out) / sc.name
        if with_trajectory:
            write_trajectory(target / "trajectory.csv", bt.trajectory())
        reports = run_checks(bt)
        write_reports(target / "reports.json", reports)
        return _verdict(reports, sc.name), []
    except ScenarioError as exc:
        return EXIT_ERROR, [f"{path}: {p}" for p in exc.problems]
    except (HomflowError, FileNotFoundError) as exc:
        return EXIT_ERROR, [f"{path}: {type(exc).__name__}: {exc}"]


def _parallel(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futs = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futs]


def cmd_run(args, with_trajectory=True):
    items = [(p, args.seed, str(out_dir(args)), with_trajectory) for p in args.config]
    results = _parallel(_job_run, items, args.jobs)
    code = EXIT_OK
    for c, msgs in results:
        for m in msgs:
            print(m, file=sys.stderr)
        code = max(code, c)
    return code


def _apply_axis(doc, axis, value):
    doc = json.loads(json.dumps(doc))
    chk = doc.setdefault("checks", {})
    if axis == "t":
        doc["time"]["times"] = [0.0, value]
    elif axis == "h":
        chk["h_ratio"] = value
    elif axis == "lambda":
        chk["lambda"] = [value]
    elif axis == "mu":
        chk["mu"] = value
    elif axis == "s":
        if doc["backend"]["kind"] != "fractional":
            raise ScenarioError(["$.sweep.s: the s axis needs a fractional backend"])
        doc["backend"]["s"] = value
    elif axis == "omega":
        if "perturbation" not in doc:
            raise ScenarioError(["$.sweep.omega: the omega axis needs a [perturbation] table"])
        doc["perturbation"]["omega"] = value
    return doc


def _job_sweep(doc, root, seed, axis, value):
    try:
        bt = Built(Scenario(_apply_axis(doc, axis, value), Path(root), seed))
        return [r for r in run_checks(bt)], None
    except HomflowError as exc:
        msgs = exc.problems if isinstance(exc, ScenarioError) else [f"{type(exc).__name__}: {exc}"]
        return None, msgs


def cmd_sweep(args):
    try:
        sc = _scenario(args.config, args.seed)
    except ScenarioError as exc:
        for p in exc.problems:
            print(f"{args.config}: {p}", file=sys.stderr)
        return EXIT_ERROR
    values = sc.section("sweep").get(args.axis, [])
    if not values:
        print(f"{args.config}: $.sweep.{args.axis}: axis is empty or missing", file=sys.stderr)
        return EXIT_ERROR
    items = [(sc.doc, str(sc.root), sc.seed, args.axis, v) for v in values]
    results = _parallel(_job_sweep, items, args.jobs)
    rows, reports = [], []
    for v, (reps, msgs) in zip(values, results):
        if reps is None:
            for m in msgs:
                print(f"{args.config}: {m}", file=sys.stderr)
            return EXIT_ERROR
        for r in reps:
            r.context["axis"] = args.axis
            r.context["axis_value"] = v
            rows.append([args.axis, repr(float(v)), r.name, repr(r.lhs), repr(r.rhs), repr(r.margin), str(r.passed).lower()])
            reports.append(r)
    target = out_dir(args) / sc.name
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "value", "name", "lhs", "rhs", "margin", "pass"])
    w.writerows(rows)
    target.mkdir(parents=True, exist_ok=True)
    (target / f"sweep_{args.axis}.csv").write_text(buf.getvalue())
    write_reports(target / f"sweep_{args.axis}.json", reports)
    return _verdict(reports, sc.name)


def run_fixture(doc, root=Path(".")):
    kind = doc["kind"]
    if kind == "plateau":
        _need(doc, "edges", "heights", "times")
        p0 = PlateauState(doc["edges"], doc["heights"])
        states = [plateau_ode_oracle(p0, t) for t in doc["times"]]
        return {
            "kind": kind,
            "times": doc["times"],
            "edges": [s.edges.tolist() for s in states],
            "heights": [s.heights.tolist() for s in states],
            "mass": [s.mass() for s in states],
            "events": plateau_events(p0),
        }
    if kind == "dense_resolvent":
        _need(doc, "backend", "initial", "mu")
        b = doc["backend"]
        dom = build_domain(b)
        if b["kind"] == "tv":
            wts = chain_weights(dom)
        else:
            from .fractional import FractionalSpec

            wts = FractionalSpec(b.get("s", 0.5), dom, b.get("collar_cells")).weights
        v = build_initial(doc["initial"], dom, doc.get("seed", 0), root)
        u = dense_resolvent_oracle(wts, v, doc["mu"], dom.cell_measure())
        return {"kind": kind, "mu": doc["mu"], "v": v.values.tolist(), "u": u.tolist()}
    _need(doc, "integrand", "omega", "t")
    L = doc.get("L", 1.0)
    vals = [quadrature_oracle(doc["integrand"], doc["omega"], L, t) for t in doc["t"]]
    return {"kind": kind, "integrand": doc["integrand"], "omega": doc["omega"], "L": L, "t": doc["t"], "value": vals}


def _need(doc, *keys):
    missing = [k for k in keys if k not in doc]
    if missing:
        raise ScenarioError([f"$.{k}: required for kind {doc['kind']!r}" for k in missing])


def cmd_oracle(args):
    try:
        doc = load_toml(args.fixture)
        validate(doc, "fixture.schema.json")
        result = run_fixture(doc, Path(args.fixture).resolve().parent)
    except ScenarioError as exc:
        for p in exc.problems:
            print(f"{args.fixture}: {p}", file=sys.stderr)
        return EXIT_ERROR
    except HomflowError as exc:
        print(f"{args.fixture}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    target = out_dir(args) / doc["name"]
    target.mkdir(parents=True, exist_ok=True)
    (target / "oracle.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="homflow", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="evolve and check; write trajectory CSV and report JSON")
    p.add_argument("config", nargs="+")
    p = sub.add_parser("check", parents=[common], help="run the check suite only")
    p.add_argument("config", nargs="+")
    p = sub.add_parser("sweep", parents=[common], help="re-run the checks along one parameter axis")
    p.add_argument("config")
    p.add_argument("--axis", required=True, choices=AXES)
    p = sub.add_parser("oracle", parents=[common], help="evaluate an oracle fixture")
    p.add_argument("fixture")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    if args.command == "run":
        return cmd_run(args, True)
    if args.command == "check":
        return cmd_run(args, False)
    if args.command == "sweep":
        return cmd_sweep(args)
    return cmd_oracle(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
