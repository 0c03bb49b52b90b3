"""Experiment runners: benchmark bounds, portfolio and risk-aggregation tables.

Each runner maps an :class:`ExperimentConfig` to a :class:`ResultTable`.
Cells are independent jobs; numerical breakdown shows up as ``-`` and
infeasibility as ``INF`` in the table instead of aborting the grid.
"""
from __future__ import annotations

import json
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.stats import norm

from .ambiguity import (AmbiguitySet, LinearFunctional, ambiguity_set, confidence_constraint,
                        conditional_moment_constraint, conditional_probability_constraint,
                        histogram_matching, marginal_matching, moment_constraint)
from .lasserre import heuristic_bound
from .moments import (AxisSlab, DomainSpec, Halfspace, InsufficientDegreeError, MeasureSpec, UnsupportedError,
                      build_table, check_pair, intersect)
from .polybasis import Polynomial
from .quadrature import InstabilityError, MomentReference, QuadratureReference
from .wcsdp import BACKENDS, wc_expectation, wc_heuristic

KINDS = ("polyopt-bench", "portfolio", "risk-aggregation", "custom-wc")
INSTABLE = "-"
INFEASIBLE = "INF"


# ---------------------------------------------------------------------------
# test problems

def matyas(n: int = 2) -> Polynomial:
    return Polynomial(2, {(2, 0): 26.0, (0, 2): 26.0, (1, 1): -48.0})


def motzkin() -> Polynomial:
    return Polynomial(2, {(4, 2): 64.0, (2, 4): 64.0, (2, 2): -48.0, (0, 0): 1.0})


BENCH_FUNCTIONS = {"matyas": matyas, "motzkin": motzkin}


def portfolio_event(weights, lower, upper, threshold) -> Halfspace:
    """``sum_i x_i xi_i <= threshold`` with ``xi_i = c_i + s_i z_i``, ``z in [-1, 1]^n``."""
    x = np.asarray(weights, dtype=float)
    c = (np.asarray(lower) + np.asarray(upper)) / 2
    s = (np.asarray(upper) - np.asarray(lower)) / 2
    return Halfspace(tuple(x * s), float(threshold - x @ c), "<=")


def lognormal_moment_1d(location: float, scale: float, k: int) -> float:
    return float(np.exp(k * location + 0.5 * (k * scale) ** 2))


def lognormal_bin(location: float, scale: float, a: float, b: float) -> float:
    lo = norm.cdf((np.log(a) - location) / scale) if a > 0 else 0.0
    hi = norm.cdf((np.log(b) - location) / scale) if np.isfinite(b) else 1.0
    return float(hi - lo)


# ---------------------------------------------------------------------------
# config and results

DEFAULTS: dict[str, dict[str, Any]] = {
    "polyopt-bench": {
        "r": [20], "R": [1],
        "params": {"functions": ["matyas", "motzkin"],
                   "pairs": [[20, 1], [10, 2], [5, 4], [4, 5], [2, 10]],
                   "method": "quadrature"},
    },
    "portfolio": {
        "r": list(range(13)), "R": [1],
        "params": {"weights": [0.75, 0.25], "lower": [0.8, 0.7], "upper": [1.2, 1.3], "threshold": 0.9},
    },
    "risk-aggregation": {
        "r": list(range(6)), "R": [1],
        "params": {"reference": "lognormal", "location": [-0.3, 0.4], "scale": [0.8, 0.5],
                   "threshold": 10.0, "bins": 20, "bin_width": 0.25,
                   "modes": ["moment0", "moment1", "moment2", "histogram", "distribution"]},
    },
    "custom-wc": {"r": [1], "R": [1], "params": {}},
}

MODES = ("moment0", "moment1", "moment2", "histogram", "distribution")


@dataclass
class ExperimentConfig:
    kind: str
    r: list[int] = field(default_factory=list)
    R: list[int] = field(default_factory=lambda: [1])
    params: dict = field(default_factory=dict)
    backend: str = "cvxopt"
    tol: float = 1e-9
    threads: int = 1
    seed: int = 0
    out: str | None = None

    @classmethod
    def default(cls, kind: str, **overrides) -> ExperimentConfig:
        if kind not in KINDS:
            raise ValueError(f"unknown experiment kind {kind!r}; choose from {KINDS}")
        base = json.loads(json.dumps(DEFAULTS[kind]))
        params = dict(base.pop("params"))
        params.update(overrides.pop("params", {}) or {})
        base.update(overrides)
        return cls(kind=kind, params=params, **base)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        d = json.loads(text)
        kind = d.get("kind")
        if kind not in KINDS:
            raise ValueError(f"unknown experiment kind {kind!r}; choose from {KINDS}")
        known = {"kind", "r", "R", "params", "backend", "tol", "threads", "seed", "out"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    def validate(self) -> None:
        """Reject unsupported combinations before any computation."""
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if any(int(r) < 0 for r in self.r) or any(int(R) < 1 for R in self.R):
            raise ValueError("need r >= 0 and R >= 1")
        p = self.params
        if self.kind == "polyopt-bench":
            for f in p.get("functions", []):
                if f not in BENCH_FUNCTIONS:
                    raise ValueError(f"unknown test function {f!r}")
            if p.get("method", "quadrature") not in ("quadrature", "monomial"):
                raise ValueError("method must be 'quadrature' or 'monomial'")
        elif self.kind == "portfolio":
            n = len(p["weights"])
            if not (len(p["lower"]) == len(p["upper"]) == n):
                raise ValueError("portfolio weights and bounds must have equal length")
        elif self.kind == "risk-aggregation":
            ref = p.get("reference")
            if ref not in ("lognormal", "exponential", "uniform"):
                raise ValueError(f"unknown reference {ref!r}")
            for m in p.get("modes", []):
                name = m.split(":")[0]
                if name not in MODES + ("l1",):
                    raise ValueError(f"unknown matching mode {m!r}")
                if name == "distribution" and ref != "lognormal":
                    raise UnsupportedError("distribution matching needs the lognormal reference measure")
                if name == "l1":
                    float(m.split(":")[1])
        elif self.kind == "custom-wc":
            build_custom(p, validate_only=True)


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


@dataclass
class ResultTable:
    rows: list[str]
    columns: list[str]
    cells: dict[tuple[str, str], float | str]
    metadata: dict = field(default_factory=dict)
    row_axis: str = "r"

    def value(self, row, col) -> float | str:
        return self.cells[(str(row), str(col))]

    @staticmethod
    def format(v) -> str:
        return v if isinstance(v, str) else f"{v:.6f}"

    def to_csv(self) -> str:
        lines = [",".join([self.row_axis] + self.columns)]
        for r in self.rows:
            lines.append(",".join([r] + [self.format(self.cells.get((r, c), "")) for c in self.columns]))
        return "\n".join(lines) + "\n"

    def write(self, path) -> tuple[Path, Path]:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        side = path.with_suffix(path.suffix + ".json")
        side.write_text(json.dumps(self.metadata, sort_keys=True, indent=2) + "\n")
        return path, side

    def render(self) -> str:
        w = max([len(c) for c in self.columns] + [8])
        lw = max([len(r) for r in self.rows] + [len(self.row_axis), 6])
        head = f"{self.row_axis:>{lw}} " + " ".join(f"{c:>{w}}" for c in self.columns)
        out = [head]
        for r in self.rows:
            vals = []
            for c in self.columns:
                v = self.cells.get((r, c), "")
                vals.append(f"{v:>{w}}" if isinstance(v, str) else f"{v:>{w}.4f}")
            out.append(f"{r:>{lw}} " + " ".join(vals))
        return "\n".join(out)


def _marker(status: str) -> str:
    return INFEASIBLE if status == "infeasible" else INSTABLE


def _run_cells(fn, tasks: list, threads: int) -> list:
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def _metadata(cfg: ExperimentConfig, t0: float, extra: dict | None = None) -> dict:
    meta = {"kind": cfg.kind, "backend": cfg.backend, "solver_tolerance": cfg.tol, "seed": cfg.seed,
            "runtime_seconds": round(time.perf_counter() - t0, 3), "code_version": git_describe(),
            "config": json.loads(cfg.to_json()), "markers": {INSTABLE: "numerical instability",
                                                             INFEASIBLE: "infeasible"}}
    meta.update(extra or {})
    return meta


# ---------------------------------------------------------------------------
# polynomial optimization benchmark

def _bench_cell(task) -> float | str:
    name, r, R, method = task
    p = BENCH_FUNCTIONS[name]()
    dom, mu = DomainSpec.cube(2), MeasureSpec.lebesgue()
    try:
        res = heuristic_bound(p, dom, mu, r, R, "min", method)
    except InstabilityError:
        return INSTABLE
    if res.unstable or len(res.certificates) < R:
        return INSTABLE
    return res.value


def run_polyopt_bench(cfg: ExperimentConfig) -> ResultTable:
    """Upper bounds on the minimum of the test functions over [-1, 1]^2 with
    Lebesgue measure: the direct bound (R = 1) and the iterated heuristic."""
    cfg.validate()
    t0 = time.perf_counter()
    p = cfg.params
    pairs = [tuple(x) for x in p.get("pairs") or [(r, R) for R in cfg.R for r in cfg.r]]
    names = list(p["functions"])
    tasks = [(f, r, R, p.get("method", "quadrature")) for f in names for r, R in pairs]
    vals = _run_cells(_bench_cell, tasks, cfg.threads)
    cols = [f"r={r} R={R}" for r, R in pairs]
    cells = {}
    for (f, r, R, _), v in zip(tasks, vals):
        cells[(f, f"r={r} R={R}")] = v
    return ResultTable(names, cols, cells, _metadata(cfg, t0), row_axis="function")


# ---------------------------------------------------------------------------
# portfolio

def portfolio_set(ref, r: int, n: int) -> AmbiguitySet:
    cons = [moment_constraint(ref, r, tuple(int(i == j) for j in range(n)), 0.0) for i in range(n)]
    return ambiguity_set(ref, r, cons)


def _portfolio_cell(task) -> list[float | str]:
    params, r, Rs, backend, tol = task
    n = len(params["weights"])
    ev = portfolio_event(params["weights"], params["lower"], params["upper"], params["threshold"])
    Rmax = max(Rs)
    ref = QuadratureReference(DomainSpec.cube(n), MeasureSpec.uniform(), 2 * r * Rmax + 2)
    f = LinearFunctional.integral(event=ev, label="shortfall probability")
    try:
        run = wc_heuristic(f, portfolio_set(ref, r, n), Rmax, backend, "max", tol)
    except InstabilityError:
        return [INSTABLE] * len(Rs)
    out = []
    for R in Rs:
        if len(run.reports) >= R and run.reports[R - 1].ok:
            out.append(run.reports[R - 1].value)
        elif len(run.reports) >= R:
            out.append(_marker(run.reports[R - 1].status))
        else:
            out.append(INSTABLE)
    return out


def run_portfolio(cfg: ExperimentConfig) -> ResultTable:
    """Worst-case probability that a fixed portfolio's return falls below a
    threshold, given zero-mean factors on [-1, 1]^n with uniform reference.
    Columns ``R > 1`` re-solve under the reference pushed forward through the
    previous optimal density."""
    cfg.validate()
    t0 = time.perf_counter()
    Rs = sorted(set(int(R) for R in cfg.R))
    tasks = [(cfg.params, int(r), Rs, cfg.backend, cfg.tol) for r in cfg.r]
    vals = _run_cells(_portfolio_cell, tasks, cfg.threads)
    cols = [f"R={R}" for R in Rs]
    cells = {}
    for (_, r, _, _, _), row in zip(tasks, vals):
        for R, v in zip(Rs, row):
            cells[(str(r), f"R={R}")] = v
    return ResultTable([str(r) for r in cfg.r], cols, cells, _metadata(cfg, t0))


# ---------------------------------------------------------------------------
# risk aggregation

def risk_reference(params: dict, degree: int):
    kind = params["reference"]
    n = len(params["location"])
    if kind == "lognormal":
        return QuadratureReference(DomainSpec.orthant(n), MeasureSpec.lognormal(params["location"], params["scale"]),
                                   degree)
    if kind == "exponential":
        return QuadratureReference(DomainSpec.orthant(n), MeasureSpec.exponential(), degree)
    hi = float(params.get("upper", params["threshold"]))
    return QuadratureReference(DomainSpec.box([0.0] * n, [hi] * n), MeasureSpec.uniform(), degree)


def risk_set(params: dict, r: int, mode: str) -> AmbiguitySet:
    loc, sc = params["location"], params["scale"]
    n = len(loc)
    name = mode.split(":")[0]
    extra = 4 * r if name == "distribution" else 2
    ref = risk_reference(params, 2 * r + extra)
    aset = ambiguity_set(ref, r)
    if name.startswith("moment"):
        order = int(name[len("moment"):])
        for i in range(n):
            for k in range(1, order + 1):
                beta = tuple(k if j == i else 0 for j in range(n))
                aset.add(moment_constraint(ref, r, beta, lognormal_moment_1d(loc[i], sc[i], k)))
    elif name in ("histogram", "l1"):
        w = float(params["bin_width"])
        bins = [(w * j, w * (j + 1)) for j in range(int(params["bins"]))]
        targets = [[lognormal_bin(loc[i], sc[i], a, b) for a, b in bins] for i in range(n)]
        if name == "histogram":
            aset.add(histogram_matching(ref, r, list(range(n)), bins, targets, "exact"))
        else:
            aset.add(histogram_matching(ref, r, list(range(n)), bins, targets, "l1", float(mode.split(":")[1])))
    elif name == "distribution":
        for i in range(n):
            aset.add(marginal_matching(ref, r, i))
    return aset


def _risk_cell(task) -> float | str:
    params, r, mode, backend, tol = task
    n = len(params["location"])
    ev = Halfspace((1.0,) * n, float(params["threshold"]), ">=")
    try:
        aset = risk_set(params, r, mode)
        rep = wc_expectation(LinearFunctional.integral(event=ev, label="exceedance"), aset, backend, "max", tol)
    except (InstabilityError, InsufficientDegreeError):
        return INSTABLE
    return rep.value if rep.ok else _marker(rep.status)


def run_risk_aggregation(cfg: ExperimentConfig) -> ResultTable:
    """Worst-case probability that the sum of the losses exceeds the threshold."""
    cfg.validate()
    t0 = time.perf_counter()
    modes = list(cfg.params["modes"])
    tasks = [(cfg.params, int(r), m, cfg.backend, cfg.tol) for r in cfg.r for m in modes]
    vals = _run_cells(_risk_cell, tasks, cfg.threads)
    cells = {(str(r), m): v for (_, r, m, _, _), v in zip(tasks, vals)}
    return ResultTable([str(r) for r in cfg.r], modes, cells, _metadata(cfg, t0))


# ---------------------------------------------------------------------------
# custom worst-case problems

def parse_event(d):
    if d is None:
        return None
    if "halfspace" in d:
        h = d["halfspace"]
        return Halfspace(tuple(map(float, h["w"])), float(h["c"]), h.get("sense", ">="))
    if "slab" in d:
        s = d["slab"]
        a = float(s.get("a", "-inf"))
        b = float(s.get("b", "inf"))
        return AxisSlab(int(s["axis"]), a, b)
    if "all" in d:
        return intersect(*[parse_event(x) for x in d["all"]])
    raise ValueError(f"cannot parse event {d!r}")


def parse_polynomial(n: int, d) -> Polynomial:
    return Polynomial(n, {tuple(int(a) for a in alpha): float(c) for alpha, c in d})


def parse_domain(d) -> DomainSpec:
    kind = d["kind"]
    if kind == "box":
        return DomainSpec.box(d["lower"], d["upper"])
    if kind == "simplex":
        return DomainSpec.simplex(int(d["n"]))
    if kind == "ball":
        return DomainSpec.ball(int(d["n"]), d.get("center"), float(d.get("radius", 1.0)))
    if kind == "ellipsoid":
        return DomainSpec.ellipsoid(d["matrix"], d.get("center"))
    if kind == "orthant":
        return DomainSpec.orthant(int(d["n"]))
    if kind == "knapsack":
        return DomainSpec.knapsack(d["lower"], d["upper"], d["weights"], float(d["rhs"]), d.get("sense", "<="))
    raise ValueError(f"unknown domain kind {kind!r}")


def parse_measure(d) -> MeasureSpec:
    kind = d["kind"]
    if kind == "lognormal":
        return MeasureSpec.lognormal(d["location"], d["scale"])
    return MeasureSpec(kind)


def build_custom(params: dict, r: int = 1, validate_only: bool = False):
    """Ambiguity set and objective for a ``custom-wc`` config.

    ``params``: ``domain``, ``measure``, optional ``representation``
    (``quadrature`` or ``moments``), ``constraints`` (list of dicts with a
    ``type`` of moment | confidence | conditional-probability |
    conditional-moment | marginal | histogram), ``objective`` (``event`` or
    ``polynomial``) and ``sense``.
    """
    dom = parse_domain(params["domain"])
    mu = parse_measure(params["measure"])
    check_pair(dom, mu)
    n = dom.n
    obj = params.get("objective", {})
    if "event" in obj:
        objective = LinearFunctional.integral(event=parse_event(obj["event"]), label="probability")
        odeg = 0
    elif "polynomial" in obj:
        poly = parse_polynomial(n, obj["polynomial"])
        objective = LinearFunctional.integral(poly, parse_event(obj.get("given")), label="expectation")
        odeg = poly.degree
    else:
        raise ValueError("objective needs an 'event' or a 'polynomial'")
    cons = params.get("constraints", [])
    extra = odeg
    for c in cons:
        t = c.get("type")
        if t not in ("moment", "confidence", "conditional-probability", "conditional-moment", "marginal",
                     "histogram"):
            raise ValueError(f"unknown constraint type {t!r}")
        if t in ("moment", "conditional-moment"):
            extra = max(extra, sum(c["beta"]))
        if t == "marginal":
            if not dom.is_product():
                raise UnsupportedError("marginal matching needs a product domain")
            extra = max(extra, 2 * r)
        if t in ("confidence", "conditional-probability", "conditional-moment", "histogram") \
                and not dom.is_product() and dom.kind != "knapsack":
            raise UnsupportedError(f"events are not supported on a {dom.kind} domain")
    sense = params.get("sense", "max")
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    rep = params.get("representation", "quadrature")
    if rep not in ("quadrature", "moments"):
        raise ValueError("representation must be 'quadrature' or 'moments'")
    if validate_only:
        return None
    degree = 2 * r + extra
    ref = QuadratureReference(dom, mu, degree) if rep == "quadrature" else \
        MomentReference(build_table(dom, mu, degree))
    aset = ambiguity_set(ref, r)
    for c in cons:
        t = c["type"]
        rel = c.get("relation", "=")
        if t == "moment":
            rhs = c["rhs"]
            aset.add(moment_constraint(ref, r, c["beta"], tuple(rhs) if isinstance(rhs, list) else rhs, rel))
        elif t == "confidence":
            aset.add(confidence_constraint(ref, r, parse_event(c["event"]), c["gamma"], rel))
        elif t == "conditional-probability":
            aset.add(conditional_probability_constraint(ref, r, parse_event(c["given"]), parse_event(c["event"]),
                                                        float(c["gamma"]), rel))
        elif t == "conditional-moment":
            aset.add(conditional_moment_constraint(ref, r, c["beta"], parse_event(c["event"]),
                                                   float(c["gamma"]), rel))
        elif t == "marginal":
            aset.add(marginal_matching(ref, r, int(c["axis"])))
        elif t == "histogram":
            aset.add(histogram_matching(ref, r, c["axes"], [tuple(b) for b in c["bins"]], c["targets"],
                                        c.get("mode", "exact"), c.get("tol")))
    return aset, objective, sense


def _custom_cell(task) -> float | str:
    params, r, backend, tol = task
    try:
        aset, objective, sense = build_custom(params, r)
        rep = wc_expectation(objective, aset, backend, sense, tol)
    except (InstabilityError, InsufficientDegreeError):
        return INSTABLE
    return rep.value if rep.ok else _marker(rep.status)


def run_custom(cfg: ExperimentConfig) -> ResultTable:
    cfg.validate()
    t0 = time.perf_counter()
    tasks = [(cfg.params, int(r), cfg.backend, cfg.tol) for r in cfg.r]
    vals = _run_cells(_custom_cell, tasks, cfg.threads)
    cells = {(str(r), "value"): v for (_, r, _, _), v in zip(tasks, vals)}
    return ResultTable([str(r) for r in cfg.r], ["value"], cells, _metadata(cfg, t0))


RUNNERS = {"polyopt-bench": run_polyopt_bench, "portfolio": run_portfolio,
           "risk-aggregation": run_risk_aggregation, "custom-wc": run_custom}


def run(cfg: ExperimentConfig) -> ResultTable:
    return RUNNERS[cfg.kind](cfg)


__all__ = ["ExperimentConfig", "ResultTable", "run", "run_polyopt_bench", "run_portfolio",
           "run_risk_aggregation", "run_custom", "matyas", "motzkin", "portfolio_event", "risk_set",
           "build_custom", "KINDS", "INSTABLE", "INFEASIBLE"]
