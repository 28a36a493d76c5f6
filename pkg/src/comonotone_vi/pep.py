"""Worst-case search for the proximal point method over rho-negative comonotone operators.

The Gram variable is indexed by the basis ``(x*, x^0, g^0, g^1, ..., g^N)``;
iterates are expanded as ``x^k = x^0 - gamma (g^1 + ... + g^k)`` and the
solution value ``g* = 0`` is eliminated.  The objective is the last-step
residual ``||x^N - x^{N-1}||^2 = gamma^2 ||g^N||^2``; every report states
whether it is in step units (``dx``) or operator units (``F``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import sdp
from .bounds import RegimeError, pp_bound
from .interpolation import InterpolationDataset, check_interpolable
from .operators import make_pp_worst_case

RANK_REL_TOL = 1e-6
HEURISTIC_DEFLATION = 1e-6
# The deflated min-trace problem is nearly degenerate: plain splitting crawls,
# so it runs with Anderson acceleration and a shorter default budget.
HEURISTIC_MAX_ITER = 20_000
HEURISTIC_ANDERSON = 20
HEURISTIC_SIGMA = 10.0


@dataclass(frozen=True)
class PepSpec:
    N: int
    gamma: float
    rho: float
    R: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise RegimeError(f"N must be an integer >= 1, got {self.N}")
        if self.rho < 0:
            raise RegimeError(f"rho must be >= 0, got {self.rho}")
        if not self.gamma > 2 * self.rho:
            raise RegimeError(f"gamma > 2*rho violated: gamma={self.gamma}, 2*rho={2 * self.rho}")
        if not self.R > 0:
            raise RegimeError(f"R must be positive, got {self.R}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def order(self) -> int:
        return self.N + 3


class PepBasis:
    """Coefficient vectors of iterates and operator values in the Gram basis."""

    def __init__(self, spec: PepSpec):
        self.spec = spec
        n = spec.order
        eye = np.eye(n)
        self.x_star = eye[0]
        self.g_star = np.zeros(n)
        self.x = [eye[1]]
        self.g = [eye[2]]
        for k in range(1, spec.N + 1):
            self.g.append(eye[2 + k])
            self.x.append(self.x[-1] - spec.gamma * self.g[-1])

    def points(self):
        """Labelled (x, g) coefficient pairs: the solution first, then k = 0..N."""
        yield "*", self.x_star, self.g_star
        for k in range(self.spec.N + 1):
            yield k, self.x[k], self.g[k]


def _sym_outer(a, b):
    return 0.5 * (np.outer(a, b) + np.outer(b, a))


def interpolation_matrix(dx, dg, rho):
    """Matrix ``M`` with ``Tr(M G) = -<dg, dx> - rho ||dg||^2`` (feasible iff <= 0)."""
    return -_sym_outer(dg, dx) - rho * np.outer(dg, dg)


def build_pp_pep(spec: PepSpec) -> sdp.SDPProblem:
    basis = PepBasis(spec)
    pts = list(basis.points())
    ineq = []
    for (_, xi, gi), (_, xj, gj) in combinations(pts, 2):
        ineq.append((interpolation_matrix(xi - xj, gi - gj, spec.rho), 0.0))
    e0 = basis.x[0] - basis.x_star
    ineq.append((np.outer(e0, e0), spec.R**2))
    step = basis.x[-1] - basis.x[-2]
    # Every constraint is translation invariant; pinning x* = 0 removes that
    # recession direction without changing the optimal value.
    gauge = np.outer(basis.x_star, basis.x_star)
    return sdp.SDPProblem(
        objective=np.outer(step, step), sense=sdp.Sense.MAX, inequalities=ineq, equalities=[(gauge, 0.0)]
    )


def gram_from_vectors(spec: PepSpec, x_star, x0, gvals) -> np.ndarray:
    """Gram matrix of an explicit run given ``x*``, ``x^0`` and ``g^0..g^N``."""
    cols = [np.asarray(x_star, float), np.asarray(x0, float)] + [np.asarray(g, float) for g in gvals]
    if len(cols) != spec.order:
        raise ValueError(f"expected {spec.order - 2} operator values, got {len(gvals)}")
    v = np.column_stack(cols)
    return v.T @ v


@dataclass
class Reconstruction:
    points: list
    gvals: list
    x_star: np.ndarray
    rank: int

    def dataset(self) -> InterpolationDataset:
        pairs = [(self.x_star, np.zeros_like(self.x_star))] + list(zip(self.points, self.gvals))
        return InterpolationDataset(pairs=pairs, star_index=0)


@dataclass
class PepResult:
    spec: PepSpec
    value: float
    gram: sdp.GramSolution
    reconstructed: Reconstruction | None = None
    unit: str = "dx"
    notes: list = field(default_factory=list)

    @property
    def value_F(self) -> float:
        return self.value / self.spec.gamma**2


def reconstruct(spec: PepSpec, g: np.ndarray, rel_tol: float = RANK_REL_TOL) -> Reconstruction:
    v, r = sdp.low_rank_factor(g, rel_tol)
    if r == 0:
        v = np.zeros((1, spec.order))
    basis = PepBasis(spec)
    pts = [v @ c for c in basis.x]
    gv = [v @ c for c in basis.g]
    return Reconstruction(points=pts, gvals=gv, x_star=v @ basis.x_star, rank=r)


def solve_pp_pep(spec: PepSpec, tol: float = sdp.DEFAULT_TOL, max_iter: int = sdp.DEFAULT_MAX_ITER) -> PepResult:
    sol = sdp.solve(build_pp_pep(spec), tol=tol, max_iter=max_iter)
    res = PepResult(spec=spec, value=sol.value, gram=sol)
    if not sol.optimal:
        res.notes.append(f"solver status {sol.status.value} after {sol.iterations} iterations")
    res.reconstructed = reconstruct(spec, sol.G)
    return res


def trace_heuristic(
    spec: PepSpec,
    v_star: float,
    deflation: float = HEURISTIC_DEFLATION,
    tol: float = sdp.DEFAULT_TOL,
    max_iter: int = HEURISTIC_MAX_ITER,
) -> PepResult:
    """Minimum-trace Gram matrix among those attaining ``(1 - deflation) * v_star``."""
    base = build_pp_pep(spec)
    target = (1.0 - deflation) * v_star
    problem = sdp.SDPProblem(
        objective=np.eye(spec.order),
        sense=sdp.Sense.MIN,
        inequalities=base.inequalities,
        equalities=list(base.equalities) + [(base.objective, target)],
    )
    sol = sdp.solve(
        problem, tol=tol, max_iter=max_iter, sigma0=HEURISTIC_SIGMA, adapt=False, anderson=HEURISTIC_ANDERSON
    )
    res = PepResult(spec=spec, value=base.value(sol.G), gram=sol)
    if sol.status is sdp.Status.INFEASIBLE:
        res.notes.append("trace heuristic infeasible: v_star above the attainable optimum")
        return res
    if not sol.optimal:
        res.notes.append(f"solver status {sol.status.value} after {sol.iterations} iterations")
    res.reconstructed = reconstruct(spec, sol.G)
    return res


def trajectory_invariants(points, gvals, x_star, rho, skip_first: bool = True) -> dict:
    """Per-iterate norm ratio ``rho ||F(x)|| / ||x - x*||`` and angle cosine.

    Iterates with a vanishing residual or distance are skipped and listed.
    """
    ratio, cosine, skipped = [], [], []
    start = 1 if skip_first else 0
    for k in range(start, len(points)):
        d = np.asarray(points[k]) - np.asarray(x_star)
        g = np.asarray(gvals[k])
        nd, ng = np.linalg.norm(d), np.linalg.norm(g)
        if nd < 1e-12 or ng < 1e-12:
            skipped.append(k)
            continue
        ratio.append(rho * ng / nd)
        cosine.append(-float(d @ g) / (nd * ng))
    return {
        "norm_ratio": ratio,
        "cosine": cosine,
        "std_norm_ratio": float(np.std(ratio)) if ratio else float("nan"),
        "std_cosine": float(np.std(cosine)) if cosine else float("nan"),
        "skipped": skipped,
    }


def predicted_invariant(spec: PepSpec) -> float:
    return spec.rho / math.sqrt(spec.N * spec.gamma * (spec.gamma - 2 * spec.rho))


def analyze_trajectory(result: PepResult) -> dict:
    rec = result.reconstructed
    if rec is None:
        raise ValueError("result carries no reconstruction")
    out = trajectory_invariants(rec.points, rec.gvals, rec.x_star, result.spec.rho)
    out["predicted"] = predicted_invariant(result.spec)
    return out


def analytic_value(spec: PepSpec) -> float:
    """Last-step residual (dx units) of the scaled-rotation instance, ``gamma^2 * Eq.8 form``."""
    return spec.gamma**2 * pp_bound("lower_bound", spec.gamma, spec.rho, spec.R, spec.N)


def compare_with_analytic(spec: PepSpec, tol: float = sdp.DEFAULT_TOL, result: PepResult | None = None) -> dict:
    make_pp_worst_case(spec.rho, spec.gamma, spec.N)  # raises on the N precondition
    res = result if result is not None else solve_pp_pep(spec, tol=tol)
    analytic = analytic_value(spec)
    ratio = res.value / analytic
    return {
        "N": spec.N,
        "gamma": spec.gamma,
        "rho": spec.rho,
        "R": spec.R,
        "unit": "dx",
        "pep_value": res.value,
        "analytic_value": analytic,
        "ratio": ratio,
        "upper_bound": pp_bound("last_iterate", spec.gamma, spec.rho, spec.R, spec.N),
        "flag_below_analytic": bool(ratio < 1.0),
        "solver_status": res.gram.status.value,
        "solver_tol": tol,
        "rank": res.reconstructed.rank if res.reconstructed else None,
    }


SWEEP_CSV_COLUMNS = ("N", "gamma", "rho", "pep_value", "analytic_value", "ratio", "rank")


def result_to_dict(result: PepResult, analysis: dict | None = None) -> dict:
    s = result.spec
    rec = result.reconstructed
    return {
        "spec": {"N": s.N, "gamma": s.gamma, "rho": s.rho, "R": s.R},
        "unit": result.unit,
        "value": result.value,
        "value_F": result.value_F,
        "rank": rec.rank if rec else None,
        "gram": sdp.solution_to_dict(result.gram),
        "reconstructed": None
        if rec is None
        else {
            "x_star": rec.x_star.tolist(),
            "points": [p.tolist() for p in rec.points],
            "gvals": [g.tolist() for g in rec.gvals],
            "rank": rec.rank,
        },
        "analysis": analysis,
        "notes": list(result.notes),
    }


def result_from_dict(d: dict) -> PepResult:
    s = d["spec"]
    spec = PepSpec(int(s["N"]), float(s["gamma"]), float(s["rho"]), float(s.get("R", 1.0)))
    rec = d.get("reconstructed")
    return PepResult(
        spec=spec,
        value=float(d["value"]),
        gram=sdp.solution_from_dict(d["gram"]),
        reconstructed=None
        if rec is None
        else Reconstruction(
            points=[np.asarray(p, float) for p in rec["points"]],
            gvals=[np.asarray(g, float) for g in rec["gvals"]],
            x_star=np.asarray(rec["x_star"], float),
            rank=int(rec["rank"]),
        ),
        unit=d.get("unit", "dx"),
        notes=list(d.get("notes", [])),
    )
