"""Small dense semidefinite programs solved by operator splitting.

Problems have the form::

    max (or min)  <C, G>
    s.t.          <A_i, G> <= b_i     (inequalities)
                  <E_j, G>  = d_j     (equalities)
                  G PSD

Every linear constraint receives a slack variable; the affine set
``A svec(G) + s = b`` is handled by a precomputed projection and the cone
``PSD x R_+ x {0}`` by an eigen-decomposition, so the PSD projection is the
only eigen-step per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.linalg as sla

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 200_000


class Sense(str, Enum):
    MAX = "max"
    MIN = "min"


class Status(str, Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


class EigenFailure(RuntimeError):
    """Raised when a symmetric eigen-decomposition does not converge."""


def symmetrize(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return 0.5 * (m + m.T)


def svec(m: np.ndarray) -> np.ndarray:
    """Upper triangle with off-diagonals scaled by sqrt(2): <A, B> = svec(A) . svec(B)."""
    n = m.shape[0]
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return m[iu] * scale


def smat(v: np.ndarray, n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, 1.0 / np.sqrt(2.0))
    m = np.zeros((n, n))
    m[iu] = v * scale
    return m + np.triu(m, 1).T


def _eigh(m: np.ndarray):
    try:
        return np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc


def project_psd(m) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped to zero)."""
    m = symmetrize(m)
    w, v = _eigh(m)
    if np.all(w >= 0):
        return m
    w = np.clip(w, 0.0, None)
    return symmetrize((v * w) @ v.T)


def low_rank_factor(g, rel_tol: float = 1e-6) -> tuple[np.ndarray, int]:
    """Factor a PSD matrix as ``V.T @ V`` keeping eigenvalues above ``rel_tol * lambda_max``.

    Returns ``(V, r)`` with ``V`` of shape ``(r, n)``; column ``j`` of ``V`` is the
    ``j``-th vector whose Gram matrix is ``g``.
    """
    g = symmetrize(g)
    n = g.shape[0]
    w, v = _eigh(g)
    lam_max = max(w[-1], 0.0)
    if lam_max == 0.0:
        return np.zeros((0, n)), 0
    keep = w > rel_tol * lam_max
    w, v = w[keep][::-1], v[:, keep][:, ::-1]
    factor = np.sqrt(w)[:, None] * v.T
    return factor, int(keep.sum())


@dataclass(frozen=True)
class SDPProblem:
    objective: np.ndarray
    sense: Sense = Sense.MAX
    inequalities: Sequence[tuple[np.ndarray, float]] = ()
    equalities: Sequence[tuple[np.ndarray, float]] = ()

    def __post_init__(self):
        obj = symmetrize(self.objective)
        n = obj.shape[0]
        ineq = tuple((symmetrize(a), float(b)) for a, b in self.inequalities)
        eq = tuple((symmetrize(a), float(b)) for a, b in self.equalities)
        for a, _ in ineq + eq:
            if a.shape != (n, n):
                raise ValueError(f"constraint matrix of shape {a.shape} does not match order {n}")
        object.__setattr__(self, "objective", obj)
        object.__setattr__(self, "sense", Sense(self.sense))
        object.__setattr__(self, "inequalities", ineq)
        object.__setattr__(self, "equalities", eq)

    @property
    def order(self) -> int:
        return self.objective.shape[0]

    def value(self, g: np.ndarray) -> float:
        return float(np.sum(self.objective * g))

    def constraint_values(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ineq = np.array([np.sum(a * g) for a, _ in self.inequalities])
        eq = np.array([np.sum(a * g) for a, _ in self.equalities])
        return ineq, eq

    def max_violation(self, g: np.ndarray) -> float:
        """Largest violation of the linear constraints and of PSD-ness at ``g``."""
        ineq, eq = self.constraint_values(g)
        viol = [0.0, max(0.0, -float(np.linalg.eigvalsh(symmetrize(g))[0]))]
        if ineq.size:
            viol.append(float(np.max(ineq - [b for _, b in self.inequalities])))
        if eq.size:
            viol.append(float(np.max(np.abs(eq - [d for _, d in self.equalities]))))
        return max(viol)


@dataclass
class GramSolution:
    G: np.ndarray
    value: float
    status: Status
    iterations: int
    primal_residual: float
    dual_residual: float
    dual_value: float
    dual_psd_violation: float
    multipliers: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def solve(
    problem: SDPProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    relaxation: float = 1.6,
    check_every: int = 25,
    sigma0: float = 1.0,
    adapt: bool = True,
    anderson: int = 0,
) -> GramSolution:
    """Solve ``problem`` by ADMM.

    Termination requires the relative primal residual, dual residual and
    duality gap all below ``tol``. Runs are deterministic: no randomness is
    involved and the iteration starts from zero.  ``anderson > 0`` enables
    safeguarded Anderson acceleration with that memory, which helps on
    degenerate problems whose plain iteration crawls.
    """
    n = problem.order
    nv = n * (n + 1) // 2
    rows = list(problem.inequalities) + list(problem.equalities)
    m_in, m = len(problem.inequalities), len(rows)

    sign = -1.0 if problem.sense is Sense.MAX else 1.0
    c_raw = sign * svec(problem.objective)
    if m:
        a = np.array([svec(mat) for mat, _ in rows])
        b = np.array([rhs for _, rhs in rows])
    else:
        a = np.zeros((0, nv))
        b = np.zeros(0)
    # Unit-norm constraint rows and objective; undone when reporting multipliers.
    row_scale = 1.0 / np.maximum(np.linalg.norm(a, axis=1), 1e-300) if m else np.zeros(0)
    a_s, b_s = a * row_scale[:, None], b * row_scale
    c_scale = max(np.linalg.norm(c_raw), 1e-300)
    c = np.concatenate([c_raw / c_scale, np.zeros(m)])
    at = np.hstack([a_s, np.eye(m)])  # A svec(G) + s = b

    # The affine projection does not depend on the penalty, so it is factored once.
    chol = sla.cho_factor(at @ at.T) if m else None

    def affine_project(v):
        if not m:
            return v, np.zeros(0)
        w = sla.cho_solve(chol, at @ v - b_s)
        return v - at.T @ w, w

    def cone_project(v):
        out = v.copy()
        out[:nv] = svec(project_psd(smat(v[:nv], n)))
        out[nv : nv + m_in] = np.maximum(out[nv : nv + m_in], 0.0)
        out[nv + m_in :] = 0.0
        return out

    def separates(d):
        """True when ``d`` yields ``y = A^T w`` in the polar cone with ``b . w > 0``."""
        nd = np.linalg.norm(d)
        if not m or nd < 1e-9:
            return False
        w = sla.cho_solve(chol, at @ d)
        y = at.T @ w
        if np.linalg.norm(y - d) > 1e-3 * nd:
            return False
        eps = 1e-6 * nd
        for sgn in (1.0, -1.0):
            ys = sgn * y
            if (
                b_s @ (sgn * w) > eps
                and np.all(ys[nv : nv + m_in] <= eps)
                and np.linalg.eigvalsh(smat(ys[:nv], n))[-1] <= eps
            ):
                return True
        return False

    def admm_step(z, u, sigma):
        x, w = affine_project(z - u - c / sigma)
        x_hat = relaxation * x + (1.0 - relaxation) * z
        z_new = cone_project(x_hat + u)
        return x, w, z_new, u + x_hat - z_new

    dim = nv + m
    scale_b = 1.0 + np.linalg.norm(b_s)
    sigma = sigma0
    z = np.zeros(dim)
    u = np.zeros(dim)
    cur = admm_step(z, u, sigma)
    status = Status.MAX_ITER
    infeasible_hits = 0
    r_prim = r_dual = np.inf
    lam = np.zeros(m)
    since_adapt = 0
    hist_s, hist_r = [], []
    it = 0

    for it in range(1, max_iter + 1):
        x, w, z_new, u_new = cur

        if it % check_every == 0 or it == max_iter:
            u_step = u_new - u
            lam = sigma * w
            r_prim = np.linalg.norm(x - z_new) / (1.0 + max(np.linalg.norm(x), np.linalg.norm(z_new)))
            r_dual = sigma * np.linalg.norm(z_new - z) / (1.0 + sigma * np.linalg.norm(u_new))
            primal_obj = float(c @ z_new)
            dual_obj = float(-b_s @ lam)
            gap = abs(primal_obj - dual_obj) / (1.0 + abs(primal_obj) + abs(dual_obj))
            feas = np.linalg.norm(at @ z_new - b_s) / scale_b
            if max(r_prim, feas) < tol and r_dual < tol and gap < tol:
                status = Status.OPTIMAL
                break

            # On infeasible problems the dual keeps moving by a fixed increment, which
            # then separates the affine set from the cone.
            if separates(u_step):
                infeasible_hits += 1
                if infeasible_hits >= 2:
                    status = Status.INFEASIBLE
                    break
            else:
                infeasible_hits = 0

            # Rare, bounded penalty updates; frequent ones stall the dual.
            since_adapt += check_every
            if adapt and since_adapt >= 50 * check_every:
                since_adapt = 0
                factor = 1.0
                if r_prim > 50.0 * r_dual and sigma < 1e4:
                    factor = 4.0
                elif r_dual > 50.0 * r_prim and sigma > 1e-4:
                    factor = 0.25
                if factor != 1.0:
                    sigma *= factor
                    z, u = z_new, u_new / factor
                    hist_s, hist_r = [], []
                    cur = admm_step(z, u, sigma)
                    continue

        if anderson:
            state = np.concatenate([z, u])
            res = np.concatenate([z_new, u_new]) - state
            hist_s.append(state)
            hist_r.append(res)
            if len(hist_s) > anderson + 1:
                hist_s.pop(0)
                hist_r.pop(0)
            if len(hist_s) > 1:
                # Type-II Anderson extrapolation, kept only if it shrinks the fixed-point residual.
                d_r = np.diff(np.array(hist_r), axis=0).T
                d_s = np.diff(np.array(hist_s), axis=0).T
                h = d_r.T @ d_r
                coef = np.linalg.lstsq(h + 1e-8 * np.trace(h) * np.eye(len(h)), d_r.T @ res, rcond=None)[0]
                cand = state + res - (d_s + d_r) @ coef
                cz, cu = cand[:dim], cand[dim:]
                trial = admm_step(cz, cu, sigma)
                if np.linalg.norm(np.concatenate([trial[2] - cz, trial[3] - cu])) <= np.linalg.norm(res):
                    z, u, cur = cz, cu, trial
                    continue
        z, u = z_new, u_new
        cur = admm_step(z, u, sigma)

    z = cur[2]
    lam_raw = lam * row_scale * c_scale if m else lam
    g = project_psd(smat(z[:nv], n))
    nu = lam_raw
    slack_matrix = smat(c_raw + a.T @ nu, n) if m else smat(c_raw, n)
    dual_psd = max(0.0, -float(np.linalg.eigvalsh(slack_matrix)[0]))
    dual_value = float(b @ nu) if problem.sense is Sense.MAX else float(-b @ nu)
    return GramSolution(
        G=g,
        value=problem.value(g),
        status=status,
        iterations=it,
        primal_residual=float(r_prim),
        dual_residual=float(r_dual),
        dual_value=dual_value,
        dual_psd_violation=dual_psd,
        multipliers=nu,
    )


def problem_to_dict(problem: SDPProblem) -> dict:
    return {
        "order": problem.order,
        "sense": problem.sense.value,
        "objective": problem.objective.tolist(),
        "inequalities": [{"matrix": a.tolist(), "rhs": b} for a, b in problem.inequalities],
        "equalities": [{"matrix": a.tolist(), "rhs": b} for a, b in problem.equalities],
    }


def problem_from_dict(d: dict) -> SDPProblem:
    return SDPProblem(
        objective=np.asarray(d["objective"], dtype=float),
        sense=Sense(d.get("sense", "max")),
        inequalities=[(np.asarray(r["matrix"], dtype=float), r["rhs"]) for r in d.get("inequalities", [])],
        equalities=[(np.asarray(r["matrix"], dtype=float), r["rhs"]) for r in d.get("equalities", [])],
    )


def solution_to_dict(sol: GramSolution) -> dict:
    return {
        "G": sol.G.tolist(),
        "value": sol.value,
        "status": sol.status.value,
        "iterations": sol.iterations,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "dual_value": sol.dual_value,
        "dual_psd_violation": sol.dual_psd_violation,
        "multipliers": np.asarray(sol.multipliers).tolist(),
    }


def solution_from_dict(d: dict) -> GramSolution:
    return GramSolution(
        G=np.asarray(d["G"], dtype=float),
        value=float(d["value"]),
        status=Status(d["status"]),
        iterations=int(d["iterations"]),
        primal_residual=float(d["primal_residual"]),
        dual_residual=float(d["dual_residual"]),
        dual_value=float(d["dual_value"]),
        dual_psd_violation=float(d["dual_psd_violation"]),
        multipliers=np.asarray(d.get("multipliers", []), dtype=float),
    )
