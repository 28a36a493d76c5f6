"""Proximal point, extragradient and optimistic gradient iterations with exact traces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .operators import (
    SINGULAR_RCOND,
    CallableOperator,
    LinearOperator,
    PreconditionError,
    SingularResolvent,
    as_point,
    newton_resolvent,
)

COORD_LIMIT = 1e150
GROWTH_LIMIT = 1e12
METHODS = ("pp", "eg", "og")


@dataclass(frozen=True)
class StepSizes:
    gamma1: float
    gamma2: float | None = None

    def __post_init__(self):
        g2 = self.gamma1 if self.gamma2 is None else self.gamma2
        for name, g in (("gamma1", self.gamma1), ("gamma2", g2)):
            if not (math.isfinite(g) and g > 0):
                raise PreconditionError(f"{name} > 0 required, got {g}")
        object.__setattr__(self, "gamma1", float(self.gamma1))
        object.__setattr__(self, "gamma2", float(g2))

    @property
    def equal(self) -> bool:
        return self.gamma1 == self.gamma2


@dataclass
class Trace:
    """Iterates of one run.

    ``x`` holds ``x^0..x^N`` and ``f_x`` the operator at each of them.  For EG and
    OG, ``x_tilde[k]`` is the extrapolated point used to move from ``x^k`` to
    ``x^{k+1}``.  A diverged run stops at the first iterate tripping the guard.
    """

    method: str
    steps: StepSizes
    x: list
    f_x: list
    x_tilde: list = field(default_factory=list)
    f_x_tilde: list = field(default_factory=list)
    diverged: bool = False
    failure: dict | None = None
    reference: np.ndarray | None = None

    @property
    def N(self) -> int:
        return len(self.x) - 1

    @property
    def dim(self) -> int:
        return len(self.x[0])


def _eval(op, x):
    return op(x)


def _guard(x, x0_dist, reference) -> str | None:
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > COORD_LIMIT:
        return f"coordinate magnitude above {COORD_LIMIT:g}"
    d = np.linalg.norm(x - reference) if reference is not None else np.linalg.norm(x)
    if x0_dist > 0 and d > GROWTH_LIMIT * x0_dist:
        return f"distance grew beyond {GROWTH_LIMIT:g} times its initial value"
    return None


def _start(op, x0, N, reference):
    if int(N) != N or N < 0:
        raise PreconditionError(f"N must be a non-negative integer, got {N}")
    x0 = as_point(x0, op.dim)
    ref = None if reference is None else as_point(reference, op.dim)
    d0 = np.linalg.norm(x0 - ref) if ref is not None else np.linalg.norm(x0)
    return x0, ref, d0


def run_pp(op, x0, gamma: float, N: int, reference=None, newton_tol: float = 1e-10, newton_max_iter: int = 100) -> Trace:
    """``N`` steps of ``x^{k+1} = x^k - gamma F(x^{k+1})``.

    Linear operators use one LU factorization of ``I + gamma F``; other operators
    solve each implicit step by damped Newton.
    """
    steps = StepSizes(gamma)
    x0, ref, d0 = _start(op, x0, N, reference)
    tr = Trace("pp", steps, [x0], [_eval(op, x0)], reference=ref)

    if isinstance(op, LinearOperator):
        lhs = np.eye(op.dim) + gamma * op.full_matrix
        rcond = 1.0 / np.linalg.cond(lhs)
        if not rcond >= SINGULAR_RCOND:
            raise SingularResolvent(
                f"I + gamma*F is singular at step 0 (reciprocal condition {rcond:.3g}); "
                f"the implicit step is undefined, e.g. gamma = rho for F = -x/rho",
                step=0,
                rcond=float(rcond),
            )
        lu = sla.lu_factor(lhs)

        def implicit(x, k):
            return sla.lu_solve(lu, x)
    else:

        def implicit(x, k):
            try:
                return newton_resolvent(op, gamma, x, tol=newton_tol, max_iter=newton_max_iter)
            except SingularResolvent as exc:
                raise SingularResolvent(f"step {k}: {exc}", step=k) from exc

    x = x0
    for k in range(N):
        x = implicit(x, k)
        reason = _guard(x, d0, ref)
        if reason:
            tr.diverged, tr.failure = True, {"step": k + 1, "reason": reason}
            break
        tr.x.append(x)
        tr.f_x.append(_eval(op, x))
    return tr


def run_eg(op, x0, steps: StepSizes, N: int, reference=None) -> Trace:
    """``x~ = x - g1 F(x)``, ``x+ = x - g2 F(x~)``."""
    x0, ref, d0 = _start(op, x0, N, reference)
    fx = _eval(op, x0)
    tr = Trace("eg", steps, [x0], [fx], reference=ref)
    x = x0
    for k in range(N):
        xt = x - steps.gamma1 * fx
        fxt = _eval(op, xt)
        x = x - steps.gamma2 * fxt
        reason = _guard(x, d0, ref)
        if reason:
            tr.diverged, tr.failure = True, {"step": k + 1, "reason": reason}
            break
        fx = _eval(op, x)
        tr.x_tilde.append(xt)
        tr.f_x_tilde.append(fxt)
        tr.x.append(x)
        tr.f_x.append(fx)
    return tr


def run_og(op, x0, steps: StepSizes, N: int, reference=None) -> Trace:
    """``x~^k = x^k - g1 F(x~^{k-1})``, ``x^{k+1} = x^k - g2 F(x~^k)``, with ``x~^0 = x^0``.

    Only one new operator value per step drives the iteration; ``F(x^k)`` is
    also recorded for residual reporting.
    """
    x0, ref, d0 = _start(op, x0, N, reference)
    tr = Trace("og", steps, [x0], [_eval(op, x0)], reference=ref)
    x = x0
    f_prev = np.zeros_like(x0)
    for k in range(N):
        xt = x - steps.gamma1 * f_prev
        fxt = _eval(op, xt)
        x = x - steps.gamma2 * fxt
        reason = _guard(x, d0, ref)
        if reason:
            tr.diverged, tr.failure = True, {"step": k + 1, "reason": reason}
            break
        tr.x_tilde.append(xt)
        tr.f_x_tilde.append(fxt)
        tr.x.append(x)
        tr.f_x.append(_eval(op, x))
        f_prev = fxt
    return tr


def run(method: str, op, x0, steps: StepSizes, N: int, reference=None) -> Trace:
    if method == "pp":
        return run_pp(op, x0, steps.gamma1, N, reference)
    if method == "eg":
        return run_eg(op, x0, steps, N, reference)
    if method == "og":
        return run_og(op, x0, steps, N, reference)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def residual_series(trace: Trace, reference=None) -> dict:
    """Per-iterate ``||F(x^k)||^2``, ``||x^k - x^{k-1}||^2`` (nan at k=0) and distance to a reference."""
    ref = trace.reference if reference is None else as_point(reference, trace.dim)
    xs = np.asarray(trace.x)
    sq_f = np.sum(np.asarray(trace.f_x) ** 2, axis=1)
    sq_step = np.full(len(xs), np.nan)
    sq_step[1:] = np.sum(np.diff(xs, axis=0) ** 2, axis=1)
    dist = np.linalg.norm(xs - ref, axis=1) if ref is not None else np.full(len(xs), np.nan)
    out = {"k": np.arange(len(xs)), "sq_norm_F": sq_f, "sq_step": sq_step, "dist_to_ref": dist}
    if trace.f_x_tilde:
        out["sq_norm_F_tilde"] = np.sum(np.asarray(trace.f_x_tilde) ** 2, axis=1)
    return out


def validate_trace(trace: Trace, op, rtol: float = 1e-10) -> list[str]:
    """Re-check every update rule of a trace; returns a list of discrepancies (empty if consistent)."""
    problems = []
    g1, g2 = trace.steps.gamma1, trace.steps.gamma2

    def close(a, b, what):
        scale = max(1.0, float(np.linalg.norm(a)), float(np.linalg.norm(b)))
        if np.linalg.norm(np.asarray(a) - np.asarray(b)) > rtol * scale:
            problems.append(what)

    for k, (x, f) in enumerate(zip(trace.x, trace.f_x)):
        close(op(x), f, f"F(x^{k}) mismatch")
    for k in range(trace.N):
        if trace.method == "pp":
            close(trace.x[k + 1] + g1 * op(trace.x[k + 1]), trace.x[k], f"implicit step {k} mismatch")
            continue
        close(op(trace.x_tilde[k]), trace.f_x_tilde[k], f"F(x~^{k}) mismatch")
        close(trace.x[k] - g2 * trace.f_x_tilde[k], trace.x[k + 1], f"update {k} mismatch")
        if trace.method == "eg":
            close(trace.x[k] - g1 * trace.f_x[k], trace.x_tilde[k], f"extrapolation {k} mismatch")
        else:
            prev = trace.f_x_tilde[k - 1] if k else np.zeros(trace.dim)
            close(trace.x[k] - g1 * prev, trace.x_tilde[k], f"extrapolation {k} mismatch")
    return problems


TRACE_CSV_COLUMNS = ("k", "sq_norm_F", "sq_step", "dist_to_ref")


def trace_to_dict(trace: Trace) -> dict:
    res = residual_series(trace)
    return {
        "method": trace.method,
        "steps": {"gamma1": trace.steps.gamma1, "gamma2": trace.steps.gamma2},
        "points": [np.asarray(p).tolist() for p in trace.x],
        "residuals": {k: np.asarray(v).tolist() for k, v in res.items()},
        "diverged": trace.diverged,
        "f_x": [np.asarray(p).tolist() for p in trace.f_x],
        "x_tilde": [np.asarray(p).tolist() for p in trace.x_tilde],
        "f_x_tilde": [np.asarray(p).tolist() for p in trace.f_x_tilde],
        "failure": trace.failure,
        "reference": None if trace.reference is None else np.asarray(trace.reference).tolist(),
    }


def trace_from_dict(d: dict) -> Trace:
    if d.get("method") not in METHODS:
        raise ValueError(f"unknown trace method {d.get('method')!r}")
    steps = StepSizes(float(d["steps"]["gamma1"]), float(d["steps"]["gamma2"]))
    arr = lambda key: [np.asarray(p, dtype=float) for p in d.get(key, [])]  # noqa: E731
    xs = arr("points")
    if not xs:
        raise ValueError("trace has no points")
    f_x = arr("f_x")
    if len(f_x) != len(xs):
        raise ValueError("trace needs one operator value per point")
    ref = d.get("reference")
    return Trace(
        method=d["method"],
        steps=steps,
        x=xs,
        f_x=f_x,
        x_tilde=arr("x_tilde"),
        f_x_tilde=arr("f_x_tilde"),
        diverged=bool(d.get("diverged", False)),
        failure=d.get("failure"),
        reference=None if ref is None else np.asarray(ref, dtype=float),
    )


def residuals_csv_rows(trace: Trace, reference=None):
    res = residual_series(trace, reference)
    return [[int(k), res["sq_norm_F"][i], res["sq_step"][i], res["dist_to_ref"][i]] for i, k in enumerate(res["k"])]


def residuals_from_csv_rows(header, rows) -> dict:
    if tuple(header) != TRACE_CSV_COLUMNS:
        raise ValueError(f"unexpected trace CSV header {header}")
    cols = list(zip(*rows)) if rows else [[] for _ in header]
    out = {"k": np.array([int(v) for v in cols[0]], dtype=int)}
    for name, col in zip(header[1:], cols[1:]):
        out[name] = np.array([float("nan") if v == "" else float(v) for v in col])
    return out
