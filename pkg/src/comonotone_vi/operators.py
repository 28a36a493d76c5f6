"""Operators ``F(x) = gain * matrix @ x`` and their comonotonicity certificates.

An operator is rho-negative comonotone when
``<F(x) - F(y), x - y> >= -rho ||F(x) - F(y)||^2`` for all ``x, y``.  For a linear
map ``M`` this is the matrix inequality ``sym(M) + rho M^T M >= 0``; the
eigenvalue test ``Re(1/lambda) >= -rho`` is necessary, and also sufficient
when ``M`` is normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

CERT_TOL = 1e-9
SINGULAR_RCOND = 1e-12


class DimensionError(ValueError):
    pass


class PreconditionError(ValueError):
    """Raised when constructor parameters are outside the admissible regime."""


class SingularResolvent(ArithmeticError):
    """``I + gamma F`` is numerically singular, so the implicit step is undefined."""

    def __init__(self, message: str, step: int | None = None, rcond: float | None = None):
        super().__init__(message)
        self.step = step
        self.rcond = rcond


class CertificationError(RuntimeError):
    pass


def as_point(x, dim: int | None = None) -> np.ndarray:
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1 or p.size == 0:
        raise DimensionError(f"a point must be a non-empty 1-D vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point has non-finite coordinates")
    if dim is not None and p.size != dim:
        raise DimensionError(f"dimension mismatch: expected {dim}, got {p.size}")
    return p


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """``F(x) = gain * matrix @ x``.  ``kind`` and ``params`` record provenance for serialization."""

    matrix: np.ndarray
    gain: float = 1.0
    kind: str = "linear"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator matrix must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("operator matrix has non-finite entries")
        if not (math.isfinite(self.gain) and self.gain > 0):
            raise PreconditionError(f"gain must be positive and finite, got {self.gain}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "gain", float(self.gain))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def full_matrix(self) -> np.ndarray:
        return self.gain * self.matrix

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)

    def __eq__(self, other):
        if not isinstance(other, LinearOperator):
            return NotImplemented
        return self.gain == other.gain and self.kind == other.kind and np.array_equal(self.matrix, other.matrix)

    __hash__ = None


@dataclass(frozen=True)
class CallableOperator:
    """A general single-valued operator given by an evaluation callback.

    ``jacobian`` is optional; without it the implicit step uses finite differences.
    """

    func: Callable[[np.ndarray], np.ndarray]
    dim: int
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    kind: str = "callable"

    def __call__(self, x) -> np.ndarray:
        x = as_point(x, self.dim)
        return as_point(self.func(x), self.dim)


def evaluate(op: LinearOperator, x) -> np.ndarray:
    x = as_point(x, op.dim)
    return op.gain * (op.matrix @ x)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def make_scaled_rotation(theta: float, alpha: float) -> LinearOperator:
    if not alpha > 0:
        raise PreconditionError(f"alpha > 0 required, got {alpha}")
    return LinearOperator(rotation_matrix(theta), alpha, "rotation", {"theta": theta, "alpha": alpha})


def pp_worst_case_params(rho: float, gamma: float, N: int) -> tuple[float, float]:
    """Scale ``alpha`` and angle ``theta`` of the worst-case rotation for ``N`` proximal steps."""
    if rho < 0:
        raise PreconditionError(f"rho >= 0 required, got {rho}")
    if not gamma > 2 * rho:
        raise PreconditionError(f"gamma > 2*rho violated: gamma={gamma}, 2*rho={2 * rho}")
    c = gamma * (gamma - 2 * rho)
    n_min = max(rho**2 / c, 1.0)
    if N < n_min:
        raise PreconditionError(
            f"N >= max(rho^2/(gamma*(gamma-2*rho)), 1) = {n_min:.17g} violated: N={N}"
        )
    alpha = 1.0 / math.sqrt(N * c)
    theta = math.acos(-rho * alpha)
    return alpha, theta


def make_pp_worst_case(rho: float, gamma: float, N: int) -> LinearOperator:
    """Scaled rotation on which ``N + 1`` proximal steps contract by exactly ``N/(N+1)`` per step."""
    alpha, theta = pp_worst_case_params(rho, gamma, N)
    return LinearOperator(
        rotation_matrix(theta), alpha, "pp-worst-case", {"rho": rho, "gamma": gamma, "N": N}
    )


def make_negative_scaling(rho: float, dim: int = 1) -> LinearOperator:
    """``F(x) = -x / rho``: comonotone with equality, and a bad target for small proximal steps."""
    if not rho > 0:
        raise PreconditionError(f"rho > 0 required, got {rho}")
    return LinearOperator(-np.eye(dim) / rho, 1.0, "neg-scaling", {"rho": rho, "dim": dim})


def make_scaling(L: float, dim: int = 1) -> LinearOperator:
    """``F(x) = L x``, monotone and L-Lipschitz."""
    return LinearOperator(np.eye(dim), L, "scaling", {"L": L, "dim": dim})


@dataclass(frozen=True)
class OperatorCertificate:
    rho: float
    lipschitz: float
    spectrum: tuple
    spectral_ok: bool
    exact_ok: bool
    spectral_rho: float
    tight_rho: float
    normal: bool

    @property
    def ok(self) -> bool:
        return self.exact_ok


def lipschitz_constant(op: LinearOperator) -> float:
    return float(np.linalg.norm(op.full_matrix, 2))


def _spectral_margin_ok(lam: np.ndarray, rho: float, tol: float) -> np.ndarray:
    # |1 + 2 rho lam| >= 1  <=>  Re(lam) + rho |lam|^2 >= 0; scaled so the test is monotone in rho.
    mod2 = np.abs(lam) ** 2
    return lam.real + rho * mod2 >= -tol * (np.abs(lam) + rho * mod2)


def _exact_margin(m: np.ndarray, rho: float) -> float:
    s = 0.5 * (m + m.T)
    return float(np.linalg.eigvalsh(s + rho * (m.T @ m))[0])


def _exact_ok(m: np.ndarray, rho: float, tol: float) -> bool:
    nrm = float(np.linalg.norm(m, 2))
    return _exact_margin(m, rho) >= -tol * (nrm + rho * nrm**2)


def tightest_rho(op: LinearOperator, tol: float = CERT_TOL) -> float:
    """Smallest rho >= 0 for which the operator is rho-negative comonotone (``inf`` if none)."""
    m = op.full_matrix
    if _exact_ok(m, 0.0, tol):
        return 0.0
    try:
        if 1.0 / np.linalg.cond(m) > SINGULAR_RCOND:
            # sym(M) + rho M^T M >= 0  <=>  sym(M^{-1}) >= -rho I
            inv = np.linalg.inv(m)
            return max(0.0, -float(np.linalg.eigvalsh(0.5 * (inv + inv.T))[0]))
    except np.linalg.LinAlgError:
        pass
    hi = 1.0
    while not _exact_ok(m, hi, tol):
        hi *= 2.0
        if hi > 1e12:
            return math.inf
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _exact_ok(m, mid, tol):
            hi = mid
        else:
            lo = mid
    return hi


def certify_comonotone(op: LinearOperator, rho: float, tol: float = CERT_TOL) -> tuple[bool, OperatorCertificate]:
    """Decide rho-negative comonotonicity of a linear operator.

    The verdict uses the exact matrix inequality; the spectral test is recorded
    alongside it.  Boundary cases (equality) are accepted.
    """
    if rho < 0:
        raise PreconditionError(f"rho >= 0 required, got {rho}")
    m = op.full_matrix
    try:
        lam = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise CertificationError(f"eigenvalue computation failed: {exc}") from exc
    if not np.all(np.isfinite(lam)):
        raise CertificationError("eigenvalue computation returned non-finite values")

    spectral_ok = bool(np.all(_spectral_margin_ok(lam, rho, tol)))
    nz = lam[np.abs(lam) > 0]
    spectral_rho = max(0.0, float(np.max(-(1.0 / nz).real))) if nz.size else 0.0
    exact_ok = _exact_ok(m, rho, tol)
    normal = bool(np.allclose(m @ m.T, m.T @ m, atol=1e-12 * max(1.0, np.linalg.norm(m) ** 2)))
    cert = OperatorCertificate(
        rho=float(rho),
        lipschitz=lipschitz_constant(op),
        spectrum=tuple(complex(v) for v in lam),
        spectral_ok=spectral_ok,
        exact_ok=exact_ok,
        spectral_rho=spectral_rho,
        tight_rho=tightest_rho(op, tol),
        normal=normal,
    )
    return exact_ok, cert


def comonotone_slack(op, x, y, rho: float) -> float:
    """``<F(x)-F(y), x-y> + rho ||F(x)-F(y)||^2`` for a single pair."""
    dx = as_point(x) - as_point(y)
    dg = op(x) - op(y)
    return float(dg @ dx + rho * dg @ dg)


def resolvent(op: LinearOperator, gamma: float, x) -> np.ndarray:
    """Solve ``y + gamma F(y) = x``."""
    if not gamma > 0:
        raise PreconditionError(f"gamma > 0 required, got {gamma}")
    x = as_point(x, op.dim)
    lhs = np.eye(op.dim) + gamma * op.full_matrix
    rcond = 1.0 / np.linalg.cond(lhs)
    if not rcond >= SINGULAR_RCOND:
        raise SingularResolvent(
            f"I + gamma*F is singular (reciprocal condition {rcond:.3g}); implicit step undefined",
            rcond=float(rcond),
        )
    return np.linalg.solve(lhs, x)


def newton_resolvent(
    op: CallableOperator, gamma: float, x, tol: float = 1e-10, max_iter: int = 100, y0=None
) -> np.ndarray:
    """Damped Newton on ``y + gamma F(y) - x = 0`` for a general operator."""
    x = as_point(x, op.dim)
    y = x.copy() if y0 is None else as_point(y0, op.dim)
    eye = np.eye(op.dim)

    def jac(p):
        if op.jacobian is not None:
            return np.asarray(op.jacobian(p), dtype=float)
        h = 1e-7 * max(1.0, np.linalg.norm(p))
        f0 = op(p)
        return np.column_stack([(op(p + h * e) - f0) / h for e in eye])

    res = y + gamma * op(y) - x
    for _ in range(max_iter):
        nrm = np.linalg.norm(res)
        if nrm <= tol * max(1.0, np.linalg.norm(x)):
            return y
        j = eye + gamma * jac(y)
        if 1.0 / np.linalg.cond(j) < SINGULAR_RCOND:
            raise SingularResolvent("Newton system for the implicit step is singular")
        step = np.linalg.solve(j, -res)
        t = 1.0
        while t > 1e-10:
            y_new = y + t * step
            res_new = y_new + gamma * op(y_new) - x
            if np.linalg.norm(res_new) < (1 - 1e-4 * t) * nrm:
                break
            t *= 0.5
        y, res = y_new, res_new
    if np.linalg.norm(res) <= tol * max(1.0, np.linalg.norm(x)):
        return y
    raise SingularResolvent(f"Newton did not converge in {max_iter} iterations (residual {np.linalg.norm(res):.3g})")


def operator_to_dict(op: LinearOperator) -> dict:
    return {
        "dim": op.dim,
        "matrix": op.matrix.tolist(),
        "gain": op.gain,
        "kind": op.kind,
        "params": dict(op.params),
    }


def operator_from_dict(d: dict) -> LinearOperator:
    m = np.asarray(d["matrix"], dtype=float)
    if "dim" in d and m.shape != (d["dim"], d["dim"]):
        raise DimensionError(f"declared dim {d['dim']} does not match matrix shape {m.shape}")
    return LinearOperator(m, float(d.get("gain", 1.0)), d.get("kind", "linear"), dict(d.get("params", {})))
