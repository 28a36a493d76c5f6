"""Closed-form rates, potentials, step-size regimes and divergence certificates.

Units: proximal-point rates bound squared step lengths ``||x^k - x^{k-1}||^2``
(``dx``); the lower bound and all EG/OG rates bound squared operator norms
(``F``).  Regime checks follow the inequality types of each guarantee exactly;
no slack is applied to them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from .operators import as_point
from .solvers import Trace

CHECK_ATOL = 1e-9
CHECK_RTOL = 1e-9

PP_KINDS = ("best_iterate", "last_iterate", "lower_bound")
EG_KINDS = ("best_iterate", "best_iterate_tilde", "last_iterate", "last_iterate_refined")
OG_KINDS = ("best_iterate", "last_iterate")


class RegimeError(ValueError):
    """Parameters outside the regime in which a guarantee holds."""


def _require(cond: bool, text: str, values: dict):
    if not cond:
        detail = ", ".join(f"{k}={v:.17g}" for k, v in values.items())
        raise RegimeError(f"{text} violated ({detail})")


def _check_N(N, minimum=1):
    if int(N) != N or N < minimum:
        raise RegimeError(f"N >= {minimum} integer required, got {N}")


def _positive(**kw):
    for k, v in kw.items():
        if not (math.isfinite(v) and v > 0):
            raise RegimeError(f"{k} > 0 violated ({k}={v})")


# -- regime predicates ---------------------------------------------------------------

def _pp_regime(gamma, rho):
    _positive(gamma=gamma)
    _require(rho >= 0, "rho >= 0", {"rho": rho})
    _require(gamma > 2 * rho, "gamma > 2*rho", {"gamma": gamma, "rho": rho})


def pp_lower_min_N(gamma: float, rho: float) -> float:
    return max(rho**2 / (gamma * (gamma - 2 * rho)), 1.0)


def _eg_best_regime(g1, g2, rho, L):
    _positive(gamma1=g1, gamma2=g2, L=L)
    _require(rho >= 0, "rho >= 0", {"rho": rho})
    _require(2 * rho < g1, "2*rho < gamma1", {"rho": rho, "gamma1": g1})
    _require(g1 < 1 / L, "gamma1 < 1/L", {"gamma1": g1, "L": L})
    _require(g2 <= g1 - 2 * rho, "gamma2 <= gamma1 - 2*rho", {"gamma1": g1, "gamma2": g2, "rho": rho})


def _eg_tilde_regime(g1, g2, rho, L):
    _positive(gamma1=g1, gamma2=g2, L=L)
    _require(rho >= 0, "rho >= 0", {"rho": rho})
    _require(2 * rho < g1, "2*rho < gamma1", {"rho": rho, "gamma1": g1})
    _require(g1 <= 1 / L, "gamma1 <= 1/L", {"gamma1": g1, "L": L})
    _require(g2 < g1 - 2 * rho, "gamma2 < gamma1 - 2*rho", {"gamma1": g1, "gamma2": g2, "rho": rho})


def _eg_last_regime(g1, g2, rho, L):
    _positive(gamma1=g1, gamma2=g2, L=L)
    _require(rho >= 0, "rho >= 0", {"rho": rho})
    _require(g1 == g2, "gamma1 == gamma2", {"gamma1": g1, "gamma2": g2})
    _require(rho <= 1 / (8 * L), "rho <= 1/(8L)", {"rho": rho, "L": L})
    _require(4 * rho <= g1, "4*rho <= gamma", {"rho": rho, "gamma": g1})
    _require(g1 <= 1 / (2 * L), "gamma <= 1/(2L)", {"gamma": g1, "L": L})


def _og_best_regime(g1, g2, rho, L):
    _positive(gamma1=g1, gamma2=g2, L=L)
    _require(rho >= 0, "rho >= 0", {"rho": rho})
    _require(2 * rho < g1, "2*rho < gamma1", {"rho": rho, "gamma1": g1})
    _require(g1 < 1 / L, "gamma1 < 1/L", {"gamma1": g1, "L": L})
    _require(g2 <= 1 / L - g1, "gamma2 <= 1/L - gamma1", {"gamma1": g1, "gamma2": g2, "L": L})
    _require(g2 <= g1 - 2 * rho, "gamma2 <= gamma1 - 2*rho", {"gamma1": g1, "gamma2": g2, "rho": rho})


def _og_last_regime(g1, g2, rho, L):
    _positive(gamma1=g1, gamma2=g2, L=L)
    _require(rho >= 0, "rho >= 0", {"rho": rho})
    _require(g1 == g2, "gamma1 == gamma2", {"gamma1": g1, "gamma2": g2})
    _require(rho <= 5 / (62 * L), "rho <= 5/(62L)", {"rho": rho, "L": L})
    _require(4 * rho <= g1, "4*rho <= gamma", {"rho": rho, "gamma": g1})
    _require(g1 <= 10 / (31 * L), "gamma <= 10/(31L)", {"gamma": g1, "L": L})


# -- bound evaluators ----------------------------------------------------------------

def _div(num, den):
    return math.inf if den == 0 else num / den


def pp_bound(kind: str, gamma: float, rho: float, R: float, N: int, check: bool = True) -> float:
    """Proximal point rates.

    ``best_iterate`` bounds the average and ``last_iterate`` the last of the
    squared steps ``||x^k - x^{k-1}||^2`` over ``N`` steps (same expression).
    ``lower_bound`` is the worst-case ``||F(x^{N+1})||^2`` of a scaled rotation.
    """
    if kind not in PP_KINDS:
        raise ValueError(f"unknown proximal point bound kind {kind!r}")
    if check:
        _pp_regime(gamma, rho)
        _check_N(N)
        if kind == "lower_bound":
            n_min = pp_lower_min_N(gamma, rho)
            _require(N >= n_min, "N >= max(rho^2/(gamma*(gamma-2*rho)), 1)", {"N": N, "bound": n_min})
    R2 = R * R
    if kind == "lower_bound":
        return _div(R2, gamma * (gamma - 2 * rho) * N * (1 + 1 / N) ** (N + 1))
    return _div(gamma * R2, (gamma - 2 * rho) * N)


def eg_bound(kind: str, gamma1: float, gamma2: float, rho: float, L: float, R: float, N: int, check: bool = True) -> float:
    """Extragradient rates on ``||F||^2``.

    ``best_iterate``: average over ``x^0..x^N``; ``best_iterate_tilde``: average over
    the extrapolated points; ``last_iterate`` and ``last_iterate_refined``: ``||F(x^N)||^2``.
    """
    if kind not in EG_KINDS:
        raise ValueError(f"unknown extragradient bound kind {kind!r}")
    if check:
        {
            "best_iterate": _eg_best_regime,
            "best_iterate_tilde": _eg_tilde_regime,
            "last_iterate": _eg_last_regime,
            "last_iterate_refined": _eg_last_regime,
        }[kind](gamma1, gamma2, rho, L)
        _check_N(N, 0 if kind.startswith("best") else 1)
    R2 = R * R
    if kind == "best_iterate":
        return _div(R2, gamma1 * gamma2 * (1 - L**2 * gamma1**2) * (N + 1))
    if kind == "best_iterate_tilde":
        return _div(R2, gamma2 * (gamma1 - 2 * rho - gamma2) * (N + 1))
    g = gamma1
    if kind == "last_iterate":
        return _div(28 * R2, N * g**2 + 320 * g * rho)
    return _div((1 + 40 * g * rho * L**2) * R2, N * g**2 * (1 - 5 * rho / (2 * g) - L**2 * g**2) + 40 * g * rho)


def og_bound(kind: str, gamma1: float, gamma2: float, rho: float, L: float, R: float, N: int, check: bool = True) -> float:
    """Optimistic gradient rates on ``||F||^2``.

    ``best_iterate`` averages ``||F(x~^k)||^2`` for ``k = 0..N``; ``last_iterate``
    bounds ``||F(x^N)||^2``.  At ``gamma2 = 1/L - gamma1`` the best-iterate value is infinite.
    """
    if kind not in OG_KINDS:
        raise ValueError(f"unknown optimistic gradient bound kind {kind!r}")
    if check:
        (_og_best_regime if kind == "best_iterate" else _og_last_regime)(gamma1, gamma2, rho, L)
        _check_N(N, 0)
    R2 = R * R
    if kind == "best_iterate":
        return _div(R2, gamma1 * gamma2 * (1 - L**2 * (gamma1 + gamma2) ** 2) * (N + 1))
    g = gamma1
    return _div(717 * R2, N * g * (g - 3 * rho) + 800 * g**2)


def bound_value(method, kind, gamma1, gamma2, rho, L, R, N, check=True) -> float:
    if method == "pp":
        return pp_bound(kind, gamma1, rho, R, N, check)
    if method == "eg":
        return eg_bound(kind, gamma1, gamma2, rho, L, R, N, check)
    if method == "og":
        return og_bound(kind, gamma1, gamma2, rho, L, R, N, check)
    raise ValueError(f"unknown method {method!r}")


def bound_unit(method: str, kind: str) -> str:
    return "dx" if method == "pp" and kind != "lower_bound" else "F"


# -- regime report ---------------------------------------------------------------------

@dataclass
class RegimeReport:
    method: str
    guarantees: list = field(default_factory=list)
    counterexample: str | None = None
    violations: dict = field(default_factory=dict)

    @property
    def any_guarantee(self) -> bool:
        return bool(self.guarantees)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "guarantees": list(self.guarantees),
            "counterexample": self.counterexample,
            "violations": dict(self.violations),
        }


def stepsize_admissible(method: str, gamma1: float, gamma2: float | None, rho: float, L: float | None) -> RegimeReport:
    """Which guarantees apply to the given parameters, and which counter-example does when none can."""
    gamma2 = gamma1 if gamma2 is None else gamma2
    rep = RegimeReport(method)

    def attempt(name, fn, *args):
        try:
            fn(*args)
            rep.guarantees.append(name)
        except RegimeError as exc:
            rep.violations[name] = str(exc)

    if method == "pp":
        for kind in ("best_iterate", "last_iterate"):
            attempt(kind, _pp_regime, gamma1, rho)
        if rho > 0 and 0 < gamma1 <= 2 * rho:
            rep.counterexample = "negative-scaling: F(x) = -x/rho, no convergence for 0 < gamma <= 2*rho"
        return rep
    if L is None:
        raise RegimeError("L is required for explicit methods")
    if method == "eg":
        attempt("best_iterate", _eg_best_regime, gamma1, gamma2, rho, L)
        attempt("best_iterate_tilde", _eg_tilde_regime, gamma1, gamma2, rho, L)
        attempt("last_iterate", _eg_last_regime, gamma1, gamma2, rho, L)
        attempt("last_iterate_refined", _eg_last_regime, gamma1, gamma2, rho, L)
    elif method == "og":
        attempt("best_iterate", _og_best_regime, gamma1, gamma2, rho, L)
        attempt("last_iterate", _og_last_regime, gamma1, gamma2, rho, L)
    else:
        raise ValueError(f"unknown method {method!r}")
    if gamma1 > 1 / L:
        rep.counterexample = "scaling: F(x) = L x diverges for gamma1 > 1/L"
    elif rho >= 1 / (2 * L):
        rep.counterexample = "rotation: F(x) = L A(2*pi/3) x, admissible for rho >= 1/(2L)"
    return rep


# -- potentials ------------------------------------------------------------------------

@dataclass
class PotentialSeries:
    phi: np.ndarray
    psi: np.ndarray | None = None
    nonincreasing: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    first_index: int = 0

    @property
    def monotone(self) -> bool:
        return bool(np.all(self.nonincreasing))


def _flags(phi, atol, rtol):
    phi = np.asarray(phi)
    return phi[1:] <= phi[:-1] + atol + rtol * np.abs(phi[:-1])


def _reference(trace: Trace, reference):
    ref = reference if reference is not None else trace.reference
    if ref is None:
        raise ValueError("a reference solution x* is required for the potential")
    return as_point(ref, trace.dim)


def eg_potential(trace: Trace, rho: float, L: float, reference=None, atol=CHECK_ATOL, rtol=CHECK_RTOL) -> PotentialSeries:
    """``Phi_k = ||x^k - x*||^2 + (k g^2 (1 - 5 rho/(2g) - L^2 g^2) + 40 g rho) ||F(x^k)||^2``."""
    if trace.method != "eg":
        raise ValueError(f"expected an extragradient trace, got {trace.method!r}")
    if not trace.steps.equal:
        raise RegimeError("the potential requires gamma1 == gamma2")
    ref = _reference(trace, reference)
    g = trace.steps.gamma1
    xs, fs = np.asarray(trace.x), np.asarray(trace.f_x)
    k = np.arange(len(xs))
    coef = k * g**2 * (1 - 5 * rho / (2 * g) - L**2 * g**2) + 40 * g * rho
    phi = np.sum((xs - ref) ** 2, axis=1) + coef * np.sum(fs**2, axis=1)
    return PotentialSeries(phi=phi, nonincreasing=_flags(phi, atol, rtol))


def og_potential(trace: Trace, rho: float, L: float, reference=None, atol=CHECK_ATOL, rtol=CHECK_RTOL) -> PotentialSeries:
    """``Phi_k = ||x^k - x*||^2 + (k g (g - 3 rho)/(2 + 6 L^2 g^2) + 400 g^2) Psi_k`` for ``k >= 1``,

    with ``Psi_k = ||F(x^k)||^2 + ||F(x^k) - F(x~^{k-1})||^2``.  Entry ``i`` of the
    returned arrays corresponds to ``k = i + 1``.
    """
    if trace.method != "og":
        raise ValueError(f"expected an optimistic gradient trace, got {trace.method!r}")
    if not trace.steps.equal:
        raise RegimeError("the potential requires gamma1 == gamma2")
    ref = _reference(trace, reference)
    g = trace.steps.gamma1
    xs, fs = np.asarray(trace.x)[1:], np.asarray(trace.f_x)[1:]
    ft = np.asarray(trace.f_x_tilde)[: len(xs)]
    if len(xs) == 0:
        return PotentialSeries(phi=np.zeros(0), psi=np.zeros(0), first_index=1)
    k = np.arange(1, len(xs) + 1)
    psi = np.sum(fs**2, axis=1) + np.sum((fs - ft) ** 2, axis=1)
    coef = k * g * (g - 3 * rho) / (2 + 6 * L**2 * g**2) + 400 * g**2
    phi = np.sum((xs - ref) ** 2, axis=1) + coef * psi
    return PotentialSeries(phi=phi, psi=psi, nonincreasing=_flags(phi, atol, rtol), first_index=1)


# -- one-step inequalities -------------------------------------------------------------
# Each function returns right-hand side minus left-hand side per step; the
# inequality holds where the slack is non-negative.

def _sq(a):
    a = np.asarray(a)
    return np.sum(a * a, axis=-1)


def eg_step_slacks(trace: Trace, rho: float, L: float, reference=None) -> dict:
    """``key``: distance decrease with the two operator terms, for every k;
    ``norm``: decrease of ``||F(x^k)||^2`` with its three correction terms (equal stepsizes only)."""
    if trace.method != "eg":
        raise ValueError(f"expected an extragradient trace, got {trace.method!r}")
    ref = _reference(trace, reference)
    g1, g2 = trace.steps.gamma1, trace.steps.gamma2
    n = len(trace.x_tilde)
    xs, fx = np.asarray(trace.x), np.asarray(trace.f_x)
    ft = np.asarray(trace.f_x_tilde).reshape(n, -1)
    d = _sq(xs - ref)
    key = d[:n] - g2 * (g1 - 2 * rho - g2) * _sq(ft) - g1 * g2 * (1 - L**2 * g1**2) * _sq(fx[:n]) - d[1 : n + 1]
    out = {"key": key}
    if trace.steps.equal and n:
        g = g1
        norm = (
            _sq(fx[:n])
            - (0.5 - 2 * L**2 * g**2) * _sq(ft - fx[:n])
            - (0.5 - rho / g) * _sq(ft - fx[1 : n + 1])
            - (0.5 - 2 * rho / g) * _sq(fx[:n] - fx[1 : n + 1])
            - _sq(fx[1 : n + 1])
        )
        out["norm"] = norm
    return out


def og_step_slacks(trace: Trace, rho: float, L: float, reference=None) -> dict:
    """``key``: distance inequality for every k (with ``F(x~^{-1}) = 0``);
    ``psi``: ``Psi_{k+1} <= Psi_k - ||F(x~^k) - F(x~^{k-1})||^2 / 100`` for k >= 1 (equal stepsizes only)."""
    if trace.method != "og":
        raise ValueError(f"expected an optimistic gradient trace, got {trace.method!r}")
    ref = _reference(trace, reference)
    g1, g2 = trace.steps.gamma1, trace.steps.gamma2
    n = len(trace.x_tilde)
    xs, fx = np.asarray(trace.x), np.asarray(trace.f_x)
    ft = np.asarray(trace.f_x_tilde).reshape(n, -1)
    prev = np.vstack([np.zeros((1, ft.shape[1])), ft[:-1]]) if n else ft
    d = _sq(xs - ref)
    key = d[:n] - g2 * (g1 - 2 * rho - g2) * _sq(ft) - g1 * g2 * _sq(prev) + g1 * g2 * _sq(ft - prev) - d[1 : n + 1]
    out = {"key": key}
    if trace.steps.equal and n > 1:
        # Psi_k for k = 1..n uses F(x~^{k-1}); the decrease step k -> k+1 needs F(x~^k).
        psi = _sq(fx[1 : n + 1]) + _sq(fx[1 : n + 1] - ft[:n])
        drop = _sq(ft[1:n] - ft[: n - 1]) / 100.0
        out["psi"] = psi[:-1] - drop - psi[1:]
    return out


# -- certificates ----------------------------------------------------------------------

LEMMA_C8_MATRIX = (
    (Fraction(-1, 3), Fraction(-1, 2), Fraction(1, 2), Fraction(1, 3)),
    (Fraction(-1, 2), Fraction(-3, 2), Fraction(1), Fraction(1)),
    (Fraction(1, 2), Fraction(1), Fraction(-4927, 5766), Fraction(-1861, 2883)),
    (Fraction(1, 3), Fraction(1), Fraction(-1861, 2883), Fraction(-661, 961)),
)
# Quadratic form of ||c - d||^2 in the coordinates (a, b, c, d).
DIFF_FORM = ((0, 0, 0, 0), (0, 0, 0, 0), (0, 0, 1, -1), (0, 0, -1, 1))


def _exact_nsd(m) -> bool:
    """Negative semidefiniteness of a rational matrix via all principal minors of ``-m``."""
    n = len(m)

    def det(rows):
        rows = [list(r) for r in rows]
        k, out = len(rows), Fraction(1)
        for i in range(k):
            piv = next((r for r in range(i, k) if rows[r][i] != 0), None)
            if piv is None:
                return Fraction(0)
            if piv != i:
                rows[i], rows[piv] = rows[piv], rows[i]
                out = -out
            out *= rows[i][i]
            for r in range(i + 1, k):
                f = rows[r][i] / rows[i][i]
                for c in range(i, k):
                    rows[r][c] -= f * rows[i][c]
        return out

    for size in range(1, n + 1):
        for idx in combinations(range(n), size):
            if det([[-m[i][j] for j in idx] for i in idx]) < 0:
                return False
    return True


def lemma_c8_matrix_certificate(matrix=None, margin=Fraction(1, 100), tol: float = 1e-12) -> dict:
    """Check ``M + margin * D <= 0`` for the 4x4 form behind the optimistic-gradient potential.

    ``max_eigenvalue`` is computed in floating point; ``exact`` repeats the test
    in rational arithmetic when the entries are rational.
    """
    m = LEMMA_C8_MATRIX if matrix is None else matrix
    shifted = [[Fraction(m[i][j]) + Fraction(margin) * DIFF_FORM[i][j] for j in range(4)] for i in range(4)]
    lam = float(np.linalg.eigvalsh(np.array([[float(v) for v in row] for row in shifted]))[-1])
    try:
        exact = _exact_nsd(shifted)
    except (TypeError, ValueError):
        exact = None
    return {"max_eigenvalue": lam, "holds": bool(lam <= tol), "exact": exact}


def eg_rotation_modulus_sq(L, gamma1, gamma2) -> float:
    """``|lambda|^2`` of the extragradient step on ``F = L A(2 pi/3)``."""
    return (1 + gamma2 * L / 2 * (1 - gamma1 * L)) ** 2 + 0.75 * gamma2**2 * L**2 * (1 + gamma1 * L) ** 2


def og_rotation_norm_sq(L, gamma1, gamma2) -> float:
    """``||B||^2`` of the optimistic step matrix on ``F = L A(2 pi/3)``."""
    c = (L**4 * gamma1**2 * gamma2**2 + L**2 * gamma1**2 + L**2 * gamma2**2 + L * gamma2) / 2 + 1
    return c + math.sqrt(c * c - L**2 * gamma1**2)


def og_scalar_eigenvalue(L, gamma1, gamma2) -> float:
    disc = L**2 * gamma1**2 + L**2 * gamma2**2 + 2 * L**2 * gamma1 * gamma2 + 2 * L * gamma1 - 2 * L * gamma2 + 1
    return -(L * gamma1 + L * gamma2 + math.sqrt(disc) - 1) / 2


def eg_step_matrix(M, gamma1, gamma2) -> np.ndarray:
    n = M.shape[0]
    return np.eye(n) - gamma2 * M @ (np.eye(n) - gamma1 * M)


def og_step_matrix(M, gamma1, gamma2) -> np.ndarray:
    """Linear map ``(x^k, x~^{k-1}) -> (x^{k+1}, x~^k)`` for ``F = M``."""
    n = M.shape[0]
    eye = np.eye(n)
    return np.block([[eye - gamma2 * M, gamma1 * gamma2 * M @ M], [eye, -gamma1 * M]])


def counterexample_certificates(method: str, L: float, gamma1: float, gamma2: float) -> dict:
    """Growth certificate of the explicit method on its counter-example operator.

    ``spectral_quantity`` is the squared modulus or norm named for the case and
    ``expansive`` says whether it exceeds one.  ``diverges`` is decided by the
    spectral radius of the exact step matrix, which is the asymptotic growth rate.
    """
    _positive(L=L, gamma1=gamma1, gamma2=gamma2)
    if gamma1 > 1 / L:
        operator = "scaling"
        M = np.array([[L]])
        if method == "eg":
            mult = 1 - L * gamma2 + L**2 * gamma2 * gamma1
            quantity, name = mult**2, "multiplier^2"
        elif method == "og":
            mu = og_scalar_eigenvalue(L, gamma1, gamma2)
            quantity, name = mu**2, "eigenvalue^2"
        else:
            raise ValueError(f"unknown explicit method {method!r}")
    else:
        operator = "rotation"
        c, s = math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3)
        M = L * np.array([[c, -s], [s, c]])
        if method == "eg":
            quantity, name = eg_rotation_modulus_sq(L, gamma1, gamma2), "|lambda|^2"
        elif method == "og":
            quantity, name = og_rotation_norm_sq(L, gamma1, gamma2), "||B||^2"
        else:
            raise ValueError(f"unknown explicit method {method!r}")
    step = eg_step_matrix(M, gamma1, gamma2) if method == "eg" else og_step_matrix(M, gamma1, gamma2)
    radius = float(np.max(np.abs(np.linalg.eigvals(step))))
    return {
        "method": method,
        "operator": operator,
        "quantity_name": name,
        "spectral_quantity": float(quantity),
        "expansive": bool(quantity > 1),
        "spectral_radius": radius,
        "diverges": bool(radius > 1),
    }


# -- trace checks ----------------------------------------------------------------------

@dataclass(frozen=True)
class BoundSpec:
    method: str
    kind: str
    rho: float
    gamma1: float
    gamma2: float | None = None
    L: float | None = None
    R: float | None = None
    N: int | None = None

    @property
    def g2(self) -> float:
        return self.gamma1 if self.gamma2 is None else self.gamma2


@dataclass
class BoundReport:
    method: str
    kind: str
    unit: str
    k: np.ndarray
    observed: np.ndarray
    bound: np.ndarray
    in_regime: bool
    regime_message: str = ""
    lower: bool = False

    @property
    def margin(self) -> np.ndarray:
        # For a lower bound the observed value must exceed the bound.
        return self.observed - self.bound if self.lower else self.bound - self.observed

    def satisfied_mask(self, atol=CHECK_ATOL, rtol=CHECK_RTOL) -> np.ndarray:
        return self.margin >= -(atol + rtol * np.abs(self.bound))

    def first_violation(self, atol=CHECK_ATOL, rtol=CHECK_RTOL) -> int | None:
        bad = np.flatnonzero(~self.satisfied_mask(atol, rtol))
        return int(self.k[bad[0]]) if bad.size else None

    @property
    def satisfied(self) -> bool:
        return self.first_violation() is None


def check_trace(trace: Trace, spec: BoundSpec, reference=None) -> BoundReport:
    """Compare a trace against a bound for every prefix length ``k``.

    Out-of-regime parameters are evaluated anyway and flagged, so a report can
    show what goes wrong outside the guarantees.
    """
    if trace.method != spec.method:
        raise RegimeError(f"trace method {trace.method!r} does not match bound method {spec.method!r}")
    if not (math.isclose(trace.steps.gamma1, spec.gamma1) and math.isclose(trace.steps.gamma2, spec.g2)):
        raise RegimeError(
            f"trace stepsizes ({trace.steps.gamma1}, {trace.steps.gamma2}) do not match bound ({spec.gamma1}, {spec.g2})"
        )
    R = spec.R
    if R is None:
        ref = reference if reference is not None else trace.reference
        if ref is None:
            raise ValueError("either R or a reference solution is required")
        R = float(np.linalg.norm(trace.x[0] - as_point(ref, trace.dim)))

    g1, g2, L = spec.gamma1, spec.g2, spec.L
    in_regime, message = True, ""
    try:
        probe = spec.N if spec.N is not None else 1
        bound_value(spec.method, spec.kind, g1, g2, spec.rho, L, R, max(probe, 1))
    except RegimeError as exc:
        in_regime, message = False, str(exc)

    def b(n):
        return bound_value(spec.method, spec.kind, g1, g2, spec.rho, L, R, n, check=False)

    sq_f = np.sum(np.asarray(trace.f_x) ** 2, axis=1)
    xs = np.asarray(trace.x)
    sq_step = np.sum(np.diff(xs, axis=0) ** 2, axis=1)
    ks, obs = [], []
    lower = False
    m, kind = spec.method, spec.kind
    if m == "pp" and kind == "lower_bound":
        n = spec.N if spec.N is not None else trace.N - 1
        if trace.N >= n + 1:
            ks, obs = [n + 1], [sq_f[n + 1]]
        bvals = [b(n)] if ks else []
        lower = True
    elif m == "pp":
        ks = list(range(1, trace.N + 1))
        series = np.cumsum(sq_step) / np.arange(1, trace.N + 1) if kind == "best_iterate" else sq_step
        obs = list(series)
        bvals = [b(k) for k in ks]
    elif kind.startswith("best_iterate"):
        tilde = kind == "best_iterate_tilde" or m == "og"
        vals = np.sum(np.asarray(trace.f_x_tilde) ** 2, axis=1) if tilde else sq_f
        ks = list(range(len(vals)))
        obs = list(np.cumsum(vals) / np.arange(1, len(vals) + 1)) if len(vals) else []
        bvals = [b(k) for k in ks]
    else:
        first = 0 if m == "og" else 1
        ks = list(range(first, trace.N + 1))
        obs = [sq_f[k] for k in ks]
        bvals = [b(k) for k in ks]
    return BoundReport(
        method=m,
        kind=kind,
        unit=bound_unit(m, kind),
        k=np.asarray(ks, dtype=int),
        observed=np.asarray(obs, dtype=float),
        bound=np.asarray(bvals, dtype=float),
        in_regime=in_regime,
        regime_message=message,
        lower=lower,
    )


REPORT_CSV_COLUMNS = ("k", "observed", "bound", "margin")


def report_to_dict(rep: BoundReport) -> dict:
    return {
        "method": rep.method,
        "kind": rep.kind,
        "unit": rep.unit,
        "lower": rep.lower,
        "in_regime": rep.in_regime,
        "regime_message": rep.regime_message,
        "satisfied": rep.satisfied,
        "first_violation": rep.first_violation(),
        "k": rep.k.tolist(),
        "observed": rep.observed.tolist(),
        "bound": rep.bound.tolist(),
        "margin": rep.margin.tolist(),
    }


def report_from_dict(d: dict) -> BoundReport:
    return BoundReport(
        method=d["method"],
        kind=d["kind"],
        unit=d["unit"],
        k=np.asarray(d["k"], dtype=int),
        observed=np.asarray(d["observed"], dtype=float),
        bound=np.asarray(d["bound"], dtype=float),
        in_regime=bool(d["in_regime"]),
        regime_message=d.get("regime_message", ""),
        lower=bool(d.get("lower", False)),
    )


def report_csv_rows(rep: BoundReport):
    return [[int(k), o, b, mg] for k, o, b, mg in zip(rep.k, rep.observed, rep.bound, rep.margin)]


def report_from_csv_rows(header, rows, method="", kind="", unit="", lower=False) -> BoundReport:
    if tuple(header) != REPORT_CSV_COLUMNS:
        raise ValueError(f"unexpected bound report CSV header {header}")
    cols = list(zip(*rows)) if rows else [[], [], [], []]
    return BoundReport(
        method=method,
        kind=kind,
        unit=unit,
        k=np.array([int(v) for v in cols[0]], dtype=int),
        observed=np.array([float(v) for v in cols[1]]),
        bound=np.array([float(v) for v in cols[2]]),
        in_regime=True,
        lower=lower,
    )
