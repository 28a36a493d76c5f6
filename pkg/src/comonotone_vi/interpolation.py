"""Finite data sets ``{(x_i, g_i)}`` and their extension to rho-negative comonotone operators.

A data set extends to a maximal rho-negative comonotone operator exactly when
every pair satisfies ``<g_i - g_j, x_i - x_j> >= -rho ||g_i - g_j||^2``.  The map
``(x, g) -> (x + rho g, g)`` turns such data into monotone data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import DimensionError, as_point

INTERP_TOL = 1e-9


@dataclass
class InterpolationDataset:
    pairs: list
    star_index: int | None = None

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("dataset must contain at least one pair")
        dim = as_point(self.pairs[0][0]).size
        clean = []
        for i, (x, g) in enumerate(self.pairs):
            try:
                clean.append((as_point(x, dim), as_point(g, dim)))
            except DimensionError as exc:
                raise DimensionError(f"pair {i}: {exc}") from exc
        self.pairs = clean
        if self.star_index is not None:
            if not 0 <= self.star_index < len(clean):
                raise ValueError(f"star_index {self.star_index} out of range")
            if np.any(clean[self.star_index][1] != 0):
                raise ValueError("the pair at star_index must have g = 0")

    @property
    def dim(self) -> int:
        return self.pairs[0][0].size

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array([p[0] for p in self.pairs]), np.array([p[1] for p in self.pairs])

    def __len__(self):
        return len(self.pairs)


@dataclass
class InterpolationReport:
    ok: bool
    violations: list
    min_slack: float
    rho: float
    tol: float


def pairwise_slack(ds: InterpolationDataset, rho: float) -> np.ndarray:
    """Matrix of ``<g_i - g_j, x_i - x_j> + rho ||g_i - g_j||^2`` (symmetric, zero diagonal)."""
    x, g = ds.arrays()
    dx = x[:, None, :] - x[None, :, :]
    dg = g[:, None, :] - g[None, :, :]
    return np.einsum("ijk,ijk->ij", dg, dx) + rho * np.einsum("ijk,ijk->ij", dg, dg)


def check_interpolable(ds: InterpolationDataset, rho: float, tol: float = INTERP_TOL) -> InterpolationReport:
    """Every unordered pair must have slack ``>= -tol``; violations are listed as ``(i, j, slack)``."""
    if rho < 0:
        raise ValueError(f"rho >= 0 required, got {rho}")
    s = pairwise_slack(ds, rho)
    iu = np.triu_indices(len(ds), 1)
    vals = s[iu]
    bad = np.flatnonzero(vals < -tol)
    violations = [(int(iu[0][b]), int(iu[1][b]), float(vals[b])) for b in bad]
    return InterpolationReport(
        ok=not violations,
        violations=violations,
        min_slack=float(vals.min()) if vals.size else 0.0,
        rho=float(rho),
        tol=float(tol),
    )


def shift_to_monotone(ds: InterpolationDataset, rho: float) -> InterpolationDataset:
    """``(x, g) -> (x + rho g, g)``; comonotone data become monotone data."""
    return InterpolationDataset([(x + rho * g, g.copy()) for x, g in ds.pairs], ds.star_index)


def dataset_from_trace(trace, include_tilde: bool = True, reference=None) -> InterpolationDataset:
    """Collect the evaluated points of a run; an optional reference is appended with ``g = 0``."""
    pairs = list(zip(trace.x, trace.f_x))
    if include_tilde:
        pairs += list(zip(trace.x_tilde, trace.f_x_tilde))
    star = None
    if reference is not None:
        r = as_point(reference, trace.dim)
        pairs.append((r, np.zeros_like(r)))
        star = len(pairs) - 1
    return InterpolationDataset(pairs, star)


def dataset_to_dict(ds: InterpolationDataset) -> dict:
    return {
        "dim": ds.dim,
        "pairs": [{"x": x.tolist(), "g": g.tolist()} for x, g in ds.pairs],
        "star_index": ds.star_index,
    }


def dataset_from_dict(d: dict) -> InterpolationDataset:
    pairs = [(p["x"], p["g"]) for p in d["pairs"]]
    ds = InterpolationDataset(pairs, d.get("star_index"))
    if "dim" in d and d["dim"] != ds.dim:
        raise DimensionError(f"declared dim {d['dim']} does not match data dimension {ds.dim}")
    return ds
