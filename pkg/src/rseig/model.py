"""Problem instances: controlled diffusions with their reward fields, plus
finite-grid checks of the standing structural assumptions.

A model bundles the drift b(x, xi), diffusion factor sigma(x) (a = sigma sigma^T),
and running reward c(x, xi) over a finite control set. All field callables must
broadcast over a leading batch axis: x has shape (..., d), xi has shape (..., k),
drift returns (..., d), sigma returns (..., d, d), reward returns (...,). The
builtin fixtures follow this contract; the Monte Carlo sampler relies on it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import EvaluationError, InvalidArgument, NotFound

BUILTIN_NAMES = ("const", "ou-quad", "ctrl-1d", "min-1d")

# threshold for the bounded-entropy-ratio proxy (case c below); finite grids make
# any ratio finite, so "bounded" means "below this fixed constant on the grid"
A42C_RATIO_BOUND = 10.0


@dataclass
class DiffusionModel:
    dimension: int
    controls: np.ndarray                      # (m, k) control points
    drift: Callable                           # b(x, xi) -> (..., d)
    sigma: Callable                           # sigma(x) -> (..., d, d)
    reward: Callable                          # c(x, xi) -> (...,)
    reward_upper_bound: float
    direction: str = "maximize"               # "maximize" | "minimize"
    name: str = "custom"

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise InvalidArgument(f"dimension must be 1 or 2, got {self.dimension}")
        if self.direction not in ("maximize", "minimize"):
            raise InvalidArgument(f"direction must be maximize|minimize, got {self.direction!r}")
        self.controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        if self.controls.shape[0] < 1:
            raise InvalidArgument("need at least one control point")

    @property
    def n_controls(self) -> int:
        return self.controls.shape[0]


@dataclass
class AssumptionReport:
    ellipticity_floor: float
    ellipticity_ceiling: float
    growth_constant: float                    # least C0 with |b|^2 + tr(a) <= C0 (1+|x|^2)
    near_monotone_margin: float               # rho_hat - max c over the outermost 10% shell
    a42_case: str                             # inf_compact_c | subquadratic_inward_drift | bounded_ratio | none
    a51_theta: Optional[float]                # drift growth exponent fit, minimize runs only
    reward_growth_exponent: float             # fitted slope of log(1+max_xi |c|) vs log(1+|x|)


def builtin_instance(name: str) -> DiffusionModel:
    """Benchmark fixtures. All are 1-dimensional with a = 2 (sigma = sqrt 2)."""
    sq2 = float(np.sqrt(2.0))

    def const_sigma(x):
        out = np.zeros(np.shape(x)[:-1] + (1, 1))
        out[..., 0, 0] = sq2
        return out

    if name == "const":
        return DiffusionModel(
            dimension=1,
            controls=[[0.0]],
            drift=lambda x, xi: -x,
            sigma=const_sigma,
            reward=lambda x, xi: np.full(np.shape(x)[:-1], 0.5),
            reward_upper_bound=0.5,
            name="const",
        )
    if name == "ou-quad":
        # closed form: lambda* = -1, Phi* = exp(-x^2/2), twisted drift -3x
        return DiffusionModel(
            dimension=1,
            controls=[[0.0]],
            drift=lambda x, xi: -x,
            sigma=const_sigma,
            reward=lambda x, xi: -2.0 * x[..., 0] ** 2,
            reward_upper_bound=0.0,
            name="ou-quad",
        )
    if name == "ctrl-1d":
        return DiffusionModel(
            dimension=1,
            controls=[[-1.0], [0.0], [1.0]],
            drift=lambda x, xi: xi - x,
            sigma=const_sigma,
            reward=lambda x, xi: -(x[..., 0] - 1.0) ** 2 - 0.1 * xi[..., 0] ** 2,
            reward_upper_bound=0.0,
            name="ctrl-1d",
        )
    if name == "min-1d":
        return DiffusionModel(
            dimension=1,
            controls=[[-1.0], [0.0], [1.0]],
            drift=lambda x, xi: np.zeros_like(x) + xi,
            sigma=const_sigma,
            reward=lambda x, xi: x[..., 0] ** 2 + xi[..., 0] ** 2,
            reward_upper_bound=float("inf"),
            direction="minimize",
            name="min-1d",
        )
    raise NotFound(f"unknown builtin {name!r}; valid names: {', '.join(BUILTIN_NAMES)}")


def evaluate_fields(model: DiffusionModel, nodes: np.ndarray):
    """Tabulate b, c per control and a, sigma per node.

    Returns (b, c, a, sigma) with shapes (m, n, d), (m, n), (n, d, d), (n, d, d).
    Raises EvaluationError naming the first node with a non-finite value.
    """
    nodes = np.asarray(nodes, dtype=float)
    n, d = nodes.shape
    m = model.n_controls
    b = np.empty((m, n, d))
    c = np.empty((m, n))
    for i in range(m):
        xi = np.broadcast_to(model.controls[i], (n, model.controls.shape[1]))
        b[i] = np.asarray(model.drift(nodes, xi), dtype=float).reshape(n, d)
        c[i] = np.asarray(model.reward(nodes, xi), dtype=float).reshape(n)
    sig = np.asarray(model.sigma(nodes), dtype=float).reshape(n, d, d)
    a = sig @ np.swapaxes(sig, -1, -2)
    for arr, label in ((b, "drift"), (c, "reward"), (sig, "sigma")):
        bad = ~np.isfinite(arr)
        if bad.any():
            node = int(np.argwhere(bad)[0][-2] if arr.ndim > 2 else np.argwhere(bad)[0][-1])
            raise EvaluationError(f"non-finite {label} value at node {node} ({nodes[min(node, n - 1)]})")
    return b, c, a, sig


def _ring_mask(nodes: np.ndarray, radius: float, lo: float, hi: float) -> np.ndarray:
    sup = np.max(np.abs(nodes), axis=1)
    eps = 1e-9 * max(radius, 1.0)
    return (sup >= lo * radius - eps) & (sup <= hi * radius + eps)


def _fit_slope(xvals: np.ndarray, yvals: np.ndarray) -> float:
    if len(xvals) < 2 or np.ptp(xvals) < 1e-12:
        return 0.0
    return float(np.polyfit(xvals, yvals, 1)[0])


def check_assumptions(model: DiffusionModel, grid, rho_hat: float) -> AssumptionReport:
    """Populate the report by sampling every grid node and control.

    All checks are finite-grid proxies. Shells: the near-monotone margin and the
    growth fits use the outermost 10% of nodes (sup-norm >= 0.9 r); the
    inf-compactness and drift-decay proxies compare the center node, the mid ring
    (sup-norm in [0.45, 0.55] r) and that outer shell.
    """
    nodes = np.asarray(grid.nodes, dtype=float)
    if nodes.size == 0:
        raise InvalidArgument("grid is empty")
    b, c, a, _ = evaluate_fields(model, nodes)

    sup = np.max(np.abs(nodes), axis=1)
    norm2 = np.sum(nodes ** 2, axis=1)
    eigs = np.linalg.eigvalsh(a)
    floor = float(eigs.min())
    ceil = float(eigs.max())

    bnorm2 = np.sum(b ** 2, axis=2)                     # (m, n)
    tra = np.trace(a, axis1=1, axis2=2)                 # (n,)
    growth = float(np.max((bnorm2 + tra[None, :]) / (1.0 + norm2[None, :])))

    cmax = c.max(axis=0)                                # max over controls, per node
    outer = _ring_mask(nodes, grid.radius, 0.9, np.inf)
    margin = float(rho_hat - cmax[outer].max())

    a42 = _a42_case(model, grid, nodes, b, c, sup)

    theta = None
    if model.direction == "minimize":
        half = sup >= 0.5 * grid.radius
        bmax = np.max(np.sqrt(bnorm2), axis=0)
        theta = _fit_slope(np.log1p(sup[half]), np.log(np.maximum(bmax[half], 1e-12)))

    half = sup >= 0.5 * grid.radius
    cabs = np.max(np.abs(c), axis=0)
    cexp = _fit_slope(np.log1p(sup[half]), np.log1p(cabs[half]))

    return AssumptionReport(
        ellipticity_floor=floor,
        ellipticity_ceiling=ceil,
        growth_constant=growth,
        near_monotone_margin=margin,
        a42_case=a42,
        a51_theta=theta,
        reward_growth_exponent=cexp,
    )


def _a42_case(model, grid, nodes, b, c, sup) -> str:
    """First of the three sufficient cases whose finite-grid proxy holds."""
    outer = _ring_mask(nodes, grid.radius, 0.9, np.inf)
    mid = _ring_mask(nodes, grid.radius, 0.45, 0.55)
    center = int(np.argmin(sup))

    # (a) -c inf-compact: min_xi(-c) strictly grows center -> mid -> outer shell
    negc = np.min(-c, axis=0)
    if mid.any() and outer.any():
        m_c, m_m, m_o = negc[center], negc[mid].min(), negc[outer].min()
        if m_o > m_m > m_c and m_o >= m_c + 1.0:
            return "inf_compact_c"

    # (b) inward-drift negative part decays: max_xi <b,x>^- / |x|^2 small or decaying
    inner_prod = np.einsum("mnd,nd->mn", b, nodes)
    neg_part = np.maximum(-inner_prod, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(sup[None, :] > 0, neg_part / np.maximum(np.sum(nodes ** 2, axis=1)[None, :], 1e-300), 0.0)
    g = ratio.max(axis=0)
    if mid.any() and outer.any():
        s_o, s_m = g[outer].max(), g[mid].max()
        if s_o <= 0.05 or s_o <= 0.6 * s_m:
            return "subquadratic_inward_drift"

    # (c) entropy ratio H / ((1+|phi|)(1+|c|)) bounded; needs the eigenpair, so
    # solve on this grid (lazy import avoids a module cycle)
    try:
        from .discretize import gradient_on_grid
        from .eigensolve import solve_semilinear

        pair, _ = solve_semilinear(model, grid, "neumann", tol=1e-8)
        phi = np.log(pair.vector)
        grad = gradient_on_grid(phi, grid)
        _, _, _, sig = evaluate_fields(model, nodes)
        stg = np.einsum("nij,nj->ni", np.swapaxes(sig, -1, -2), grad)
        H = 0.5 * np.sum(stg ** 2, axis=1)
        ratio = H[None, :] / ((1.0 + np.abs(phi))[None, :] * (1.0 + np.abs(c)))
        if ratio.max() <= A42C_RATIO_BOUND:
            return "bounded_ratio"
    except Exception:
        pass
    return "none"


def polynomial_model(
    controls,
    drift_coeffs,
    sigma_coeffs,
    reward_coeffs,
    reward_upper_bound: float,
    direction: str = "maximize",
    name: str = "poly",
) -> DiffusionModel:
    """1D model from per-control polynomial coefficient tables (ascending powers).

    drift_coeffs and reward_coeffs hold one coefficient list per control;
    sigma_coeffs is a single scalar polynomial for sigma(x).
    """
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    m = controls.shape[0]
    dc = [np.asarray(cf, dtype=float) for cf in drift_coeffs]
    rc = [np.asarray(cf, dtype=float) for cf in reward_coeffs]
    sc = np.asarray(sigma_coeffs, dtype=float)
    if len(dc) != m or len(rc) != m:
        raise InvalidArgument(f"need one drift and one reward coefficient list per control ({m})")

    ctrl_key = {tuple(controls[i]): i for i in range(m)}

    def which(xi):
        flat = np.asarray(xi, dtype=float).reshape(-1, controls.shape[1])
        return np.array([ctrl_key[tuple(row)] for row in flat])

    def drift(x, xi):
        xs = x[..., 0]
        idx = which(xi).reshape(np.shape(xs))
        out = np.zeros_like(xs)
        for i in range(m):
            sel = idx == i
            if np.any(sel):
                out = np.where(sel, np.polynomial.polynomial.polyval(xs, dc[i]), out)
        return out[..., None]

    def reward(x, xi):
        xs = x[..., 0]
        idx = which(xi).reshape(np.shape(xs))
        out = np.zeros_like(xs)
        for i in range(m):
            sel = idx == i
            if np.any(sel):
                out = np.where(sel, np.polynomial.polynomial.polyval(xs, rc[i]), out)
        return out

    def sigma(x):
        xs = x[..., 0]
        return np.polynomial.polynomial.polyval(xs, sc)[..., None, None]

    return DiffusionModel(
        dimension=1,
        controls=controls,
        drift=drift,
        sigma=sigma,
        reward=reward,
        reward_upper_bound=reward_upper_bound,
        direction=direction,
        name=name,
    )
