"""Path estimates of the risk-sensitive value: direct Euler-Maruyama and the
ground-state importance sampler.

Randomness: each path index i draws from its own counter-based stream
Philox(key=(seed, i)). Paths are simulated in fixed-size blocks purely as a
vectorization detail; estimates are bit-identical for any block size or worker
count because accumulation happens in path-index order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .discretize import Grid, gradient_on_grid
from .eigensolve import EigenPair
from .errors import DivergenceError, ExtrapolationError, InvalidArgument
from .model import DiffusionModel

BLOWUP_RADIUS = 1e6
_BLOCK_BYTES = 2.4e8


@dataclass
class SimConfig:
    horizon: float
    dt: float
    paths: int
    seed: int
    start: np.ndarray
    boundary_radius: Optional[float] = None

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidArgument("sim.dt must be positive")
        if self.horizon < 10 * self.dt:
            raise InvalidArgument("sim.horizon must be at least 10 dt")
        if self.paths < 100:
            raise InvalidArgument("sim.paths must be at least 100")
        self.start = np.atleast_1d(np.asarray(self.start, dtype=float))
        self.seed = int(self.seed)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class PathEstimate:
    value: float
    standard_error: float
    effective_sample_size: float
    estimator: str
    variance_reduction: Optional[float] = None

    def as_dict(self):
        out = {"value": self.value, "standard_error": self.standard_error,
               "effective_sample_size": self.effective_sample_size,
               "estimator": self.estimator}
        if self.variance_reduction is not None:
            out["variance_reduction"] = self.variance_reduction
        return out


class GridPolicy:
    """Stationary Markov control tabulated on a grid, applied by nearest node."""

    def __init__(self, grid: Grid, indices: np.ndarray, controls: np.ndarray):
        self.grid = grid
        self.indices = np.asarray(indices, dtype=np.int64)
        self.controls = np.atleast_2d(np.asarray(controls, dtype=float))
        if self.indices.shape != (grid.n_total,):
            raise InvalidArgument("policy must assign a control index to every grid node")

    @classmethod
    def from_solution(cls, grid: Grid, controls, policy_active: np.ndarray,
                      active_index: np.ndarray) -> "GridPolicy":
        """Extend an active-node policy to the full grid (boundary nodes copy
        their clamped interior neighbor)."""
        n = grid.nodes_per_axis
        full = np.zeros(grid.n_total, dtype=np.int64)
        lookup = -np.ones(grid.n_total, dtype=np.int64)
        lookup[active_index] = np.arange(len(active_index))
        pol = np.asarray(policy_active, dtype=np.int64)
        for node in range(grid.n_total):
            if lookup[node] >= 0:
                full[node] = pol[lookup[node]]
                continue
            if grid.dimension == 1:
                src = min(max(node, 1), n - 2)
            else:
                i, j = divmod(node, n)
                src = min(max(i, 1), n - 2) * n + min(max(j, 1), n - 2)
            full[node] = pol[lookup[src]]
        return cls(grid, full, controls)

    def node_indices(self, X: np.ndarray) -> np.ndarray:
        g = self.grid
        idx = np.clip(np.rint((X + g.radius) / g.spacing).astype(np.int64),
                      0, g.nodes_per_axis - 1)
        if g.dimension == 1:
            return idx[:, 0]
        return idx[:, 0] * g.nodes_per_axis + idx[:, 1]

    def controls_at(self, X: np.ndarray) -> np.ndarray:
        return self.controls[self.indices[self.node_indices(X)]]


def _reflect(X: np.ndarray, radius: float) -> np.ndarray:
    # mirror each coordinate into [-radius, radius]; exact sawtooth fold handles
    # overshoots of any size
    period = 4.0 * radius
    y = np.mod(X + radius, period)
    return np.where(y <= 2.0 * radius, y - radius, 3.0 * radius - y)


def run_paths(drift_fn: Callable, sigma_fn: Callable, reward_fn: Callable,
              cfg: SimConfig, dimension: int,
              snapshot_steps: Sequence[int] = (),
              hull_radius: Optional[float] = None,
              block_paths: Optional[int] = None):
    """Euler-Maruyama core. Returns (S, XT, snaps) where S[i] is the
    left-endpoint integral of the reward along path i, XT the terminal states,
    and snaps maps a step index to (S, X) arrays recorded at that step."""
    nsteps = cfg.n_steps
    d = dimension
    if block_paths is None:
        block_paths = int(max(1, min(cfg.paths, _BLOCK_BYTES // (nsteps * d * 8))))
    sq = np.sqrt(cfg.dt)
    S = np.empty(cfg.paths)
    XT = np.empty((cfg.paths, d))
    snapshot_steps = sorted(set(int(k) for k in snapshot_steps))
    snaps = {k: (np.empty(cfg.paths), np.empty((cfg.paths, d))) for k in snapshot_steps}
    for lo in range(0, cfg.paths, block_paths):
        hi = min(lo + block_paths, cfg.paths)
        gens = [np.random.Generator(np.random.Philox(key=np.array([cfg.seed, i], dtype=np.uint64)))
                for i in range(lo, hi)]
        Z = np.stack([g.standard_normal((nsteps, d)) for g in gens])
        B = hi - lo
        X = np.broadcast_to(cfg.start, (B, d)).copy()
        acc = np.zeros(B)
        for k in range(nsteps):
            if k in snaps:
                snaps[k][0][lo:hi] = acc
                snaps[k][1][lo:hi] = X
            acc = acc + reward_fn(X) * cfg.dt
            sig = sigma_fn(X)
            X = X + drift_fn(X) * cfg.dt + sq * np.einsum("bij,bj->bi", sig, Z[:, k])
            if cfg.boundary_radius is not None:
                X = _reflect(X, cfg.boundary_radius)
            if hull_radius is not None and np.any(np.abs(X) > hull_radius):
                bad = lo + int(np.argmax(np.any(np.abs(X) > hull_radius, axis=1)))
                raise ExtrapolationError(
                    f"path {bad} left the interpolation hull |x| <= {hull_radius}; "
                    "enlarge the grid or set a reflection radius")
            if np.any(np.abs(X) > BLOWUP_RADIUS):
                bad = lo + int(np.argmax(np.any(np.abs(X) > BLOWUP_RADIUS, axis=1)))
                raise DivergenceError(f"path {bad} blew up (|x| > {BLOWUP_RADIUS:g})")
        if nsteps in snaps:
            snaps[nsteps][0][lo:hi] = acc
            snaps[nsteps][1][lo:hi] = X
        S[lo:hi] = acc
        XT[lo:hi] = X
    return S, XT, snaps


def _log_mean_exp_stats(logw: np.ndarray) -> Tuple[float, float, float]:
    """(log mean exp, delta-method SE of the log-mean, effective sample size)."""
    lme = float(logsumexp(logw) - np.log(len(logw)))
    w = np.exp(logw - logw.max())
    mean = w.mean()
    se = float(w.std(ddof=0) / (mean * np.sqrt(len(w)))) if mean > 0 else 0.0
    ess = float(w.sum() ** 2 / np.sum(w ** 2))
    return lme, se, ess


def simulate_value(model: DiffusionModel, policy: GridPolicy, cfg: SimConfig,
                   block_paths: Optional[int] = None,
                   return_paths: bool = False):
    """Direct estimator: (1/T) log mean exp(integral of c) under the policy."""
    def drift_fn(X):
        return np.asarray(model.drift(X, policy.controls_at(X)), dtype=float)

    def reward_fn(X):
        return np.asarray(model.reward(X, policy.controls_at(X)), dtype=float)

    S, XT, _ = run_paths(drift_fn, model.sigma, reward_fn, cfg, model.dimension,
                         block_paths=block_paths)
    T = cfg.horizon
    lme, se, ess = _log_mean_exp_stats(S)
    est = PathEstimate(value=lme / T, standard_error=se / T,
                       effective_sample_size=ess, estimator="direct")
    if return_paths:
        return est, S, XT
    return est


def _interp_field(grid: Grid, values: np.ndarray):
    if grid.dimension == 1:
        axis = grid.axis
        return lambda X: np.interp(X[:, 0], axis, values)
    from scipy.interpolate import RegularGridInterpolator

    n = grid.nodes_per_axis
    rgi = RegularGridInterpolator((grid.axis, grid.axis), values.reshape(n, n),
                                  method="linear", bounds_error=False, fill_value=None)
    return lambda X: rgi(X)


def twisted_value(model: DiffusionModel, policy: GridPolicy, pair: EigenPair,
                  grid: Grid, cfg: SimConfig,
                  direct_standard_error: Optional[float] = None,
                  block_paths: Optional[int] = None) -> PathEstimate:
    """Ground-state importance sampler.

    Simulates the twisted dynamics (drift gains a grad log Phi, interpolated
    piecewise-linearly from the grid) and returns
    rho + (1/T) log( Phi(x0) mean[1/Phi(X_T)] ). Paths must stay inside the
    grid hull; leaving it raises ExtrapolationError.
    """
    if len(pair.vector) != grid.n_total:
        raise InvalidArgument("eigenpair must cover the full (neumann) grid")
    phi = np.log(pair.vector)
    grad = gradient_on_grid(phi, grid)
    phi_at = _interp_field(grid, phi)
    grad_at = [_interp_field(grid, grad[:, j]) for j in range(grid.dimension)]

    def drift_fn(X):
        xi = policy.controls_at(X)
        b = np.asarray(model.drift(X, xi), dtype=float)
        sig = np.asarray(model.sigma(X), dtype=float)
        a = sig @ np.swapaxes(sig, -1, -2)
        g = np.stack([ga(X) for ga in grad_at], axis=1)
        return b + np.einsum("bij,bj->bi", a, g)

    def reward_fn(X):
        return np.zeros(X.shape[0])

    _, XT, _ = run_paths(drift_fn, model.sigma, reward_fn, cfg, model.dimension,
                         hull_radius=grid.radius, block_paths=block_paths)
    T = cfg.horizon
    phi0 = float(phi_at(cfg.start.reshape(1, -1))[0])
    logw = -phi_at(XT)
    lme, se, ess = _log_mean_exp_stats(logw)
    value = pair.value + (phi0 + lme) / T
    se_t = se / T
    vr = None
    if direct_standard_error is not None and se_t > 0:
        vr = float(direct_standard_error / se_t)
    return PathEstimate(value=float(value), standard_error=se_t,
                        effective_sample_size=ess, estimator="twisted",
                        variance_reduction=vr)


@dataclass
class OptimalityGapReport:
    estimates: List[PathEstimate]
    margins: List[float]              # candidate value minus each other value
    error_budgets: List[float]        # 2 * (se_candidate + se_other)
    separated: List[bool]
    pde_value: float

    def as_dict(self):
        return {"estimates": [e.as_dict() for e in self.estimates],
                "margins": self.margins, "error_budgets": self.error_budgets,
                "separated": self.separated, "pde_value": self.pde_value}


def optimality_gap(model: DiffusionModel, policies: Sequence[GridPolicy],
                   pair: EigenPair, cfg: SimConfig,
                   block_paths: Optional[int] = None) -> OptimalityGapReport:
    """Estimate the value under each policy; the first entry is the candidate
    optimizer and must come out on top beyond the error budget."""
    if len(policies) < 2:
        raise InvalidArgument("need at least two policies to compare")
    ests = [simulate_value(model, p, cfg, block_paths=block_paths) for p in policies]
    best = ests[0]
    margins, budgets, sep = [], [], []
    for other in ests[1:]:
        margins.append(best.value - other.value)
        budgets.append(2.0 * (best.standard_error + other.standard_error))
        sep.append(margins[-1] > budgets[-1])
    return OptimalityGapReport(estimates=ests, margins=margins,
                               error_budgets=budgets, separated=sep,
                               pde_value=pair.value)
