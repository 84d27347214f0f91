"""Principal eigenpairs of rate-plus-potential matrices and of the semilinear
(optimal control) operator, with Collatz-Wielandt bounds and the domain sweep.

The linear solver is shifted inverse power iteration: with s = max(c) + 1 the
matrix sI - (A + diag(c)) is a strictly diagonally dominant M-matrix, so its
inverse is entrywise positive and the iteration converges to the Perron pair
from any positive start. No time step, unconditionally stable.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretize import (FieldTables, GeneratorMatrix, Grid, apply_semilinear,
                         build_generator, build_grid, tabulate_fields)
from .errors import ConvergenceError, InvalidArgument
from .model import DiffusionModel

MAX_POWER_ITERATIONS = 10_000
MAX_POLICY_SWEEPS = 100


@dataclass
class EigenPair:
    value: float
    vector: np.ndarray               # positive, vector[center] == 1 exactly
    residual: float                  # max-norm of the eigen-equation defect
    iterations: int

    def as_dict(self):
        return {"value": self.value, "residual": self.residual,
                "iterations": self.iterations}


@dataclass
class SweepRow:
    radius: float
    bc: str
    value: float
    residual: float
    nodes: int


@dataclass
class SweepTable:
    rows: List[SweepRow]
    extrapolated_value: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["radius", "bc", "value", "residual", "nodes"])
        for r in self.rows:
            w.writerow([r.radius, r.bc, repr(r.value), repr(r.residual), r.nodes])
        return buf.getvalue()


def linear_principal_eigenpair(A: GeneratorMatrix, c_v: np.ndarray, tol: float,
                               max_iterations: int = MAX_POWER_ITERATIONS,
                               v0: Optional[np.ndarray] = None) -> EigenPair:
    """Perron eigenpair of M = A + diag(c_v) by shifted inverse power iteration."""
    if tol <= 0:
        raise InvalidArgument("tol must be positive")
    c_v = np.asarray(c_v, dtype=float)
    n = A.matrix.shape[0]
    if c_v.shape != (n,):
        raise InvalidArgument(f"c_v has shape {c_v.shape}, expected ({n},)")
    M = (A.matrix + sp.diags(c_v)).tocsr()
    s = float(c_v.max()) + 1.0
    K = (sp.identity(n, format="csc") * s - M).tocsc()
    lu = spla.splu(K)
    center = A.center_position

    v = np.ones(n) if v0 is None else np.asarray(v0, dtype=float).copy()
    v = v / v[center]
    rho_prev = None
    rho = s - 1.0
    for it in range(1, max_iterations + 1):
        w = lu.solve(v)
        theta = w[center]
        # positive inverse of an M-matrix: the iterate must stay positive
        assert theta > 0 and w.min() > 0, "shifted matrix lost the M-matrix property"
        v = w / theta
        rho = s - 1.0 / theta
        residual = float(np.max(np.abs(M @ v - rho * v)))
        if rho_prev is not None and abs(rho - rho_prev) <= tol and residual <= tol:
            return EigenPair(value=float(rho), vector=v, residual=residual, iterations=it)
        rho_prev = rho
    raise ConvergenceError(
        f"inverse power iteration did not reach tol={tol} in {max_iterations} steps "
        f"(last rho={rho}, residual={residual})",
        last_iterate=EigenPair(value=float(rho), vector=v, residual=residual,
                               iterations=max_iterations))


def _policy_matrix(generators: Sequence[GeneratorMatrix], policy: np.ndarray) -> sp.csr_matrix:
    out = None
    for k, g in enumerate(generators):
        mask = (policy == k).astype(float)
        if not mask.any():
            continue
        term = sp.diags(mask) @ g.matrix
        out = term if out is None else out + term
    return out.tocsr()


def solve_semilinear(model: DiffusionModel, grid: Grid, bc: str, tol: float,
                     max_sweeps: int = MAX_POLICY_SWEEPS,
                     tables: Optional[FieldTables] = None,
                     initial_policy: Optional[np.ndarray] = None
                     ) -> Tuple[EigenPair, np.ndarray]:
    """Policy iteration for the semilinear principal eigenpair.

    Alternates a linear Perron solve under the current policy with pointwise
    argmax (argmin for minimize) improvement; stops when the policy repeats or
    the eigenvalue stalls, and reports the residual against the semilinear
    operator.
    """
    if tables is None:
        tables = tabulate_fields(model, grid)
    generators = [build_generator(model, grid, k, bc, tables=tables)
                  for k in range(model.n_controls)]
    active = generators[0].active_index
    c_active = tables.c[:, active]

    policy = (np.zeros(len(active), dtype=np.int64) if initial_policy is None
              else np.asarray(initial_policy, dtype=np.int64).copy())
    total_iters = 0
    rho_prev = None
    pair = None
    seen = {}
    warm = None
    for sweep in range(1, max_sweeps + 1):
        A_v = _policy_matrix(generators, policy)
        gv = GeneratorMatrix(matrix=A_v, boundary_condition=bc, control_index=-1,
                             active_index=active, grid=grid)
        c_v = c_active[policy, np.arange(len(active))]
        pair = linear_principal_eigenpair(gv, c_v, tol, v0=warm)
        total_iters += pair.iterations
        warm = pair.vector
        GV, improved = apply_semilinear(generators, tables, pair.vector)
        semi_residual = float(np.max(np.abs(GV - pair.value * pair.vector)))
        if np.array_equal(improved, policy):
            return (EigenPair(pair.value, pair.vector, semi_residual, total_iters), policy)
        if (rho_prev is not None
                and abs(pair.value - rho_prev) <= tol * max(1.0, abs(pair.value))
                and semi_residual <= tol):
            return (EigenPair(pair.value, pair.vector, semi_residual, total_iters), improved)
        key = improved.tobytes()
        if key in seen and seen[key] != sweep - 1:
            # revisiting an older policy: a cycle; keep going only while rho moves
            if rho_prev is not None and abs(pair.value - rho_prev) <= 1e-15 * max(1.0, abs(pair.value)):
                raise ConvergenceError(
                    f"policy iteration cycled at sweep {sweep}",
                    last_iterate=pair, policy_cycle=(seen[key], sweep))
        seen[key] = sweep
        rho_prev = pair.value
        policy = improved
    raise ConvergenceError(
        f"policy iteration did not settle in {max_sweeps} sweeps",
        last_iterate=pair,
        policy_cycle=sorted(seen.values())[-3:])


def collatz_wielandt_bounds(generators: Sequence[GeneratorMatrix],
                            tables: FieldTables,
                            f: np.ndarray) -> Tuple[float, float]:
    """min and max over nodes of (Gf)/f; the semilinear eigenvalue sits between."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise InvalidArgument("f must be strictly positive")
    GV, _ = apply_semilinear(generators, tables, f)
    ratio = GV / f
    return float(ratio.min()), float(ratio.max())


def domain_sweep(model: DiffusionModel, radii: Sequence[float], bcs: Sequence[str],
                 nodes_per_unit: int, tol: float) -> SweepTable:
    """One semilinear solve per (radius, boundary kind), n ~ 2 r nodes_per_unit."""
    radii = list(radii)
    if any(r2 <= r1 for r1, r2 in zip(radii, radii[1:])):
        raise InvalidArgument("radii must be strictly increasing")
    if nodes_per_unit < 10:
        raise InvalidArgument("nodes_per_unit must be >= 10")
    rows = []
    for r in radii:
        n = int(round(2 * r * nodes_per_unit))
        if n % 2 == 0:
            n += 1
        n = max(n, 5)
        grid = build_grid(model.dimension, r, n)
        for bc in bcs:
            try:
                pair, _ = solve_semilinear(model, grid, bc, tol)
            except ConvergenceError as err:
                raise ConvergenceError(f"sweep solve failed at (r={r}, bc={bc}): {err}",
                                       last_iterate=err.last_iterate) from err
            rows.append(SweepRow(radius=float(r), bc=bc, value=pair.value,
                                 residual=pair.residual, nodes=grid.n_total))
    dir_rows = [row for row in rows if row.bc == "dirichlet"]
    neu_rows = [row for row in rows if row.bc == "neumann"]
    extrap = None
    if len(dir_rows) >= 3:
        v1, v2, v3 = (row.value for row in dir_rows[-3:])
        d1, d2 = v2 - v1, v3 - v2
        if d1 > 0 and 0 < d2 < d1:
            q = d2 / d1
            extrap = v3 + d2 * q / (1.0 - q)
    if extrap is None:
        if neu_rows:
            extrap = neu_rows[-1].value
        elif dir_rows:
            extrap = dir_rows[-1].value
        else:
            extrap = float("nan")
    return SweepTable(rows=rows, extrapolated_value=float(extrap))
