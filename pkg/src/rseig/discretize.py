"""Monotone finite-difference generators on tensor grids.

The scheme per control: central second differences for the diffusion part,
first-order upwinding for the drift (forward difference where the drift
component is positive, backward where negative), and in 2D the 7-point
splitting for the cross term, refused when |a12| > min(a11, a22). Neumann
boundaries fold ghost nodes back by even reflection, which keeps every row of
the rate matrix conservative; Dirichlet eliminates boundary nodes and drops
their coupling mass (absorption).

The drift can alternatively be discretized by central differences wherever
h |b_i| <= a_ii - |a12| (scheme="hybrid"), which stays monotone and is second
order; the occupation module uses that for its extended generators.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import EllipticityError, InvalidArgument, NonMonotoneScheme
from .model import DiffusionModel, evaluate_fields


@dataclass
class Grid:
    dimension: int
    radius: float
    nodes_per_axis: int
    spacing: float
    axis: np.ndarray                 # (nodes_per_axis,)
    nodes: np.ndarray                # (n_total, d), row-major in 2D
    boundary_mask: np.ndarray        # (n_total,) bool
    center_index: int

    @property
    def n_total(self) -> int:
        return self.nodes.shape[0]


@dataclass
class GeneratorMatrix:
    matrix: sp.csr_matrix            # square over active nodes
    boundary_condition: str          # "neumann" | "dirichlet"
    control_index: int
    active_index: np.ndarray         # positions of active nodes in the grid
    grid: Grid

    @property
    def center_position(self) -> int:
        """Index of the grid center inside the active set."""
        pos = np.searchsorted(self.active_index, self.grid.center_index)
        if pos >= len(self.active_index) or self.active_index[pos] != self.grid.center_index:
            raise InvalidArgument("grid center is not an active node")
        return int(pos)


@dataclass
class FieldTables:
    b: np.ndarray                    # (m, n, d)
    c: np.ndarray                    # (m, n)
    a: np.ndarray                    # (n, d, d)
    sigma: np.ndarray                # (n, d, d)
    direction: str
    grid: Grid


def build_grid(dimension: int, radius: float, nodes_per_axis: int) -> Grid:
    if dimension not in (1, 2):
        raise InvalidArgument(f"dimension must be 1 or 2, got {dimension}")
    if radius <= 0:
        raise InvalidArgument("grid.radius must be positive")
    n = int(nodes_per_axis)
    if n % 2 == 0:
        raise InvalidArgument(
            f"nodes_per_axis must be odd (got {n}): the center node must exist "
            "for the normalization V(0)=1")
    if n < 5:
        raise InvalidArgument(f"nodes_per_axis must be >= 5, got {n}")
    h = 2.0 * radius / (n - 1)
    axis = -radius + h * np.arange(n)
    if dimension == 1:
        nodes = axis.reshape(-1, 1)
        boundary = np.zeros(n, dtype=bool)
        boundary[0] = boundary[-1] = True
    else:
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        nodes = np.stack([axis[ii.ravel()], axis[jj.ravel()]], axis=1)
        edge = (ii == 0) | (ii == n - 1) | (jj == 0) | (jj == n - 1)
        boundary = edge.ravel()
    center = int(np.argmin(np.sum(nodes ** 2, axis=1)))
    return Grid(dimension, float(radius), n, h, axis, nodes, boundary, center)


def tabulate_fields(model: DiffusionModel, grid: Grid) -> FieldTables:
    if model.dimension != grid.dimension:
        raise InvalidArgument(
            f"model dimension {model.dimension} != grid dimension {grid.dimension}")
    b, c, a, sig = evaluate_fields(model, grid.nodes)
    return FieldTables(b=b, c=c, a=a, sigma=sig, direction=model.direction, grid=grid)


def _axis_weights(bi, aii_eff, h, scheme):
    """(left, right) off-diagonal weights from the drift on one axis.

    aii_eff is the diffusion weight available after the cross-term splitting;
    the central option is taken only while it keeps both weights nonnegative.
    """
    if scheme == "hybrid" and abs(bi) * h <= aii_eff:
        return -bi / (2.0 * h), bi / (2.0 * h)
    if bi > 0:
        return 0.0, bi / h
    return -bi / h, 0.0


def assemble_rate_matrix(grid: Grid, b_nodes: np.ndarray, a_nodes: np.ndarray,
                         bc: str, scheme: str = "upwind") -> sp.csr_matrix:
    """Core stencil assembly from tabulated per-node drift and diffusion.

    Returns the rate matrix over active nodes (all nodes for Neumann, interior
    for Dirichlet). Diagonals are the negated row off-diagonal totals, so
    Neumann rows are conservative to rounding.
    """
    if bc not in ("neumann", "dirichlet"):
        raise InvalidArgument(f"boundary condition must be neumann|dirichlet, got {bc!r}")
    if scheme not in ("upwind", "hybrid"):
        raise InvalidArgument(f"unknown drift scheme {scheme!r}")
    n = grid.nodes_per_axis
    h = grid.spacing
    d = grid.dimension
    h2 = h * h

    if d == 1:
        active = np.arange(n) if bc == "neumann" else np.arange(1, n - 1)
    else:
        if bc == "neumann":
            active = np.arange(n * n)
        else:
            ii, jj = np.divmod(np.arange(n * n), n)
            active = np.where((ii > 0) & (ii < n - 1) & (jj > 0) & (jj < n - 1))[0]
    pos = -np.ones(grid.n_total, dtype=np.int64)
    pos[active] = np.arange(len(active))

    rows, cols, vals = [], [], []

    def reflect(idx):
        # even reflection of a per-axis index across the boundary
        if idx < 0:
            return 1
        if idx > n - 1:
            return n - 2
        return idx

    for node in active:
        a = a_nodes[node]
        b = b_nodes[node]
        if d == 1:
            mi = (node,)
        else:
            mi = divmod(node, n)
        a12 = 0.0
        if d == 2:
            a12 = float(a[0, 1])
            if abs(a12) > min(a[0, 0], a[1, 1]) + 1e-14:
                raise NonMonotoneScheme(
                    f"|a12|={abs(a12):.4g} exceeds min(a11,a22)="
                    f"{min(a[0, 0], a[1, 1]):.4g} at node {node}; "
                    "the 7-point splitting would lose positivity")
        off = []  # (target multi-index delta, weight)
        row_sum = 0.0
        for ax in range(d):
            aii = float(a[ax, ax])
            if aii <= 0.0:
                raise EllipticityError(f"zero diffusion on axis {ax} at node {node}")
            aii_eff = aii - abs(a12)
            diff_w = aii_eff / (2.0 * h2)
            dl, dr = _axis_weights(float(b[ax]), aii_eff, h, scheme)
            step = [0] * d
            step[ax] = -1
            off.append((tuple(step), diff_w + dl))
            step = [0] * d
            step[ax] = 1
            off.append((tuple(step), diff_w + dr))
        if d == 2 and a12 != 0.0:
            w = abs(a12) / (2.0 * h2)
            if a12 > 0:
                off.append(((1, 1), w))
                off.append(((-1, -1), w))
            else:
                off.append(((1, -1), w))
                off.append(((-1, 1), w))

        for delta, w in off:
            if w == 0.0:
                continue
            tgt = [mi[k] + delta[k] for k in range(d)]
            if bc == "neumann":
                tgt = [reflect(t) for t in tgt]
            else:
                if any(t < 1 or t > n - 2 for t in tgt):
                    row_sum += w  # dropped coupling still leaves through the diagonal
                    continue
            flat = tgt[0] if d == 1 else tgt[0] * n + tgt[1]
            rows.append(pos[node])
            cols.append(pos[flat])
            vals.append(w)
            row_sum += w
        rows.append(pos[node])
        cols.append(pos[node])
        vals.append(-row_sum)

    na = len(active)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(na, na)).tocsr()
    return mat


def build_generator(model: DiffusionModel, grid: Grid, control_index: int, bc: str,
                    tables: Optional[FieldTables] = None,
                    scheme: str = "upwind") -> GeneratorMatrix:
    if tables is None:
        tables = tabulate_fields(model, grid)
    if not 0 <= control_index < model.n_controls:
        raise InvalidArgument(f"control_index {control_index} out of range")
    mat = assemble_rate_matrix(grid, tables.b[control_index], tables.a, bc, scheme)
    n = grid.nodes_per_axis
    if bc == "neumann":
        active = np.arange(grid.n_total)
    elif grid.dimension == 1:
        active = np.arange(1, n - 1)
    else:
        ii, jj = np.divmod(np.arange(n * n), n)
        active = np.where((ii > 0) & (ii < n - 1) & (jj > 0) & (jj < n - 1))[0]
    return GeneratorMatrix(matrix=mat, boundary_condition=bc,
                           control_index=control_index, active_index=active, grid=grid)


def apply_semilinear(generators, tables: FieldTables, V: np.ndarray):
    """(GV)(x) = opt over controls of [(A_xi V)(x) + c(x,xi) V(x)].

    Returns (GV, policy) with ties broken toward the lowest control index.
    opt is max or min according to the tabulated direction.
    """
    V = np.asarray(V, dtype=float)
    if np.any(V <= 0):
        raise InvalidArgument("V must be strictly positive")
    active = generators[0].active_index
    for g in generators[1:]:
        if not np.array_equal(g.active_index, active):
            raise InvalidArgument("generators must share one sparsity domain")
    vals = np.stack([g.matrix @ V + tables.c[g.control_index][active] * V
                     for g in generators])
    if tables.direction == "maximize":
        policy = np.argmax(vals, axis=0)
        GV = vals.max(axis=0)
    else:
        policy = np.argmin(vals, axis=0)
        GV = vals.min(axis=0)
    return GV, policy.astype(np.int64)


def gradient_on_grid(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Central-difference gradient of a full-grid node field, one-sided at the
    boundary. Returns (n_total, d)."""
    n = grid.nodes_per_axis
    if grid.dimension == 1:
        return np.gradient(values, grid.spacing).reshape(-1, 1)
    f = values.reshape(n, n)
    g0, g1 = np.gradient(f, grid.spacing)
    return np.stack([g0.ravel(), g1.ravel()], axis=1)


def write_triplets(gen: GeneratorMatrix, path) -> None:
    """Debug export: one 'row col value' line per stored entry."""
    coo = gen.matrix.tocoo()
    with open(path, "w") as fh:
        fh.write("# row col value\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v!r}\n")
