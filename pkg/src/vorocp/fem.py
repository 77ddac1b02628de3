"""Neumann Laplace eigenvalue solver on convex polygons.

Quadratic (6-node) triangle elements on a fan triangulation refined to a
target diameter. The smallest positive eigenvalue of  -Δu = λu  with
zero Neumann data gives the polygon's Poincaré constant as 1/sqrt(λ).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from .errors import EigenSolveError
from .geometry import Polygon, centroid, diameter

_DENSE_LIMIT = 1200       # below this many dofs a dense generalized solve is cheapest
_MAX_REFINEMENTS = 12
_RESIDUAL_REL = 1e-8      # ||K u - lambda M u|| <= tol * lambda * ||M u||


@dataclass
class TriMesh:
    """Conforming triangulation with quadratic-element node numbering.

    `nodes` stores the corner nodes first, then one midpoint node per
    edge; `edge_midpoints` maps each undirected corner pair to its
    midpoint node index. Triangles list corner indices counter-clockwise.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    edge_midpoints: dict[tuple[int, int], int]
    corner_count: int

    @property
    def dof_count(self) -> int:
        return self.nodes.shape[0]

    def element_dofs(self) -> np.ndarray:
        """(T, 6) dof indices per triangle: corners then edge midpoints."""
        tri = self.triangles
        dofs = np.empty((tri.shape[0], 6), dtype=np.int64)
        dofs[:, :3] = tri
        for t, (a, b, c) in enumerate(tri):
            dofs[t, 3] = self.edge_midpoints[_edge_key(a, b)]
            dofs[t, 4] = self.edge_midpoints[_edge_key(b, c)]
            dofs[t, 5] = self.edge_midpoints[_edge_key(c, a)]
        return dofs

    def triangle_areas(self) -> np.ndarray:
        v = self.nodes[self.triangles]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def max_edge_length(self) -> float:
        v = self.nodes[self.triangles]
        lengths = [np.hypot(*(v[:, j] - v[:, i]).T) for i, j in ((0, 1), (1, 2), (2, 0))]
        return float(np.max(lengths))

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, radians."""
        v = self.nodes[self.triangles]
        angles = []
        for i in range(3):
            a = v[:, (i + 1) % 3] - v[:, i]
            b = v[:, (i + 2) % 3] - v[:, i]
            cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
            dot = (a * b).sum(axis=1)
            angles.append(np.arctan2(np.abs(cross), dot))
        return float(np.min(angles))


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def triangulate(p: Polygon, h_target: float) -> TriMesh:
    """Fan triangulation from the centroid, 4-way refined until every
    triangle diameter is at most h_target."""
    if h_target <= 0:
        raise ValueError(f"h_target must be positive, got {h_target}")
    verts = p.vertices
    m = len(verts)
    nodes = np.vstack([verts, centroid(p)[None, :]])
    triangles = np.array([[i, (i + 1) % m, m] for i in range(m)], dtype=np.int64)

    for _ in range(_MAX_REFINEMENTS):
        lengths = _all_edge_lengths(nodes, triangles)
        if lengths.max() <= h_target:
            break
        nodes, triangles = _refine(nodes, triangles)
    else:
        raise ValueError(f"h_target {h_target} needs more than {_MAX_REFINEMENTS} refinements")

    edge_midpoints: dict[tuple[int, int], int] = {}
    mid_nodes = []
    next_id = len(nodes)
    for a, b, c in triangles:
        for u, v in ((a, b), (b, c), (c, a)):
            key = _edge_key(int(u), int(v))
            if key not in edge_midpoints:
                edge_midpoints[key] = next_id
                mid_nodes.append(0.5 * (nodes[key[0]] + nodes[key[1]]))
                next_id += 1
    all_nodes = np.vstack([nodes, np.array(mid_nodes)])
    mesh = TriMesh(all_nodes, triangles, edge_midpoints, corner_count=len(nodes))
    if np.any(mesh.triangle_areas() <= 0):
        raise EigenSolveError("triangulation produced a non-positive triangle")
    return mesh


def _all_edge_lengths(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = nodes[triangles]
    return np.concatenate([
        np.hypot(*(v[:, 1] - v[:, 0]).T),
        np.hypot(*(v[:, 2] - v[:, 1]).T),
        np.hypot(*(v[:, 0] - v[:, 2]).T),
    ])


def _refine(nodes: np.ndarray, triangles: np.ndarray):
    """Split every triangle into 4 via edge midpoints (shape preserving)."""
    midpoint: dict[tuple[int, int], int] = {}
    new_nodes = [nodes]
    next_id = len(nodes)

    def mid(a: int, b: int) -> int:
        nonlocal next_id
        key = _edge_key(a, b)
        if key not in midpoint:
            midpoint[key] = next_id
            new_nodes.append(0.5 * (nodes[key[0]] + nodes[key[1]])[None, :])
            next_id += 1
        return midpoint[key]

    new_tris = np.empty((4 * len(triangles), 3), dtype=np.int64)
    for t, (a, b, c) in enumerate(triangles):
        ab, bc, ca = mid(int(a), int(b)), mid(int(b), int(c)), mid(int(c), int(a))
        new_tris[4 * t:4 * t + 4] = [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return np.vstack(new_nodes), new_tris


# --- quadratic Lagrange element on the reference triangle (0,0)-(1,0)-(0,1) ---

def _shape_values(points: np.ndarray) -> np.ndarray:
    """(Q, 6) basis values at reference points (xi, eta)."""
    xi, eta = points[:, 0], points[:, 1]
    lam0 = 1.0 - xi - eta
    return np.column_stack([
        lam0 * (2 * lam0 - 1),
        xi * (2 * xi - 1),
        eta * (2 * eta - 1),
        4 * lam0 * xi,
        4 * xi * eta,
        4 * eta * lam0,
    ])


def _shape_gradients(points: np.ndarray) -> np.ndarray:
    """(Q, 6, 2) basis gradients in reference coordinates."""
    xi, eta = points[:, 0], points[:, 1]
    lam0 = 1.0 - xi - eta
    q = len(points)
    g = np.zeros((q, 6, 2))
    g[:, 0, 0] = 1 - 4 * lam0
    g[:, 0, 1] = 1 - 4 * lam0
    g[:, 1, 0] = 4 * xi - 1
    g[:, 2, 1] = 4 * eta - 1
    g[:, 3, 0] = 4 * (lam0 - xi)
    g[:, 3, 1] = -4 * xi
    g[:, 4, 0] = 4 * eta
    g[:, 4, 1] = 4 * xi
    g[:, 5, 0] = -4 * eta
    g[:, 5, 1] = 4 * (lam0 - eta)
    return g


# Edge-midpoint rule: exact for degree 2, enough for stiffness of quadratic
# elements on affine triangles.
_STIFF_PTS = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
_STIFF_WTS = np.full(3, 1.0 / 6.0)

# 6-point rule of degree 4: exact for the quadratic-basis mass products.
_A1, _A2 = 0.445948490915965, 0.091576213509771
_MASS_PTS = np.array([
    [_A1, _A1], [1 - 2 * _A1, _A1], [_A1, 1 - 2 * _A1],
    [_A2, _A2], [1 - 2 * _A2, _A2], [_A2, 1 - 2 * _A2],
])
_MASS_WTS = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3) / 2.0

_MASS_REF = np.einsum("q,qa,qb->ab", _MASS_WTS, _shape_values(_MASS_PTS), _shape_values(_MASS_PTS))
_STIFF_DN = _shape_gradients(_STIFF_PTS)


def assemble(mesh: TriMesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Stiffness and mass matrices over the quadratic Lagrange basis.

    Pure Neumann problem: no boundary rows are modified, so the stiffness
    kernel is exactly the constant vector.
    """
    dofs = mesh.element_dofs()
    v = mesh.nodes[mesh.triangles]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]     # 2 x area, positive

    # inverse Jacobian rows, per triangle
    inv = np.empty((len(det), 2, 2))
    inv[:, 0, 0] = e2[:, 1] / det
    inv[:, 0, 1] = -e2[:, 0] / det
    inv[:, 1, 0] = -e1[:, 1] / det
    inv[:, 1, 1] = e1[:, 0] / det
    metric = np.einsum("tik,tjk->tij", inv, inv) * det[:, None, None]

    k_el = np.einsum("q,qai,tij,qbj->tab", _STIFF_WTS, _STIFF_DN, metric, _STIFF_DN)
    m_el = det[:, None, None] * _MASS_REF[None, :, :]

    n = mesh.dof_count
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    stiffness = sp.coo_matrix((k_el.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mass = sp.coo_matrix((m_el.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    # exact symmetry (assembly is symmetric up to rounding)
    stiffness = (stiffness + stiffness.T) * 0.5
    mass = (mass + mass.T) * 0.5
    return stiffness, mass


def _has_constant_kernel(k: sp.spmatrix) -> bool:
    ones = np.ones(k.shape[0])
    return np.abs(k @ ones).max() <= 1e-10 * np.abs(k).sum(axis=1).max()


def smallest_positive_eigenvalue(k, m, sigma_hint: float | None = None) -> float:
    lam, _ = _smallest_positive_eigenpair(k, m, sigma_hint)
    return lam


def _smallest_positive_eigenpair(k, m, sigma_hint: float | None = None):
    """Smallest λ > 0 of K u = λ M u with the constant mode deflated.

    Dense generalized solve at small sizes; shift-invert Lanczos above.
    `sigma_hint` is a lower bound for the target eigenvalue, used as the
    (negated) shift; it keeps the constant mode well separated.
    """
    k = sp.csr_matrix(k) if not sp.issparse(k) else k.tocsr()
    m = sp.csr_matrix(m) if not sp.issparse(m) else m.tocsr()
    n = k.shape[0]
    if n < 6:
        raise ValueError(f"matrix dimension {n} too small, need >= 6")
    deflate = _has_constant_kernel(k)

    if n <= _DENSE_LIMIT:
        vals, vecs = scipy.linalg.eigh(k.toarray(), m.toarray())
        if deflate:
            lam, u = float(vals[1]), vecs[:, 1]
            if not vals[0] < 1e-6 * max(vals[1], 1e-300):
                raise EigenSolveError("constant mode not separated",
                                      {"lambda0": vals[0], "lambda1": vals[1]})
        else:
            positive = np.where(vals > 1e-12 * max(abs(vals[-1]), 1e-300))[0]
            if len(positive) == 0:
                raise EigenSolveError("no positive eigenvalue found", {"dim": n})
            lam, u = float(vals[positive[0]]), vecs[:, positive[0]]
    else:
        if sigma_hint is not None and sigma_hint > 0:
            sigma = -float(sigma_hint)
        else:
            sigma = -1e-3 * float(np.median(k.diagonal() / m.diagonal()))
        # fixed start vector: the default is drawn from global state,
        # which would make results differ between worker processes
        v0 = np.random.default_rng(0xA11CE).standard_normal(n)
        try:
            vals, vecs = eigsh(k, k=4, M=m, sigma=sigma, which="LM",
                               maxiter=10 * n, tol=0, v0=v0)
        except (ArpackError, ArpackNoConvergence) as exc:
            raise EigenSolveError("shift-invert Lanczos failed",
                                  {"dim": n, "sigma": sigma, "error": str(exc)}) from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        threshold = 1e-6 * abs(sigma) if deflate else 0.0
        positive = np.where(vals > threshold)[0]
        if len(positive) == 0:
            raise EigenSolveError("no eigenvalue above the deflation threshold",
                                  {"dim": n, "sigma": sigma, "values": vals.tolist()})
        lam, u = float(vals[positive[0]]), vecs[:, positive[0]]

    if deflate:
        u = _deflate_constant(m, u)

    lam, residual, bound = _residual(k, m, u)
    if residual > bound:
        # thin elements can leave the Lanczos residual a bit above the
        # contract; a shifted inverse-iteration step recovers it
        lam, u = _refine_eigenpair(k, m, lam, u, deflate)
        lam, residual, bound = _residual(k, m, u)
    if residual > bound:
        raise EigenSolveError("eigenvalue residual too large",
                              {"dim": n, "lambda": lam, "residual": residual, "bound": bound})
    if not lam > 0:
        raise EigenSolveError("non-positive eigenvalue", {"lambda": lam})
    return lam, u


def _deflate_constant(m: sp.spmatrix, u: np.ndarray) -> np.ndarray:
    ones = np.ones(len(u))
    m_ones = m @ ones
    return u - ones * (m_ones @ u) / (m_ones @ ones)


def _residual(k, m, u: np.ndarray):
    """Rayleigh quotient of u plus its residual and the contract bound."""
    mu = m @ u
    lam = float((u @ (k @ u)) / (u @ mu))
    residual = float(np.linalg.norm(k @ u - lam * mu))
    bound = _RESIDUAL_REL * lam * float(np.linalg.norm(mu))
    return lam, residual, bound


def _refine_eigenpair(k, m, lam: float, u: np.ndarray, deflate: bool,
                      iterations: int = 3):
    """Inverse iteration with a shift just below lambda.

    Returns the iterate with the smallest residual; on ill-conditioned
    meshes the iteration saturates at the float64 floor rather than
    converging monotonically.
    """
    from scipy.sparse.linalg import splu

    shift = lam * (1.0 - 1e-3)
    solver = splu((k - shift * m).tocsc())
    best = (np.inf, lam, u)
    for _ in range(iterations):
        u = solver.solve(m @ u)
        if deflate:
            u = _deflate_constant(m, u)
        u = u / math.sqrt(u @ (m @ u))
        lam, residual, _ = _residual(k, m, u)
        if residual < best[0]:
            best = (residual, lam, u.copy())
    return best[1], best[2]


@dataclass(frozen=True)
class EigenResult:
    lambda1: float
    c_p: float
    dof_count: int
    h_used: float


def poincare_constant(p: Polygon, mesh_divisor: float = 20.0) -> EigenResult:
    """Poincaré constant of a convex polygon via the Neumann eigenproblem.

    The mesh target diameter is the polygon diameter divided by
    `mesh_divisor`; the constant is 1/sqrt of the smallest positive
    eigenvalue.
    """
    d = diameter(p)
    h = d / mesh_divisor
    mesh = triangulate(p, h)
    stiffness, mass = assemble(mesh)
    # any convex polygon satisfies lambda_1 >= (pi/d)^2, a safe shift scale
    lam, _ = _smallest_positive_eigenpair(stiffness, mass, sigma_hint=(math.pi / d) ** 2)
    return EigenResult(lambda1=lam, c_p=1.0 / math.sqrt(lam), dof_count=mesh.dof_count, h_used=h)
