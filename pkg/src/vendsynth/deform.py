"""Randomized surface deformation with a rigidity/smoothness energy.

The energy of candidate positions ``V'`` is::

    E = sum_i lam_i * sum_{j in N(i)} |e'_ij - R_i e_ij|^2
      + sum_i (1 - lam_i) * |L(v'_i) - R_i L(v_i)|^2
      + sum_{h in handles} |v'_h - c_h|^2

with uniform Laplacian vectors ``L(v_i) = v_i - mean(v_j, j in N(i))`` and the
Laplacian transform tied to the local rotation. The solver alternates an
exact per-vertex rotation fit and a sparse linear solve for the positions, so
the energy never increases.

Coincident vertices (UV seams) are merged before solving and share a role.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .geometry import TriMesh, one_ring, triangle_areas, weld

log = logging.getLogger(__name__)

RIGID_LAMBDA = 0.9
SOFT_LAMBDA = 0.3


class DeformationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DeformationSpec:
    """Constraint data for one deformation.

    ``handles`` index mesh vertices and ``targets`` holds the matching goal
    positions. Handles, ``neighbors`` and ``fixed`` partition the vertices.
    """

    handles: np.ndarray
    targets: np.ndarray
    neighbors: np.ndarray
    fixed: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.handles, dtype=np.int64).reshape(-1)
        c = np.asarray(self.targets, dtype=np.float64).reshape(-1, 3)
        nb = np.asarray(self.neighbors, dtype=np.int64).reshape(-1)
        fx = np.asarray(self.fixed, dtype=np.int64).reshape(-1)
        lam = np.asarray(self.lam, dtype=np.float64).reshape(-1)
        if len(c) != len(h):
            raise DeformationError("need one target per handle")
        if not np.all(np.isfinite(c)):
            raise DeformationError("handle targets must be finite")
        if np.any((lam < 0) | (lam > 1)) or not np.all(np.isfinite(lam)):
            raise DeformationError("lambda must lie in [0, 1]")
        allv = np.concatenate([h, nb, fx])
        n = len(lam)
        if len(allv) != n or not np.array_equal(np.sort(allv), np.arange(n)):
            raise DeformationError("handles, neighbors and fixed must partition all vertices")
        for name, a in (("handles", h), ("targets", c), ("neighbors", nb), ("fixed", fx), ("lam", lam)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_vertices(self) -> int:
        return len(self.lam)


@dataclass
class SolverState:
    rotations: np.ndarray  # (n, 3, 3), welded vertices
    laplacian_transforms: np.ndarray  # tied to rotations
    positions: np.ndarray  # (n, 3), welded vertices


@dataclass
class DeformResult:
    mesh: TriMesh
    state: SolverState
    energies: list[float] = field(default_factory=list)
    iterations: int = 0


class _Problem:
    """Welded connectivity, constraint roles and the constant system matrix."""

    def __init__(self, mesh: TriMesh, spec: DeformationSpec):
        if spec.n_vertices != mesh.n_vertices:
            raise DeformationError(
                f"spec covers {spec.n_vertices} vertices, mesh has {mesh.n_vertices}"
            )
        self.rest, self.inverse, wtris = weld(mesh)
        n = len(self.rest)
        self.n = n
        self.nbrs = one_ring(n, wtris)

        role = np.full(mesh.n_vertices, 2, dtype=np.int8)  # 0 handle, 1 neighbour, 2 fixed
        role[spec.handles] = 0
        role[spec.neighbors] = 1
        wrole = np.empty(n, dtype=np.int8)
        wlam = np.empty(n)
        wrole[self.inverse] = role
        wlam[self.inverse] = spec.lam
        bad = np.flatnonzero((wrole[self.inverse] != role) | (wlam[self.inverse] != spec.lam))
        if bad.size:
            raise DeformationError(
                f"coincident vertices disagree on role or lambda at vertex {int(bad[0])}"
            )
        wtarget = np.full((n, 3), np.nan)
        for vi, target in zip(spec.handles, spec.targets):
            w = self.inverse[vi]
            if np.all(np.isnan(wtarget[w])):
                wtarget[w] = target
            elif not np.array_equal(wtarget[w], target):
                raise DeformationError(f"coincident handles have different targets at vertex {vi}")
        self.lam = wlam
        self.handles = np.flatnonzero(wrole == 0)
        self.targets = wtarget[self.handles]
        self.free = np.flatnonzero(wrole != 2)
        self.fixed = np.flatnonzero(wrole == 2)

        deg = np.array([len(x) for x in self.nbrs])
        self.src = np.repeat(np.arange(n), deg)
        self.dst = np.concatenate(self.nbrs) if n else np.zeros(0, dtype=np.int64)
        self.deg = deg
        self.has_lap = deg > 0
        self._build_matrix()

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        sums = np.zeros_like(x)
        np.add.at(sums, self.src, x[self.dst])
        mean = np.divide(sums, self.deg[:, None], out=np.zeros_like(x), where=self.has_lap[:, None])
        return np.where(self.has_lap[:, None], x - mean, 0.0)

    def _build_matrix(self):
        n = self.n
        ne = len(self.src)
        ea = np.sqrt(self.lam[self.src])
        rows = np.concatenate([np.arange(ne), np.arange(ne)])
        cols = np.concatenate([self.src, self.dst])
        vals = np.concatenate([ea, -ea])
        edge = sp.csr_matrix((vals, (rows, cols)), shape=(ne, n))

        lap_idx = np.flatnonzero(self.has_lap)
        lw = np.sqrt(1.0 - self.lam)
        lr, lc, lv = [], [], []
        for r, i in enumerate(lap_idx):
            lr.append(r)
            lc.append(i)
            lv.append(lw[i])
            nb = self.nbrs[i]
            lr.extend([r] * len(nb))
            lc.extend(nb.tolist())
            lv.extend([-lw[i] / len(nb)] * len(nb))
        lap = sp.csr_matrix((lv, (lr, lc)), shape=(len(lap_idx), n))

        hnd = sp.csr_matrix(
            (np.ones(len(self.handles)), (np.arange(len(self.handles)), self.handles)),
            shape=(len(self.handles), n),
        )
        self.lap_idx = lap_idx
        self.edge_w = ea
        self.lap_w = lw[lap_idx]
        A = sp.vstack([edge, lap, hnd]).tocsc()
        self.A_free = A[:, self.free]
        self.A_fixed = A[:, self.fixed]
        self._check_anchored()
        if len(self.free):
            normal = (self.A_free.T @ self.A_free).tocsc()
            try:
                self.lu = splu(normal)
            except RuntimeError as exc:
                raise DeformationError(f"singular global system: {exc}") from None
        else:
            self.lu = None

    def _check_anchored(self):
        free = self.free
        if not len(free):
            return
        pos = np.full(self.n, -1)
        pos[free] = np.arange(len(free))
        mask = (pos[self.src] >= 0) & (pos[self.dst] >= 0)
        g = sp.csr_matrix(
            (np.ones(mask.sum()), (pos[self.src[mask]], pos[self.dst[mask]])),
            shape=(len(free), len(free)),
        )
        ncomp, labels = connected_components(g, directed=False)
        anchored = np.zeros(ncomp, dtype=bool)
        anchored[labels[pos[self.handles]]] = True
        touches_fixed = (pos[self.src] >= 0) & (pos[self.dst] < 0)
        anchored[labels[pos[self.src[touches_fixed]]]] = True
        if not anchored.all():
            bad = free[labels == np.flatnonzero(~anchored)[0]]
            raise DeformationError(
                f"singular global system: movable component with {len(bad)} vertices "
                f"(e.g. vertex {int(bad[0])}) has no fixed neighbour or handle"
            )

    def fit_rotations(self, x: np.ndarray) -> np.ndarray:
        """Optimal per-vertex rotations for positions ``x`` (welded)."""
        e0 = self.rest[self.src] - self.rest[self.dst]
        e1 = x[self.src] - x[self.dst]
        cov = np.zeros((self.n, 3, 3))
        np.add.at(cov, self.src, self.lam[self.src, None, None] * np.einsum("ki,kj->kij", e0, e1))
        l0 = self.laplacian(self.rest)
        l1 = self.laplacian(x)
        cov += (1.0 - self.lam)[:, None, None] * np.einsum("ki,kj->kij", l0, l1)
        return procrustes_rotations(cov)

    def energy(self, x: np.ndarray, rot: np.ndarray | None = None) -> float:
        if rot is None:
            rot = self.fit_rotations(x)
        e0 = self.rest[self.src] - self.rest[self.dst]
        e1 = x[self.src] - x[self.dst]
        r = e1 - np.einsum("kij,kj->ki", rot[self.src], e0)
        total = float(np.sum(self.lam[self.src] * np.sum(r * r, axis=1)))
        l0 = self.laplacian(self.rest)
        l1 = self.laplacian(x)
        rl = l1 - np.einsum("kij,kj->ki", rot, l0)
        total += float(np.sum((1.0 - self.lam) * np.sum(rl * rl, axis=1)))
        d = x[self.handles] - self.targets
        total += float(np.sum(d * d))
        return total

    def solve_positions(self, rot: np.ndarray) -> np.ndarray:
        e0 = self.rest[self.src] - self.rest[self.dst]
        b_edge = self.edge_w[:, None] * np.einsum("kij,kj->ki", rot[self.src], e0)
        l0 = self.laplacian(self.rest)[self.lap_idx]
        b_lap = self.lap_w[:, None] * np.einsum("kij,kj->ki", rot[self.lap_idx], l0)
        b = np.vstack([b_edge, b_lap, self.targets])
        x = self.rest.copy()
        if self.lu is not None:
            rhs = self.A_free.T @ (b - self.A_fixed @ self.rest[self.fixed])
            x[self.free] = self.lu.solve(np.ascontiguousarray(rhs))
        return x


def procrustes_rotations(cov: np.ndarray) -> np.ndarray:
    """Rotations maximizing ``trace(R @ S)`` for a batch of 3x3 ``S``.

    Reflections are corrected by flipping the axis of the smallest singular
    value.
    """
    u, _, vt = np.linalg.svd(cov)
    v = np.transpose(vt, (0, 2, 1))
    ut = np.transpose(u, (0, 2, 1))
    rot = v @ ut
    neg = np.linalg.det(rot) < 0
    if np.any(neg):
        v = v.copy()
        v[neg, :, 2] *= -1
        rot[neg] = v[neg] @ ut[neg]
    return rot


def energy(original: TriMesh, candidate_positions: np.ndarray, spec: DeformationSpec) -> float:
    """Deformation energy of ``candidate_positions`` with optimally fitted rotations."""
    cand = np.asarray(candidate_positions, dtype=np.float64)
    if cand.shape != (original.n_vertices, 3):
        raise DeformationError(
            f"candidate has shape {cand.shape}, expected ({original.n_vertices}, 3)"
        )
    prob = _Problem(original, spec)
    xw = np.empty((prob.n, 3))
    xw[prob.inverse] = cand
    return prob.energy(xw)


def solve(
    mesh: TriMesh,
    spec: DeformationSpec,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> DeformResult:
    """Minimize the deformation energy by alternating rotation fits and linear solves."""
    prob = _Problem(mesh, spec)
    x = prob.rest.copy()
    rot = prob.fit_rotations(x)
    e = prob.energy(x, rot)
    energies = [e]
    it = 0
    while it < max_iters and e > 0.0:
        x_new = prob.solve_positions(rot)
        rot_new = prob.fit_rotations(x_new)
        e_new = prob.energy(x_new, rot_new)
        it += 1
        if e_new > e:
            # numerical noise only; the alternation cannot increase the energy
            log.debug("energy rose by %.3g at iteration %d; stopping", e_new - e, it)
            break
        decrease = e - e_new
        x, rot, e = x_new, rot_new, e_new
        energies.append(e)
        if decrease < tol * energies[-2]:
            break
    out = mesh.vertices.copy()
    moving = np.isin(prob.inverse, prob.free)
    out[moving] = x[prob.inverse[moving]]
    state = SolverState(rotations=rot, laplacian_transforms=rot, positions=x)
    return DeformResult(mesh.with_vertices(out), state, energies, it)


def deform(mesh: TriMesh, spec: DeformationSpec, max_iters: int = 100, tol: float = 1e-6) -> TriMesh:
    return solve(mesh, spec, max_iters=max_iters, tol=tol).mesh


def welded_normals(rest: np.ndarray, wtris: np.ndarray) -> np.ndarray:
    fn = np.cross(rest[wtris[:, 1]] - rest[wtris[:, 0]], rest[wtris[:, 2]] - rest[wtris[:, 0]])
    n = np.zeros_like(rest)
    for k in range(3):
        np.add.at(n, wtris[:, k], fn)
    length = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, length, out=np.zeros_like(n), where=length > 0)


def ring_neighborhood(nbrs: list[np.ndarray], seeds: np.ndarray, depth: int) -> np.ndarray:
    """Vertices within ``depth`` breadth-first rings of ``seeds``, seeds excluded."""
    seen = set(int(s) for s in seeds)
    frontier = list(seen)
    found = []
    for _ in range(depth):
        nxt = []
        for v in frontier:
            for w in nbrs[v]:
                w = int(w)
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
                    found.append(w)
        frontier = nxt
    return np.array(sorted(found), dtype=np.int64)


def select_deformation_region(
    mesh: TriMesh,
    rng: np.random.Generator,
    handle_count: int,
    ring_depth: int,
    magnitude: float,
    rigidity: float = RIGID_LAMBDA,
) -> DeformationSpec:
    """Pick random handle vertices, their ring neighbourhood and displaced targets.

    Each handle moves along its outward normal by ``magnitude * U(-1, 1)``.
    Selection happens on merged positions so seam copies share a role.
    """
    if handle_count < 1:
        raise DeformationError("handle_count must be at least 1")
    if ring_depth < 1:
        raise DeformationError("ring_depth must be at least 1")
    if magnitude < 0:
        raise DeformationError("magnitude must be non-negative")
    rest, inverse, wtris = weld(mesh)
    n = len(rest)
    if handle_count > n:
        raise DeformationError(f"handle_count {handle_count} exceeds vertex count {n}")
    nbrs = one_ring(n, wtris)
    handles_w = np.sort(rng.choice(n, size=handle_count, replace=False))
    ring_w = ring_neighborhood(nbrs, handles_w, ring_depth)
    normals = welded_normals(rest, wtris[triangle_areas(rest, wtris) > 0])
    scale = rng.uniform(-1.0, 1.0, size=handle_count)
    targets_w = rest[handles_w] + (magnitude * scale)[:, None] * normals[handles_w]

    role = np.full(n, 2)
    role[handles_w] = 0
    role[ring_w] = 1
    vrole = role[inverse]
    handles = np.flatnonzero(vrole == 0)
    lookup = {int(w): t for w, t in zip(handles_w, targets_w)}
    targets = np.array([lookup[int(inverse[v])] for v in handles]).reshape(-1, 3)
    return DeformationSpec(
        handles=handles,
        targets=targets,
        neighbors=np.flatnonzero(vrole == 1),
        fixed=np.flatnonzero(vrole == 2),
        lam=np.full(mesh.n_vertices, float(rigidity)),
    )
