"""Dyadic grids on the boundary sphere, built on a discrete boundary mesh.

A grid is stored extensionally: for every generation ``k`` an integer array
maps each mesh index to the (global) id of the generation-``k`` cube that
contains it.  Off-mesh boundary points belong to the cube of their nearest
mesh point.  Adjacent grids are rotated copies of the construction, each
with its own seeded rotation and starting point.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from ._mc import rng_for, uniform_sphere
from .domain import DomainModel, inner, model_from_name, random_unitary
from .errors import GenerationRangeError, InputError, ResolutionError

# net separation in units of delta^k; twice the quasi-triangle constant of
# |1 - <z, w>| (which is at most 2) keeps the delta^k balls of two centres
# disjoint, the key to the lower sandwich inclusion
SEPARATION = 4.0
FORMAT_VERSION = 1
_MAGIC = b"DYGRID\x00\x01"


def _real(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag], axis=-1)


@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Equal-weight point cloud carrying the surface measure of the sphere."""

    model: DomainModel
    points: np.ndarray
    seed: int

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size)

    @cached_property
    def kdtree(self) -> cKDTree:
        return cKDTree(_real(self.points))

    def nearest(self, zeta) -> np.ndarray:
        """Index of the Euclidean-nearest mesh point for each boundary point."""
        zeta = np.asarray(zeta, dtype=complex).reshape(-1, self.model.dimension)
        _, idx = self.kdtree.query(_real(zeta))
        return idx.astype(np.int64)

    def ball(self, zeta, r: float) -> np.ndarray:
        """Mesh indices with d(point, zeta) < r, sorted."""
        zeta = np.asarray(zeta, dtype=complex).reshape(self.model.dimension)
        # d >= |x - y|^2 / 2 bounds the Euclidean search radius
        cand = self.kdtree.query_ball_point(
            _real(zeta), math.sqrt(2.0 * r) * (1 + 1e-12), return_sorted=True
        )
        cand = np.asarray(cand, dtype=np.int64)
        if cand.size == 0:
            return cand
        d = np.abs(1.0 - inner(self.points[cand], zeta))
        return cand[d < r]

    def covering_radius(self, samples: int = 2000, seed: int = 0) -> float:
        """Largest quasi-distance from a random boundary point to the mesh."""
        rng = rng_for(seed, "covering", self.model.name, self.size)
        probe = uniform_sphere(rng, samples, self.model.dimension)
        _, idx = self.kdtree.query(_real(probe), k=4)
        d = np.abs(1.0 - np.sum(self.points[idx] * np.conj(probe[:, None, :]), axis=-1))
        return float(d.min(axis=1).max())


def build_mesh(model: DomainModel, resolution: int, seed: int) -> BoundaryMesh:
    """Quasi-uniform equal-weight boundary mesh.

    Circle: ``resolution`` equally spaced points.  S^3: a tensor grid in
    Hopf coordinates (|z_1|^2, arg z_1 - arg z_2, arg z_2), refined along
    the Reeb direction where d grows linearly, coarse along the complex
    tangent where it grows quadratically; its size is the smallest product
    of the three axis counts that reaches ``resolution``.  S^5: seeded
    uniform random points.  All but the circle are randomly rotated.
    """
    if resolution < 2**10:
        raise InputError("mesh resolution must be at least 2**10")
    n = model.dimension
    if n == 1:
        theta = 2 * math.pi * np.arange(resolution) / resolution
        pts = np.exp(1j * theta)[:, None]
        return BoundaryMesh(model, pts, seed)
    rng = rng_for(seed, "mesh", model.name, resolution)
    if n == 2:
        pts = _hopf_grid(resolution, rng)
    else:
        pts = uniform_sphere(rng, resolution, n)
    u = random_unitary(n, seed, "mesh", model.name)
    pts = pts @ u.T
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return BoundaryMesh(model, pts, seed)


def _hopf_grid(resolution: int, rng: np.random.Generator) -> np.ndarray:
    # axis spacings for covering radius r: Reeb ~ r, tangential ~ sqrt(r)
    r = math.pi / math.sqrt(resolution)
    # the axis ratios were tuned for the smallest measured covering radius
    m_u = max(2, round(3.0 / math.sqrt(2 * r)))
    m_psi = max(4, round(math.pi / math.sqrt(8 * r)))
    m_gam = max(8, int(math.ceil(resolution / (m_u * m_psi))))
    off = rng.random(3)
    u = (np.arange(m_u) + 0.5) / m_u
    psi = 2 * math.pi * (np.arange(m_psi) + off[1]) / m_psi
    gam = 2 * math.pi * (np.arange(m_gam) + off[2]) / m_gam
    U, P, G = np.meshgrid(u, psi, gam, indexing="ij")
    U, P, G = U.ravel(), P.ravel(), G.ravel()
    z1 = np.sqrt(U) * np.exp(1j * (G + P))
    z2 = np.sqrt(1 - U) * np.exp(1j * G)
    return np.stack([z1, z2], axis=1)


@dataclass(frozen=True, eq=False)
class DyadicCube:
    """Read-only view of one cube of a built grid."""

    grid_id: int
    index: int
    generation: int
    center: np.ndarray
    center_index: int
    sidelength: float
    parent: int | None
    children: tuple[int, ...]
    members: np.ndarray
    measure: float

    @property
    def is_root(self) -> bool:
        return self.generation == 0


@dataclass(frozen=True, eq=False)
class DyadicGrid:
    """One dyadic grid: per-generation labels over the mesh plus cube records.

    Cube ids are global within the grid and ordered by generation.  The grid
    lives in the frame rotated by ``rotation``: world point ``zeta`` sits at
    ``rotation^H zeta`` in mesh coordinates.
    """

    grid_id: int
    mesh: BoundaryMesh
    delta: float
    depth: int
    seed: int
    rotation: np.ndarray
    labels: tuple[np.ndarray, ...]
    cube_generation: np.ndarray
    cube_center: np.ndarray
    cube_parent: np.ndarray

    @property
    def model(self) -> DomainModel:
        return self.mesh.model

    @property
    def n_cubes(self) -> int:
        return len(self.cube_generation)

    @cached_property
    def generation_slices(self) -> tuple[slice, ...]:
        edges = np.searchsorted(self.cube_generation, np.arange(self.depth + 2))
        return tuple(slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]))

    @cached_property
    def cube_sidelength(self) -> np.ndarray:
        return self.delta ** self.cube_generation.astype(float)

    @cached_property
    def cube_size(self) -> np.ndarray:
        """Number of member mesh points of every cube."""
        out = np.zeros(self.n_cubes, dtype=np.int64)
        for lab in self.labels:
            out += np.bincount(lab, minlength=self.n_cubes)
        return out

    @property
    def cube_measure(self) -> np.ndarray:
        return self.cube_size / self.mesh.size

    @cached_property
    def children_of(self) -> tuple[np.ndarray, ...]:
        order = np.argsort(self.cube_parent, kind="stable")
        parents = self.cube_parent[order]
        out = []
        for q in range(self.n_cubes):
            lo, hi = np.searchsorted(parents, [q, q + 1])
            out.append(order[lo:hi])
        return tuple(out)

    @cached_property
    def world_centers(self) -> np.ndarray:
        """Cube centres c(Q) as world boundary points."""
        return self.to_world(self.mesh.points[self.cube_center])

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T

    def to_mesh_frame(self, pts: np.ndarray) -> np.ndarray:
        return pts @ np.conj(self.rotation)

    def locate(self, zeta) -> np.ndarray:
        """Mesh index (in this grid's frame) nearest to each world boundary point."""
        zeta = np.asarray(zeta, dtype=complex).reshape(-1, self.model.dimension)
        return self.mesh.nearest(self.to_mesh_frame(zeta))

    def members(self, q: int) -> np.ndarray:
        k = int(self.cube_generation[q])
        return np.flatnonzero(self.labels[k] == q)

    def cube(self, q: int) -> DyadicCube:
        k = int(self.cube_generation[q])
        parent = int(self.cube_parent[q])
        return DyadicCube(
            grid_id=self.grid_id,
            index=int(q),
            generation=k,
            center=self.world_centers[q],
            center_index=int(self.cube_center[q]),
            sidelength=self.delta**k,
            parent=None if parent < 0 else parent,
            children=tuple(int(c) for c in self.children_of[q]),
            members=self.members(q),
            measure=float(self.cube_measure[q]),
        )

    def cube_of(self, zeta, k: int) -> DyadicCube:
        """The generation-``k`` cube containing the boundary point ``zeta``."""
        if not 0 <= k <= self.depth:
            raise GenerationRangeError(f"generation {k} outside 0..{self.depth}")
        idx = self.locate(zeta)[0]
        return self.cube(int(self.labels[k][idx]))

    def offspring(self, q: int) -> np.ndarray:
        """All cubes of strictly deeper generation whose centre lies in cube ``q``."""
        k = int(self.cube_generation[q])
        deeper = np.arange(self.generation_slices[k].stop, self.n_cubes)
        return deeper[self.labels[k][self.cube_center[deeper]] == q]


def _quasi(points: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.abs(1.0 - points @ np.conj(c))


def build_grid(
    model: DomainModel,
    mesh: BoundaryMesh,
    delta: float,
    depth: int,
    seed: int,
    *,
    grid_id: int = 0,
    rotation: np.ndarray | None = None,
) -> DyadicGrid:
    """Greedy farthest-point dyadic grid.

    Generation ``k`` refines each generation-``(k-1)`` cube ``P`` on its own:
    the centre of ``P`` is reused first, then the member farthest from the
    chosen centres is added while it is at least ``4 delta^k`` away, provided
    its open ``delta^k`` ball lies inside ``P`` (otherwise it is skipped).
    Members of ``P`` go to the nearest new centre, ties to the lowest index.
    """
    if mesh.model != model:
        raise InputError("mesh was built for a different model")
    if not 0.0 < delta < model.eps0:
        raise InputError(f"delta must lie in (0, eps0={model.eps0}), got {delta}")
    if depth < 0:
        raise InputError("depth must be non-negative")
    if depth * abs(math.log(delta)) > math.log(mesh.size):
        need = int(math.ceil(delta**-depth))
        raise ResolutionError(
            f"depth {depth} at delta={delta} needs at least {need} mesh points, have {mesh.size}"
        )
    if rotation is None:
        rotation = np.eye(model.dimension, dtype=complex)
    pts = mesh.points
    rng = rng_for(seed, "grid", grid_id)

    root_center = int(rng.integers(mesh.size))
    gens = [0]
    centers = [root_center]
    parents = [-1]
    labels = [np.zeros(mesh.size, dtype=np.int64)]

    for k in range(1, depth + 1):
        prev = labels[-1]
        scale = delta**k
        sep = SEPARATION * scale
        new = np.empty(mesh.size, dtype=np.int64)
        order = np.argsort(prev, kind="stable")
        bounds = np.searchsorted(prev[order], np.arange(len(centers) + 1))
        first_id = len(centers)
        first_parent = gens.index(k - 1)
        for p in range(first_parent, first_id):
            idx = order[bounds[p] : bounds[p + 1]]
            chosen = _refine_cube(mesh, prev, p, idx, centers[p], scale, sep, root=(k == 1))
            local_ids = np.arange(len(centers), len(centers) + len(chosen))
            for c in chosen:
                centers.append(int(c))
                gens.append(k)
                parents.append(p)
            dist = np.stack([_quasi(pts[idx], pts[c]) for c in chosen], axis=1)
            new[idx] = local_ids[np.argmin(dist, axis=1)]
        labels.append(new)

    return DyadicGrid(
        grid_id=grid_id,
        mesh=mesh,
        delta=float(delta),
        depth=int(depth),
        seed=int(seed),
        rotation=np.asarray(rotation, dtype=complex),
        labels=tuple(labels),
        cube_generation=np.asarray(gens, dtype=np.int64),
        cube_center=np.asarray(centers, dtype=np.int64),
        cube_parent=np.asarray(parents, dtype=np.int64),
    )


def _refine_cube(mesh, prev, p, idx, first, scale, sep, *, root):
    pts = mesh.points
    local = pts[idx]
    dmin = _quasi(local, pts[first])
    score = dmin.copy()
    halo = None
    if not root:
        # points outside P that can fall in a delta^k ball around a member
        reach = 2.0 * (float(dmin.max()) + scale)
        near = mesh.ball(pts[first], reach)
        halo = pts[near[prev[near] != p]]
    chosen = [first]
    while True:
        j = int(np.argmax(score))
        if score[j] < sep:
            break
        cand = int(idx[j])
        if halo is None or halo.size == 0 or _quasi(halo, pts[cand]).min() >= scale:
            chosen.append(cand)
            dmin = np.minimum(dmin, _quasi(local, pts[cand]))
            score = np.where(score < 0, score, dmin)
        else:
            score[j] = -1.0
    return chosen


@dataclass(frozen=True, eq=False)
class DyadicGridFamily:
    """K0 adjacent grids sharing mesh, delta and depth."""

    grids: tuple[DyadicGrid, ...]
    seed: int

    @property
    def K0(self) -> int:
        return len(self.grids)

    @property
    def mesh(self) -> BoundaryMesh:
        return self.grids[0].mesh

    @property
    def model(self) -> DomainModel:
        return self.grids[0].model

    @property
    def delta(self) -> float:
        return self.grids[0].delta

    @property
    def depth(self) -> int:
        return self.grids[0].depth


def build_adjacent_family(
    model: DomainModel, mesh: BoundaryMesh, delta: float, depth: int, K0: int, seed: int
) -> DyadicGridFamily:
    """K0 grids, each built in an independently seeded random unitary frame."""
    if K0 < 1:
        raise InputError("K0 must be at least 1")
    grids = []
    for t in range(K0):
        rot = random_unitary(model.dimension, seed, "family", t)
        grids.append(build_grid(model, mesh, delta, depth, seed, grid_id=t, rotation=rot))
    return DyadicGridFamily(tuple(grids), int(seed))


# -- verification ---------------------------------------------------------


@dataclass
class GridVerification:
    """Exhaustive mesh-level check of the six grid properties."""

    covering: bool
    nesting: bool
    has_child: bool
    unique_parent: bool
    epsilon: float
    frak_c: float
    lower_sandwich_violations: int
    center_membership: bool
    generation_sizes: list[int]
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (
            self.covering
            and self.nesting
            and self.has_child
            and self.unique_parent
            and self.epsilon > 0
            and self.lower_sandwich_violations == 0
            and self.center_membership
        )


def verify_grid(grid: DyadicGrid) -> GridVerification:
    mesh, pts = grid.mesh, grid.mesh.points
    nc = grid.n_cubes
    violations: list[str] = []
    covering = True
    for k, lab in enumerate(grid.labels):
        sl = grid.generation_slices[k]
        if lab.shape != (mesh.size,) or np.any(lab < sl.start) or np.any(lab >= sl.stop):
            covering = False
            violations.append(f"generation {k}: label outside the generation")

    nesting = unique_parent = True
    for k in range(1, grid.depth + 1):
        lab, prev = grid.labels[k], grid.labels[k - 1]
        if not np.array_equal(grid.cube_parent[lab], prev):
            nesting = unique_parent = False
            violations.append(f"generation {k}: a member escapes its parent cube")
    parents_seen = np.zeros(nc, dtype=bool)
    parents_seen[grid.cube_parent[grid.cube_parent >= 0]] = True
    inner_cubes = grid.cube_generation < grid.depth
    has_child = bool(np.all(parents_seen[inner_cubes]))
    if not has_child:
        violations.append("a cube above the leaf generation has no child")
    if np.any(grid.cube_parent[1:] < 0) or grid.cube_parent[0] != -1:
        unique_parent = False

    size = grid.cube_size
    non_root = np.arange(1, nc)
    ratios = size[non_root] / size[grid.cube_parent[non_root]]
    epsilon = float(ratios.min()) if ratios.size else 1.0

    center_membership = True
    frak_c = 0.0
    lower = 0
    for k in range(1, grid.depth + 1):
        lab = grid.labels[k]
        sl = grid.generation_slices[k]
        scale = grid.delta**k
        if np.any(lab[grid.cube_center[sl]] != np.arange(sl.start, sl.stop)):
            center_membership = False
            violations.append(f"generation {k}: a centre lies outside its cube")
        d = np.abs(1.0 - np.sum(pts * np.conj(pts[grid.cube_center[lab]]), axis=1))
        frak_c = max(frak_c, float(d.max() / scale))
        for q in range(sl.start, sl.stop):
            ball = mesh.ball(pts[grid.cube_center[q]], scale)
            bad = int(np.count_nonzero(lab[ball] != q))
            if bad:
                lower += bad
                violations.append(f"cube {q}: {bad} ball points outside")
    return GridVerification(
        covering=covering,
        nesting=nesting,
        has_child=has_child,
        unique_parent=unique_parent,
        epsilon=epsilon,
        frak_c=frak_c,
        lower_sandwich_violations=lower,
        center_membership=center_membership,
        generation_sizes=[s.stop - s.start for s in grid.generation_slices],
        violations=violations,
    )


@dataclass
class CoverCertificate:
    K0: int
    samples: int
    ctilde: float
    cap: float
    failures: int
    max_generation_used: int

    @property
    def passed(self) -> bool:
        return self.failures == 0


def cover_certificate(
    family: DyadicGridFamily, samples: int = 1000, seed: int = 0, cap: float | None = None
) -> CoverCertificate:
    """Adjacent-cover audit over random quasi-balls B(xi, r).

    For every ball the deepest cube (over all grids) containing the ball's
    mesh points is found; the certificate reports the worst ratio
    ell(Q)/r.  A ball fails when that ratio exceeds ``cap`` (default
    delta^-2, two generations above the ball's own scale).  Balls with
    r >= 1 are covered by the root and skipped from the ratio search.
    """
    mesh = family.mesh
    delta, depth = family.delta, family.depth
    if cap is None:
        cap = delta**-2
    rng = rng_for(seed, "cover", family.model.name)
    centres = uniform_sphere(rng, samples, family.model.dimension)
    r_lo = delta**depth
    radii = np.exp(rng.uniform(math.log(r_lo), math.log(1.5), size=samples))
    worst = 0.0
    failures = 0
    deepest = 0
    for xi, r in zip(centres, radii):
        if r >= 1.0:
            worst = max(worst, 1.0 / r)
            continue
        best = math.inf
        for g in family.grids:
            local = g.to_mesh_frame(xi[None, :])[0]
            ball = mesh.ball(local, r)
            ball = np.union1d(ball, mesh.nearest(local[None, :]))
            for k in range(depth, -1, -1):
                lab = g.labels[k][ball]
                if np.all(lab == lab[0]):
                    best = min(best, delta**k / r)
                    deepest = max(deepest, k)
                    break
        worst = max(worst, best)
        if best > cap:
            failures += 1
    return CoverCertificate(
        K0=family.K0, samples=samples, ctilde=float(worst), cap=float(cap),
        failures=failures, max_generation_used=deepest,
    )


# -- serialisation ----------------------------------------------------------


def _write_array(buf: io.BytesIO, arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    start = buf.tell()
    buf.write(arr.tobytes())
    return {"dtype": arr.dtype.str, "shape": list(arr.shape), "offset": start}


def dumps_family(family: DyadicGridFamily) -> bytes:
    """Versioned binary encoding: magic, JSON header, raw little-endian arrays."""
    body = io.BytesIO()
    mesh = family.mesh
    header = {
        "version": FORMAT_VERSION,
        "model": mesh.model.name,
        "eps0": mesh.model.eps0,
        "delta": family.delta,
        "depth": family.depth,
        "K0": family.K0,
        "seed": family.seed,
        "mesh": {"seed": mesh.seed, "points": _write_array(body, mesh.points.astype("<c16"))},
        "grids": [],
    }
    for g in family.grids:
        header["grids"].append(
            {
                "grid_id": g.grid_id,
                "seed": g.seed,
                "rotation": _write_array(body, g.rotation.astype("<c16")),
                "generation": _write_array(body, g.cube_generation.astype("<i8")),
                "center": _write_array(body, g.cube_center.astype("<i8")),
                "parent": _write_array(body, g.cube_parent.astype("<i8")),
                "labels": [_write_array(body, lab.astype("<i8")) for lab in g.labels],
            }
        )
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _MAGIC + struct.pack("<Q", len(head)) + head + body.getvalue()


def loads_family(data: bytes) -> DyadicGridFamily:
    if not data.startswith(_MAGIC):
        raise InputError("not a dyadic grid file")
    (hlen,) = struct.unpack("<Q", data[len(_MAGIC) : len(_MAGIC) + 8])
    start = len(_MAGIC) + 8
    header = json.loads(data[start : start + hlen])
    if header["version"] != FORMAT_VERSION:
        raise InputError(f"unsupported grid format version {header['version']}")
    body = memoryview(data)[start + hlen :]

    def arr(spec):
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        out = np.frombuffer(body, dtype=dt, count=count, offset=spec["offset"])
        return out.reshape(spec["shape"]).astype(dt.newbyteorder("="))

    model = model_from_name(header["model"], header["eps0"])
    mesh = BoundaryMesh(model, arr(header["mesh"]["points"]).astype(complex), header["mesh"]["seed"])
    grids = []
    for g in header["grids"]:
        grids.append(
            DyadicGrid(
                grid_id=g["grid_id"],
                mesh=mesh,
                delta=header["delta"],
                depth=header["depth"],
                seed=g["seed"],
                rotation=arr(g["rotation"]).astype(complex),
                labels=tuple(arr(x).astype(np.int64) for x in g["labels"]),
                cube_generation=arr(g["generation"]).astype(np.int64),
                cube_center=arr(g["center"]).astype(np.int64),
                cube_parent=arr(g["parent"]).astype(np.int64),
            )
        )
    return DyadicGridFamily(tuple(grids), header["seed"])
