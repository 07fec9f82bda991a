"""Tents, kubes and the Bergman tree over an adjacent grid family.

A cube is addressed by ``(g, q)``: grid index and cube id within the grid.
All sampling is done in the grid's own mesh frame (the quasi-metric,
the Kobayashi distance and volumes are unitarily invariant) and mapped
back to world coordinates only when points are handed out.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np

from ._mc import rng_for, uniform_ball, uniform_sphere
from .domain import DomainModel, mobius, mobius_jacobian, norm2
from .errors import CalibrationError, InputError
from .grid import DyadicCube, DyadicGrid, DyadicGridFamily

Integrand = Callable[[np.ndarray], np.ndarray]


def _orth_complement(c: np.ndarray) -> np.ndarray:
    """(T, n, n-1) orthonormal bases of the complex complement of each unit c."""
    T, n = c.shape
    eye = np.broadcast_to(np.eye(n, dtype=complex), (T, n, n))
    # start from the identity with the column most aligned with c swapped out
    j = np.argmax(np.abs(c), axis=1)
    mats = np.array(eye)
    mats[np.arange(T), :, j] = mats[np.arange(T), :, 0]
    mats[:, :, 0] = c
    qmat, _ = np.linalg.qr(mats)
    return qmat[:, :, 1:]


def _unit(z: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(z, axis=-1, keepdims=True)
    return z / np.where(r == 0, 1.0, r)


@dataclass(frozen=True, eq=False)
class TentTree:
    """Tents T(Q), kubes and tree centres for every grid of a family."""

    family: DyadicGridFamily

    @property
    def model(self) -> DomainModel:
        return self.family.model

    @property
    def delta(self) -> float:
        return self.family.delta

    @property
    def depth(self) -> int:
        return self.family.depth

    @property
    def grids(self) -> tuple[DyadicGrid, ...]:
        return self.family.grids

    def cubes(self, *, include_root: bool = True):
        """All ``(g, q)`` pairs in (grid, cube id) order."""
        for g, grid in enumerate(self.grids):
            for q in range(0 if include_root else 1, grid.n_cubes):
                yield g, q

    # -- geometry of single cubes ---------------------------------------

    @cached_property
    def cube_radius(self) -> tuple[np.ndarray, ...]:
        """max d(member, c(Q)) per cube, per grid."""
        out = []
        pts = self.family.mesh.points
        for grid in self.grids:
            rad = np.zeros(grid.n_cubes)
            for k in range(1, grid.depth + 1):
                lab = grid.labels[k]
                d = np.abs(1.0 - np.sum(pts * np.conj(pts[grid.cube_center[lab]]), axis=1))
                np.maximum.at(rad, lab, d)
            rad[0] = 2.0
            out.append(rad)
        return tuple(out)

    @cached_property
    def mesh_covering(self) -> float:
        """Bound on d(zeta, Euclidean-nearest mesh point) over the sphere."""
        mesh = self.family.mesh
        if self.model.dimension == 1:
            return abs(1.0 - np.exp(1j * math.pi / mesh.size))
        probe = uniform_sphere(rng_for(0, "cell-radius", mesh.size), 20000, self.model.dimension)
        near = mesh.points[mesh.nearest(probe)]
        d = np.abs(1.0 - np.sum(near * np.conj(probe), axis=1))
        return 1.5 * float(d.max())

    def sidelength(self, g: int, q: int) -> float:
        return float(self.grids[g].cube_sidelength[q])

    def local_centers(self, g: int) -> np.ndarray:
        """Tent centres c_Q = (1 - l/2) c(Q) in the grid's mesh frame; origin for the root."""
        grid = self.grids[g]
        ell = grid.cube_sidelength
        c = grid.mesh.points[grid.cube_center] * (1.0 - ell / 2.0)[:, None]
        c[0] = 0.0
        return c

    def tent_center(self, cube: DyadicCube) -> np.ndarray:
        """World coordinates of c_Q; the root tent uses the origin by convention."""
        if cube.is_root:
            return np.zeros(self.model.dimension, dtype=complex)
        return (1.0 - cube.sidelength / 2.0) * cube.center

    def world_tent_centers(self, g: int) -> np.ndarray:
        return self.grids[g].to_world(self.local_centers(g))

    # -- predicates --------------------------------------------------------

    def _cube_index(self, g: int, z_local: np.ndarray, k: int) -> np.ndarray:
        grid = self.grids[g]
        ids = np.full(len(z_local), -1, dtype=np.int64)
        ok = norm2(z_local) > 0
        if np.any(ok):
            ids[ok] = grid.labels[k][grid.mesh.nearest(_unit(z_local[ok]))]
        return ids

    def _local(self, g: int, z) -> np.ndarray:
        z = self.model.points(z, where="interior")
        return self.grids[g].to_mesh_frame(z)

    def in_tent(self, g: int, q: int, z) -> np.ndarray:
        """pi(z) in Q and 1 - |z| <= l(Q); the root tent is all of the ball."""
        z = self._local(g, z)
        grid = self.grids[g]
        if q == 0:
            return np.ones(len(z), dtype=bool)
        k = int(grid.cube_generation[q])
        ell = grid.cube_sidelength[q]
        t = 1.0 - np.sqrt(norm2(z))
        out = t <= ell
        if np.any(out):
            out[out] = self._cube_index(g, z[out], k) == q
        return out

    def in_kube(self, g: int, q: int, z, *, band: bool = False) -> np.ndarray:
        """Kube predicate with the half-open band (delta l, l].

        Leaf cubes own their whole remaining tent so that the kubes tile
        the ball exactly; ``band=True`` applies the band there too.
        """
        z = self._local(g, z)
        grid = self.grids[g]
        t = 1.0 - np.sqrt(norm2(z))
        k = int(grid.cube_generation[q])
        ell = grid.cube_sidelength[q]
        lower = self.delta * ell if (band or k < self.depth) else -math.inf
        if q == 0:
            return t > lower
        out = (t > lower) & (t <= ell)
        if np.any(out):
            out[out] = self._cube_index(g, z[out], k) == q
        return out

    def kube_of(self, g: int, z) -> np.ndarray:
        """Cube id whose kube holds each point (0 is the root kube)."""
        z = self._local(g, z)
        t = 1.0 - np.sqrt(norm2(z))
        k = self.generation_of_depth(t)
        out = np.zeros(len(z), dtype=np.int64)
        for kk in range(1, self.depth + 1):
            sel = k == kk
            if np.any(sel):
                out[sel] = self._cube_index(g, z[sel], kk)
        return out

    def generation_of_depth(self, t: np.ndarray) -> np.ndarray:
        """Generation k with delta^(k+1) < t <= delta^k, clipped to 0..depth."""
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            k = np.floor(np.log(t) / math.log(self.delta)).astype(np.int64)
        k = np.clip(k, 0, self.depth + 1)
        # repair floating-point slips at the band edges
        k = np.where(self.delta ** k.astype(float) < t, k - 1, k)
        k = np.where(self.delta ** (k + 1.0) >= t, k + 1, k)
        k = np.where(t > self.delta, 0, np.maximum(k, 1))
        return np.minimum(k, self.depth)

    def tents_containing(self, g: int, z) -> np.ndarray:
        """(count, depth+1) cube ids of the tents of grid g containing each point, -1 if none."""
        z = self._local(g, z)
        t = 1.0 - np.sqrt(norm2(z))
        out = np.full((len(z), self.depth + 1), -1, dtype=np.int64)
        out[:, 0] = 0
        ok = norm2(z) > 0
        if not np.any(ok):
            return out
        idx = self.grids[g].mesh.nearest(_unit(z[ok]))
        grid = self.grids[g]
        for k in range(1, self.depth + 1):
            ids = grid.labels[k][idx]
            ids = np.where(t[ok] <= self.delta**k, ids, -1)
            out[ok, k] = ids
        return out

    def offspring(self, g: int, q: int) -> np.ndarray:
        return self.grids[g].offspring(q)

    def in_enlarged_tent(self, g: int, q: int, z, beta: float) -> np.ndarray:
        """z lies in some Kobayashi ball B(c_Q', beta) over the offspring Q' of Q."""
        if not 0.0 < beta < 1.0:
            raise InputError("beta must lie in (0, 1)")
        z = self._local(g, z)
        kids = self.offspring(g, q)
        out = np.zeros(len(z), dtype=bool)
        if kids.size == 0:
            return out
        centres = self.local_centers(g)[kids]
        for start in range(0, len(kids), 2048):
            c = centres[start : start + 2048]
            for j, zz in enumerate(z):
                if not out[j]:
                    out[j] = bool(np.any(np.sqrt(norm2(mobius(c, zz[None, :]))) < beta))
        return out

    # -- tent-local Monte Carlo --------------------------------------------

    def _draw(self, g, qs, per_tent, seed, stream, band):
        """Uniform draws from a region around every tent of ``qs``.

        Directions are written zeta = e^(i psi) (s c + v) with v orthogonal
        to c; surface measure is uniform in (psi, v), and the quasi-ball
        B(c, R) sits inside {|psi| <= asin(R / (1 - R)), |v|^2 <= 2R - R^2}.
        Returns local points (len(qs)*per_tent, n), hit mask, owner
        position and the region volume per tent.
        """
        model, n = self.model, self.model.dimension
        grid = self.grids[g]
        qs = np.asarray(qs, dtype=np.int64)
        T = len(qs)
        uni = np.empty((T, per_tent, 3))
        gau = np.empty((T, per_tent, max(1, 2 * (n - 1))))
        for i, q in enumerate(qs):
            rng = rng_for(seed, stream, g, int(q))
            uni[i] = rng.random((per_tent, 3))
            gau[i] = rng.standard_normal(gau.shape[1:])
        root = qs == 0
        psi_max, v_max, a, b, region = self._region(g, qs, band)
        psi = (2 * uni[:, :, 0] - 1) * psi_max[:, None]
        c = grid.mesh.points[grid.cube_center[qs]]
        if n == 1:
            dirs = c[:, None, :] * np.exp(1j * psi)[:, :, None]
        else:
            m = n - 1
            gv = gau[:, :, :m] + 1j * gau[:, :, m:]
            gv /= np.linalg.norm(gv, axis=2, keepdims=True)
            rad = np.sqrt(v_max[:, None] * uni[:, :, 2] ** (1.0 / m))
            basis = _orth_complement(c)
            v = np.einsum("tsj,tij->tsi", gv * rad[:, :, None], basis)
            s = np.sqrt(np.maximum(1.0 - rad**2, 0.0))
            dirs = np.exp(1j * psi)[:, :, None] * (s[:, :, None] * c[:, None, :] + v)
        # radial part: r^(2n) uniform on the shell [(1-hi)^(2n), (1-lo)^(2n)]
        r = (a[:, None] + uni[:, :, 1] * (b - a)[:, None]) ** (1.0 / (2 * n))
        pts = (dirs * r[:, :, None]).reshape(T * per_tent, n)
        owner = np.repeat(np.arange(T), per_tent)
        hit = np.ones(T * per_tent, dtype=bool)
        nonroot = ~root[owner]
        if np.any(nonroot):
            idx = grid.mesh.nearest(_unit(pts[nonroot]))
            gen = grid.cube_generation[qs][owner[nonroot]]
            lab = np.empty(idx.shape, dtype=np.int64)
            for k in np.unique(gen):
                sel = gen == k
                lab[sel] = grid.labels[k][idx[sel]]
            hit[nonroot] = lab == qs[owner[nonroot]]
        return pts, hit, owner, region

    def _region(self, g, qs, band):
        """Sampling region per tent: psi and |v|^2 limits, radial shell and volume."""
        n = self.model.dimension
        grid = self.grids[g]
        ell = grid.cube_sidelength[qs]
        root = qs == 0
        # d is a metric on the circle and sqrt(d) is one on higher spheres
        rad, cov = self.cube_radius[g][qs], self.mesh_covering
        R = rad + cov if n == 1 else (np.sqrt(rad) + math.sqrt(cov)) ** 2
        R = np.where(root, 2.0, R)
        psi_max = np.where(R < 0.5, np.arcsin(np.minimum(R / (1.0 - np.minimum(R, 0.49)), 1.0)), math.pi)
        v_max = np.where(R < 1.0, 2 * R - R * R, 1.0)
        frac = psi_max / math.pi * v_max ** (n - 1)
        t_hi = np.where(root, 1.0, ell)
        t_lo = self.delta * ell if band else np.zeros(len(qs))
        a = (1.0 - t_hi) ** (2 * n)
        b = (1.0 - t_lo) ** (2 * n)
        return psi_max, v_max, a, b, self.model.volume * (b - a) * frac

    def samples_per_tent(self, g, qs, per_tent, target_hits, max_per_tent):
        """Per-tent draw counts (powers of two) aiming at ``target_hits`` expected hits."""
        qs = np.asarray(qs, dtype=np.int64)
        if target_hits is None:
            return np.full(len(qs), per_tent)
        region = self._region(g, qs, False)[-1]
        expected = np.array([self.analytic_volume(g, int(q)) for q in qs]) / region
        want = target_hits / np.maximum(expected, 1e-12)
        m = 2.0 ** np.ceil(np.log2(np.maximum(want, 1.0)))
        return np.clip(m, per_tent, max_per_tent).astype(np.int64)

    def integrate_tents(
        self,
        integrands: Mapping[str, Integrand] | None = None,
        *,
        per_tent: int = 64,
        seed: int = 0,
        band: bool = False,
        generations=None,
        include_root: bool = True,
        chunk: int = 4096,
        target_hits: int | None = None,
        max_per_tent: int = 4096,
        focus: Mapping[str, np.ndarray] | None = None,
        focus_count: int = 65536,
    ) -> "TentIntegrals":
        """MC estimates of Vol(T(Q)), Vol(kube) and int_T f dV for every tent.

        With ``band=True`` the samples are drawn from the kube band only
        and ``volume`` is the kube volume.  Integrands receive world points;
        each one also yields ``"<name>|kube"``, its integral over the kube.
        ``target_hits`` raises the per-tent draw count (at least
        ``per_tent``) where the sampling region is loose around the tent.

        ``focus`` maps integrand names to a world point w where the
        integrand peaks (e.g. the centre of a normalised kernel).  Those
        integrands pool the per-tent draws with ``focus_count`` Möbius
        draws around w under the balance heuristic.
        """
        integrands = dict(integrands or {})
        focus = {k: np.asarray(v, dtype=complex).reshape(-1) for k, v in (focus or {}).items()}
        if set(focus) - set(integrands):
            raise InputError("focus names must be integrand names")
        if focus and band:
            raise InputError("focused integrands need full-tent sampling")
        names = ["volume", "kube"] + list(integrands) + [f"{k}|kube" for k in integrands]
        rows_g, rows_q, rows_m, rows_r = [], [], [], []
        est = {k: [] for k in names}
        se = {k: [] for k in names}
        for g, grid in enumerate(self.grids):
            qs = np.arange(grid.n_cubes)
            keep = np.ones(len(qs), dtype=bool)
            if generations is not None:
                keep &= np.isin(grid.cube_generation, list(generations))
            if not include_root:
                keep[0] = False
            qs = qs[keep]
            counts = self.samples_per_tent(g, qs, per_tent, target_hits, max_per_tent)
            for M in np.unique(counts):
                group = qs[counts == M]
                step = max(1, chunk * per_tent // int(M))
                for start in range(0, len(group), step):
                    block = group[start : start + step]
                    region = self._integrate_block(
                        g, block, int(M), seed, band, integrands, est, se, focus, focus_count
                    )
                    rows_g.append(np.full(len(block), g))
                    rows_q.append(block)
                    rows_m.append(np.full(len(block), float(M)))
                    rows_r.append(region)
        order = np.lexsort((np.concatenate(rows_q), np.concatenate(rows_g)))
        out = TentIntegrals(
            grid=np.concatenate(rows_g)[order],
            cube=np.concatenate(rows_q)[order],
            estimates={k: np.concatenate(v)[order] for k, v in est.items()},
            errors={k: np.concatenate(v)[order] for k, v in se.items()},
            per_tent=per_tent,
            seed=seed,
        )
        if focus:
            draws = np.concatenate(rows_m)[order]
            region = np.concatenate(rows_r)[order]
            for name, w in focus.items():
                self._focus_pass(out, name, integrands[name], w, draws, region, focus_count, seed)
        return out

    def _focus_pass(self, out, name, fn, w, draws, region, count, seed):
        """Add the Möbius-draw half of a balance-heuristic estimate to every tent."""
        model = self.model
        x = mobius(w, uniform_ball(rng_for(seed, "tent-focus", name), count, model.dimension))
        p_f = mobius_jacobian(w, x) / model.volume
        fx = np.asarray(fn(x), dtype=float)
        for suffix in ("", "|kube"):
            key = name + suffix
            s1 = np.zeros(len(out.grid))
            s2 = np.zeros(len(out.grid))
            for g, grid in enumerate(self.grids):
                pos = np.full(grid.n_cubes, -1)
                mine = np.flatnonzero(out.grid == g)
                pos[out.cube[mine]] = mine
                ids = self.tents_containing(g, x)
                kube = self.kube_of(g, x) if suffix else None
                for k in range(ids.shape[1]):
                    q = ids[:, k]
                    ok = q >= 0
                    if suffix:
                        ok &= kube == q
                    j = pos[np.where(ok, q, 0)]
                    ok &= j >= 0
                    t = fx[ok] / (draws[j[ok]] / region[j[ok]] + count * p_f[ok])
                    np.add.at(s1, j[ok], t)
                    np.add.at(s2, j[ok], t * t)
            out.estimates[key] = out.estimates[key] + s1
            var_f = np.maximum(s2 - s1**2 / count, 0.0)
            out.errors[key] = np.hypot(out.errors[key], np.sqrt(var_f))

    def _integrate_block(self, g, block, per_tent, seed, band, integrands, est, se, focus=None, focus_count=0):
        grid = self.grids[g]
        pts, hit, owner, region = self._draw(g, block, per_tent, seed, "tent", band)
        T = len(block)
        t = 1.0 - np.sqrt(norm2(pts))
        ell = grid.cube_sidelength[block][owner]
        leaf = (grid.cube_generation[block][owner] == self.depth) & (block[owner] != 0)
        in_kube = hit & ((t > self.delta * ell) | leaf)
        world = grid.to_world(pts)
        values = {"volume": hit.astype(float), "kube": in_kube.astype(float)}
        for name, fn in integrands.items():
            v = np.zeros(len(pts))
            if np.any(hit):
                v[hit] = np.asarray(fn(world[hit]), dtype=float)
            values[name] = v
            values[f"{name}|kube"] = v * in_kube
        for name, w in (focus or {}).items():
            # balance heuristic: each draw weighted by 1 / (M / region + F p_focus)
            c = 1.0 / (per_tent / region[owner] + focus_count * mobius_jacobian(w, world) / self.model.volume)
            for key in (name, f"{name}|kube"):
                t = values.pop(key) * c
                s1 = np.bincount(owner, weights=t, minlength=T)
                s2 = np.bincount(owner, weights=t * t, minlength=T)
                est[key].append(s1)
                se[key].append(np.sqrt(np.maximum(s2 - s1**2 / per_tent, 0.0)))
        for name, v in values.items():
            s1 = np.bincount(owner, weights=v, minlength=T)
            s2 = np.bincount(owner, weights=v * v, minlength=T)
            mean = s1 / per_tent
            if name in ("volume", "kube"):
                # Agresti-Coull proportion keeps the error positive at 0 or all hits
                pt = (s1 + 2.0) / (per_tent + 4.0)
                var = pt * (1.0 - pt)
            else:
                var = np.maximum(s2 / per_tent - mean**2, 0.0)
            est[name].append(region * mean)
            se[name].append(region * np.sqrt(var / per_tent))
        return region

    def sample_tent(self, g: int, q: int, count: int, seed: int, *, band: bool = False) -> np.ndarray:
        """Uniform world samples of T(Q) (or its kube band) by rejection."""
        got = []
        have = 0
        attempt = 0
        while have < count:
            pts, hit, _, _ = self._draw(g, [q], max(64, 2 * count), seed + attempt, "sample", band)
            got.append(pts[hit])
            have += int(hit.sum())
            attempt += 1
            if attempt > 64:
                raise CalibrationError(f"cannot sample tent {(g, q)}")
        return self.grids[g].to_world(np.concatenate(got)[:count])

    def analytic_volume(self, g: int, q: int) -> float:
        """Polar-coordinate volume of the tent over the mesh cells of Q."""
        grid = self.grids[g]
        ell = float(grid.cube_sidelength[q])
        if q == 0:
            return self.model.volume
        return self.model.volume * float(grid.cube_measure[q]) * (1.0 - (1.0 - ell) ** (2 * self.model.dimension))


@dataclass
class TentIntegrals:
    grid: np.ndarray
    cube: np.ndarray
    estimates: dict[str, np.ndarray]
    errors: dict[str, np.ndarray]
    per_tent: int
    seed: int

    def __len__(self) -> int:
        return len(self.cube)

    def lookup(self, g: int, q: int) -> int:
        hit = np.flatnonzero((self.grid == g) & (self.cube == q))
        if hit.size == 0:
            raise KeyError((g, q))
        return int(hit[0])

    def average(self, name: str) -> np.ndarray:
        """Ratio estimate of the tent average of an integrand."""
        vol = self.estimates["volume"]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(vol > 0, self.estimates[name] / vol, 0.0)


def tent_audit_csv(tree: TentTree, ints: TentIntegrals) -> str:
    """CSV with gridId, cubeId, k, l, volMC, volSE, volAnalytic, kubeVolMC."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gridId", "cubeId", "k", "ell", "volMC", "volSE", "volAnalytic", "kubeVolMC"])
    for i, (g, q) in enumerate(zip(ints.grid, ints.cube)):
        grid = tree.grids[g]
        w.writerow(
            [
                int(g) + 1,
                int(q),
                int(grid.cube_generation[q]),
                repr(float(grid.cube_sidelength[q])),
                repr(float(ints.estimates["volume"][i])),
                repr(float(ints.errors["volume"][i])),
                repr(tree.analytic_volume(int(g), int(q))),
                repr(float(ints.estimates["kube"][i])),
            ]
        )
    return buf.getvalue()


@dataclass
class VolumeComparability:
    c1: float
    c2: float
    c3: float
    per_generation: list[dict]
    low_confidence: int

    @property
    def spread(self) -> float:
        return self.c3 / self.c2 if self.c2 > 0 else math.inf


def volume_comparability(tree: TentTree, ints: TentIntegrals) -> VolumeComparability:
    """Kube/tent ratio floor c1 and the range [c2, c3] of Vol(T)/l^(n+1) over non-root tents."""
    n = tree.model.dimension
    nonroot = ints.cube != 0
    vol = ints.estimates["volume"][nonroot]
    kube = ints.estimates["kube"][nonroot]
    gens = np.array([tree.grids[g].cube_generation[q] for g, q in zip(ints.grid[nonroot], ints.cube[nonroot])])
    ell = tree.delta ** gens.astype(float)
    scaled = vol / ell ** (n + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        kr = np.where(vol > 0, kube / vol, 0.0)
    rows = []
    for k in np.unique(gens):
        sel = gens == k
        rows.append(
            {
                "k": int(k),
                "cubes": int(sel.sum()),
                "scaled_min": float(scaled[sel].min()),
                "scaled_max": float(scaled[sel].max()),
                "kube_ratio_min": float(kr[sel].min()),
            }
        )
    low = int(np.sum(ints.errors["volume"][nonroot] > 0.2 * vol))
    return VolumeComparability(
        c1=float(kr.min()), c2=float(scaled.min()), c3=float(scaled.max()),
        per_generation=rows, low_confidence=low,
    )


# -- Kobayashi sandwich ---------------------------------------------------


@dataclass
class KubeParams:
    alpha: float
    beta: float
    per_generation: list[dict] = field(default_factory=list)
    samples: int = 0

    @property
    def beta_tilde(self) -> float:
        return (1.0 + self.beta) / 2.0


def _floor_grid(x: float, step: float) -> float:
    v = math.floor(x / step + 1e-9) * step
    if v >= x:
        v -= step
    return round(v, 10)


def _ceil_grid(x: float, step: float) -> float:
    v = math.ceil(x / step - 1e-9) * step
    if v <= x:
        v += step
    return round(v, 10)


def _kube_band_hits(tree, g, qs, pts_local, owner):
    grid = tree.grids[g]
    t = 1.0 - np.sqrt(norm2(pts_local))
    ell = grid.cube_sidelength[qs][owner]
    ok = (t > tree.delta * ell) & (t <= ell)
    if np.any(ok):
        idx = grid.mesh.nearest(_unit(pts_local[ok]))
        gen = grid.cube_generation[qs][owner[ok]]
        lab = np.empty(idx.shape, dtype=np.int64)
        for k in np.unique(gen):
            sel = gen == k
            lab[sel] = grid.labels[k][idx[sel]]
        ok[ok] = lab == qs[owner[ok]]
    return ok


def calibrate_kube_params(
    tree: TentTree, sample_count: int = 100_000, seed: int = 0, *, alpha_max: float = 0.6, step: float = 0.01
) -> KubeParams:
    """Largest alpha and smallest beta (on a ``step`` grid) with no sampled violation of
    B(c_Q, alpha) inside the kube band inside B(c_Q, beta), over all non-root cubes.

    The band (delta l, l] is used for every non-root cube, leaves included.
    When the upper bound rounds up to 1 the grid step is refined tenfold.
    """
    if tree.depth < 2:
        raise InputError("calibration needs a tree of depth >= 2")
    cubes = [(g, q) for g, q in tree.cubes(include_root=False)]
    per = max(2, sample_count // (2 * len(cubes)))
    model = tree.model
    a_viol = {}
    b_max = {}
    for g, grid in enumerate(tree.grids):
        qs = np.arange(1, grid.n_cubes)
        centres = tree.local_centers(g)[qs]
        gens = grid.cube_generation[qs]
        # lower inclusion: uniform samples of the Kobayashi ball around c_Q
        rng = rng_for(seed, "alpha", g)
        cen, a, b = model.kobayashi_ellipsoid(centres, alpha_max)
        owner = np.repeat(np.arange(len(qs)), per)
        v = _ball_samples(rng, len(owner), model.dimension)
        u = _unit(centres)[owner]
        par = np.sum(v * np.conj(u), axis=1)[:, None] * u
        z = cen[owner] + a[owner, None] * par + b[owner, None] * (v - par)
        radius = np.sqrt(norm2(mobius(centres[owner], z)))
        inside = _kube_band_hits(tree, g, qs, z, owner)
        for k in np.unique(gens):
            sel = (gens[owner] == k) & ~inside
            if np.any(sel):
                a_viol[k] = min(a_viol.get(k, math.inf), float(radius[sel].min()))
        # upper inclusion: uniform samples of the kube band
        pts, hit, own2, _ = tree._draw(g, qs, per, seed, "beta", True)
        rad2 = np.sqrt(norm2(mobius(centres[own2[hit]], pts[hit])))
        for k in np.unique(gens):
            sel = gens[own2[hit]] == k
            if np.any(sel):
                b_max[k] = max(b_max.get(k, 0.0), float(rad2[sel].max()))
        for k, r in _face_extremes(tree, g, seed).items():
            b_max[k] = max(b_max.get(k, 0.0), r)
    worst_a = min(a_viol.values(), default=alpha_max)
    worst_b = max(b_max.values(), default=0.0)
    alpha = _shell_refine(tree, _floor_grid(min(worst_a, alpha_max), step), step, seed)
    beta_step = step
    beta = _ceil_grid(worst_b, beta_step)
    while beta >= 1.0 and beta_step > 1e-8:
        beta_step /= 10
        beta = _ceil_grid(worst_b, beta_step)
    if not 0.0 < alpha < beta < 1.0:
        raise CalibrationError(f"no admissible pair: alpha={alpha}, beta={beta}")
    rows = [
        {
            "k": int(k),
            "alpha_violation": a_viol.get(k, math.inf),
            "beta_max": b_max.get(k, 0.0),
        }
        for k in sorted(set(a_viol) | set(b_max))
    ]
    return KubeParams(alpha=alpha, beta=beta, per_generation=rows, samples=2 * per * len(cubes))


def _shell_refine(tree: TentTree, alpha: float, step: float, seed: int, per: int = 64) -> float:
    """Step alpha down until sampled spheres of radius alpha around every c_Q lie in the kube band.

    Volume samples rarely land where the ball first leaves the kube; the
    sphere itself is where that happens.
    """
    n = tree.model.dimension
    while alpha > 0:
        clean = True
        for g, grid in enumerate(tree.grids):
            qs = np.arange(1, grid.n_cubes)
            centres = tree.local_centers(g)[qs]
            rng = rng_for(seed, "alpha-shell", g, int(round(alpha / step)))
            for start in range(0, len(qs), 4096):
                block = qs[start : start + 4096]
                owner = np.repeat(np.arange(len(block)), per)
                v = alpha * uniform_sphere(rng, len(owner), n)
                z = mobius(centres[start : start + 4096][owner], v)
                if not _kube_band_hits(tree, g, block, z, owner).all():
                    clean = False
                    break
            if not clean:
                break
        if clean:
            return alpha
        alpha = round(alpha - step, 10)
    return alpha


def _face_extremes(tree: TentTree, g: int, seed: int, jitter: int = 4) -> dict[int, float]:
    """Per generation, the largest radius from c_Q over the two faces t = delta l, l of the kube bands.

    The radius peaks at the angular extremes of a cube, which volume
    sampling rarely reaches, so every mesh point is probed along with
    ``jitter`` perturbations inside its mesh cell (kept when they stay in
    the same cube).
    """
    grid = tree.grids[g]
    mesh = grid.mesh
    n = tree.model.dimension
    base = mesh.points
    rng = rng_for(seed, "face", g)
    if n == 1:
        cell = 2.0 * math.sin(math.pi / mesh.size)
    else:
        probe = uniform_sphere(rng_for(0, "cell-euclid", mesh.size), 20000, n)
        cell = 1.5 * float(np.max(np.linalg.norm(probe - base[mesh.nearest(probe)], axis=1)))
    dirs = [base]
    for _ in range(jitter):
        v = rng.standard_normal((len(base), 2 * n))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        v *= cell * rng.random(len(base))[:, None] ** (1.0 / (2 * n - 1))
        dirs.append(_unit(base + v[:, :n] + 1j * v[:, n:]))
    near = [np.arange(len(base))] + [mesh.nearest(d) for d in dirs[1:]]
    centres = tree.local_centers(g)
    out = {}
    for k in range(1, tree.depth + 1):
        ell = tree.delta**k
        own = grid.labels[k]
        for d, idx in zip(dirs, near):
            keep = grid.labels[k][idx] == own
            q = own[keep]
            for t in (tree.delta * ell * (1.0 + 1e-9), ell):
                r = np.sqrt(norm2(mobius(centres[q], (1.0 - t) * d[keep])))
                out[k] = max(out.get(k, 0.0), float(r.max()))
    return out


def _ball_samples(rng, count, n):
    g = rng.standard_normal((count, 2 * n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    g *= rng.random(count)[:, None] ** (1.0 / (2 * n))
    return g[:, :n] + 1j * g[:, n:]


@dataclass
class SandwichAudit:
    alpha: float
    beta: float
    samples: int
    lower_violations: int
    upper_violations: int

    @property
    def passed(self) -> bool:
        return self.lower_violations == 0 and self.upper_violations == 0


def audit_sandwich(tree: TentTree, params: KubeParams, sample_count: int, seed: int) -> SandwichAudit:
    """Fresh-sample check of B(c_Q, alpha) in kube in B(c_Q, beta) over random non-root cubes.

    Half the budget probes the lower inclusion; the other half picks cubes
    whose kube bands are sampled (four draws per pick, hits are tested).
    """
    model = tree.model
    rng = rng_for(seed, "sandwich-audit")
    cubes = np.array(list(tree.cubes(include_root=False)))
    pick = cubes[rng.integers(len(cubes), size=sample_count)]
    lower = upper = tested = 0
    half = sample_count // 2
    for g in range(len(tree.grids)):
        grid = tree.grids[g]
        sel_lo = pick[:half][pick[:half, 0] == g, 1]
        sel_hi = pick[half:][pick[half:, 0] == g, 1]
        centres = tree.local_centers(g)
        if sel_lo.size:
            cen, a, b = model.kobayashi_ellipsoid(centres[sel_lo], params.alpha)
            v = _ball_samples(rng, len(sel_lo), model.dimension)
            u = _unit(centres[sel_lo])
            par = np.sum(v * np.conj(u), axis=1)[:, None] * u
            z = cen + a[:, None] * par + b[:, None] * (v - par)
            ok = _kube_band_hits(tree, g, sel_lo, z, np.arange(len(sel_lo)))
            lower += int(np.sum(~ok))
        if sel_hi.size:
            uq, counts = np.unique(sel_hi, return_counts=True)
            for c in np.unique(counts):
                qs = uq[counts == c]
                pts, hit, own, _ = tree._draw(g, qs, 4 * int(c), seed, "audit", True)
                rad = np.sqrt(norm2(mobius(centres[qs][own[hit]], pts[hit])))
                upper += int(np.sum(rad >= params.beta))
                tested += int(hit.sum())
    return SandwichAudit(params.alpha, params.beta, half + tested, lower, upper)


# -- sub-mean value -------------------------------------------------------


@dataclass
class SubmeanReport:
    constant: float
    per_generation: dict[int, float]
    samples: int
    beta_tilde: float
    flagged: int

    def growth_ok(self, constant: float, factor: float = 2.0) -> bool:
        """Each generation's maximum stays within ``factor`` times a constant fitted elsewhere."""
        return all(v <= factor * constant for v in self.per_generation.values())


def _kernel_centre(h) -> np.ndarray | None:
    if getattr(h, "kind", None) != "kernel":
        return None
    w = np.asarray(h.params[0], dtype=complex).reshape(-1)
    return w if norm2(w) > 0 else None


def _ball_integral(model, rng, c, radius, h, p, count) -> float:
    """int_{B(c, radius)} |h|^p dV by a defensive mixture around the kernel centre of h."""
    vol_b = float(model.kobayashi_ball_volume(c[None, :], radius)[0])
    w = _kernel_centre(h)
    if w is None:
        x = model.sample_kobayashi_ball(rng, c, radius, count)
        return vol_b * float(np.mean(np.abs(h(x)) ** p))
    half = count // 2
    xb = model.sample_kobayashi_ball(rng, c, radius, half)
    xf = mobius(w, uniform_ball(rng, count - half, model.dimension))
    x = np.concatenate([xb, xf])
    inside = np.sqrt(norm2(mobius(c, x))) < radius
    dens = 0.5 * inside / vol_b + 0.5 * mobius_jacobian(w, x) / model.volume
    return float(np.mean(np.where(inside, np.abs(h(x)) ** p / dens, 0.0)))


def submean_check(
    tree: TentTree,
    functions,
    p: float,
    sample_count: int,
    seed: int,
    *,
    beta: float,
    ball_samples: int = 512,
    z_per_cube: int = 8,
    kube_volumes: TentIntegrals | None = None,
) -> SubmeanReport:
    """Sup over sampled (z, Q, f) of f(z) Vol(kube Q) / int_{B(c_Q, beta~)} f dV with f = |h|^p.

    Cubes are drawn evenly across generations 1..depth.  For a normalised
    kernel h = k_w, half the draws take the cube over pi(w), where the
    ratio is largest, and each draw keeps the worst of ``z_per_cube``
    kube points.  Ball integrals of kernels use a half-uniform, half
    Möbius-focused mixture so that the peak near w is not missed.
    """
    if p < 1:
        raise InputError("p must be >= 1")
    model = tree.model
    bt = (1.0 + beta) / 2.0
    rng = rng_for(seed, "submean")
    if kube_volumes is None:
        kube_volumes = tree.integrate_tents(per_tent=64, seed=seed, include_root=False)
    index = {(int(g), int(q)): i for i, (g, q) in enumerate(zip(kube_volumes.grid, kube_volumes.cube))}
    by_gen = {}
    for g, grid in enumerate(tree.grids):
        for k in range(1, tree.depth + 1):
            sl = grid.generation_slices[k]
            by_gen.setdefault(k, []).extend((g, q) for q in range(sl.start, sl.stop))
    per_gen: dict[int, float] = {}
    worst = 0.0
    flagged = 0
    for s in range(sample_count):
        k = 1 + s % tree.depth
        h = functions[rng.integers(len(functions))]
        w = _kernel_centre(h)
        if w is not None and rng.random() < 0.5:
            g = int(rng.integers(len(tree.grids)))
            q = int(tree.grids[g].cube_of(_unit(w[None, :])[0], k).index)
        else:
            g, q = by_gen[k][rng.integers(len(by_gen[k]))]
        z = tree.sample_tent(g, q, z_per_cube, int(rng.integers(2**31)), band=k < tree.depth)
        if w is not None:
            # |k_w| peaks on the ray through w, as close to the boundary as the kube allows
            t_min = tree.delta ** (k + 1) * (1.0 + 1e-9) if k < tree.depth else 1e-12
            ray = ((1.0 - t_min) * _unit(w[None, :]))
            if tree.in_kube(g, q, ray)[0]:
                z = np.concatenate([z, ray])
        c = tree.world_tent_centers(g)[q]
        integral = _ball_integral(model, rng, c, bt, h, p, ball_samples)
        fz = float(np.max(np.abs(h(z)) ** p))
        kv = float(kube_volumes.estimates["kube"][index[(g, q)]])
        if integral <= 0:
            if fz > 0:
                flagged += 1
            continue
        ratio = fz * kv / integral
        worst = max(worst, ratio)
        per_gen[k] = max(per_gen.get(k, 0.0), ratio)
    return SubmeanReport(worst, per_gen, sample_count, bt, flagged)


# -- kube partition ---------------------------------------------------------


@dataclass
class PartitionReport:
    samples: int
    exceptions: int
    disagreements: int

    @property
    def passed(self) -> bool:
        return self.exceptions == 0 and self.disagreements == 0


def kube_partition_check(tree: TentTree, sample_count: int = 10_000, seed: int = 0) -> PartitionReport:
    """Every sampled interior point lies in exactly one kube of each grid.

    Half the points are uniform in the ball, half have 1 - |z| log-uniform
    down to delta^(depth+1) so that every generation is exercised.  Each
    point is tested against the kube predicate of every candidate cube
    (root plus the cube over pi(z) at each generation) and the count must
    be one; ``kube_of`` must name the same cube.
    """
    model, n = tree.model, tree.model.dimension
    rng = rng_for(seed, "kube-partition")
    half = sample_count // 2
    t_min = tree.delta ** (tree.depth + 1)
    t = np.exp(rng.uniform(math.log(t_min), 0.0, sample_count - half))
    z = np.concatenate([uniform_ball(rng, half, n), uniform_sphere(rng, len(t), n) * (1.0 - t)[:, None]])
    exceptions = disagreements = 0
    for g, grid in enumerate(tree.grids):
        local = grid.to_mesh_frame(z)
        owner = tree.kube_of(g, z)
        claims = np.zeros(len(z), dtype=np.int64)
        claimed = np.full(len(z), -1, dtype=np.int64)
        for k in range(tree.depth + 1):
            cand = np.zeros(len(z), dtype=np.int64) if k == 0 else tree._cube_index(g, local, k)
            for q in np.unique(cand):
                sel = np.flatnonzero(cand == q)
                if q < 0:
                    continue
                hit = tree.in_kube(g, int(q), z[sel])
                claims[sel[hit]] += 1
                claimed[sel[hit]] = q
        exceptions += int(np.sum(claims != 1))
        disagreements += int(np.sum((claims == 1) & (claimed != owner)))
    return PartitionReport(sample_count, exceptions, disagreements)
