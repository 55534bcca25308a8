"""Point-cloud measure experiments: clouds, weighted hull volumes, evolution.

The weighted volume of the convex hull of a cloud is estimated by Monte
Carlo over the axis-aligned bounding box with a Frank-Wolfe membership
oracle: a sample x belongs to the hull iff the minimum of
|| sum_i lambda_i v_i - x ||^2 over the weight simplex is at most the
membership tolerance.  Membership runs in two certified stages: outside
certificates from the circumscribed ball and a fixed set of support
directions, then an exact per-sample min-norm-point solve (fully
corrective Frank-Wolfe with affine sub-solves) that terminates finitely
at machine-precision distances.

Sampling uses a counter-based generator keyed by the seed and consumed in
fixed index order, so estimates are bit-identical for any degree of
evaluation parallelism.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from typing import Callable, List, NamedTuple, Optional, Sequence

import numba
import numpy as np

from .dynamics import ConformalSystem, PhaseState
from .series import NonPositiveConformalFactorError, SeriesTable

__all__ = [
    "PointCloud",
    "DensityKind",
    "VolumeConfig",
    "VolumeEstimate",
    "VolumeRecord",
    "FrankWolfeStallError",
    "CloudStepError",
    "cell600_vertices",
    "sphere_cloud",
    "hull_membership",
    "weighted_hull_volume",
    "weighted_hull_volume_multi",
    "registered_volume_estimates",
    "evolve_cloud",
    "volume_series",
]

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0


class FrankWolfeStallError(RuntimeError):
    """Membership stayed ambiguous at the iteration cap for some samples."""

    def __init__(self, sample_count: int):
        self.sample_count = sample_count
        super().__init__(
            f"hull membership ambiguous for {sample_count} sample(s) at the iteration cap"
        )


class CloudStepError(RuntimeError):
    """A step map failed on one cloud point."""

    def __init__(self, point_index: int, cause: BaseException):
        self.point_index = point_index
        super().__init__(f"step failed at cloud point {point_index}: {cause}")


@dataclasses.dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered, nonempty collection of 4D phase points (n = 2)."""

    points: tuple

    def __post_init__(self):
        points = tuple(self.points)
        if not points:
            raise ValueError("point cloud must be nonempty")
        for pt in points:
            if not isinstance(pt, PhaseState) or pt.n != 2:
                raise ValueError("cloud points must be PhaseState values with n = 2")
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.array([pt.as_array() for pt in self.points])

    @classmethod
    def from_array(cls, arr) -> "PointCloud":
        return cls(tuple(PhaseState.from_array(row) for row in np.asarray(arr, dtype=float)))


def _parity(perm) -> int:
    inversions = sum(
        1 for i in range(len(perm)) for j in range(i + 1, len(perm)) if perm[i] > perm[j]
    )
    return inversions % 2


def cell600_vertices(center, radius: float) -> PointCloud:
    """The 120 vertices of a 600-cell with the given circumradius and center.

    At unit circumradius: the 8 signed coordinate axes, the 16 points
    (+-1/2, +-1/2, +-1/2, +-1/2), and the 96 even permutations of
    (+-phi, +-1, +-1/phi, 0)/2 with phi the golden ratio.  The generation
    order is fixed: axes by (axis, sign), then sign patterns in binary
    order, then even permutations in lexicographic order with sign
    patterns in binary order.
    """
    if not radius > 0.0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=float)
    if center.shape != (4,):
        raise ValueError("center must be a 4-vector")

    verts = []
    for axis in range(4):
        for sign in (1.0, -1.0):
            v = np.zeros(4)
            v[axis] = sign
            verts.append(v)
    for bits in range(16):
        signs = np.array([1.0 if bits & (1 << i) == 0 else -1.0 for i in range(4)])
        verts.append(0.5 * signs)
    base = np.array([GOLDEN_RATIO, 1.0, 1.0 / GOLDEN_RATIO, 0.0]) / 2.0
    for perm in itertools.permutations(range(4)):
        if _parity(perm) != 0:
            continue
        pattern = base[list(perm)]
        nz = [i for i in range(4) if pattern[i] != 0.0]
        for bits in range(8):
            v = pattern.copy()
            for slot, i in enumerate(nz):
                if bits & (1 << slot):
                    v[i] = -v[i]
            verts.append(v)

    arr = np.array(verts)
    assert arr.shape == (120, 4)
    return PointCloud.from_array(center + radius * arr)


def sphere_cloud(center, radius: float, count: int = 5000) -> PointCloud:
    """Deterministic low-discrepancy points on the 3-sphere of given radius.

    Uses the Kronecker sequence with the plastic-number base in [0, 1)^3,
    mapped area-preservingly to the sphere through the torus
    parametrization (sqrt(s) e^{i a}, sqrt(1 - s) e^{i b}).
    """
    if not radius > 0.0:
        raise ValueError("radius must be positive")
    if count < 1:
        raise ValueError("count must be positive")
    center = np.asarray(center, dtype=float)
    plastic = 1.324717957244746  # real root of t^3 = t + 1
    alphas = 1.0 / plastic ** np.arange(1, 4)
    i = np.arange(1, count + 1)[:, None]
    u = np.mod(0.5 + i * alphas[None, :], 1.0)
    s = u[:, 0]
    a = 2.0 * np.pi * u[:, 1]
    b = 2.0 * np.pi * u[:, 2]
    r1 = np.sqrt(s)
    r2 = np.sqrt(1.0 - s)
    pts = np.column_stack([r1 * np.cos(a), r1 * np.sin(a), r2 * np.cos(b), r2 * np.sin(b)])
    return PointCloud.from_array(center + radius * pts)


@dataclasses.dataclass(frozen=True)
class DensityKind:
    """Density weighting a volume: euclidean (1), mu0 (1/N), or mu_mod2 (1/N_mod)."""

    tag: str
    system: Optional[ConformalSystem] = None
    table: Optional[SeriesTable] = None
    h: Optional[float] = None

    @classmethod
    def euclidean(cls) -> "DensityKind":
        return cls(tag="euclidean")

    @classmethod
    def mu0(cls, system: ConformalSystem) -> "DensityKind":
        return cls(tag="mu0", system=system)

    @classmethod
    def mu_mod2(cls, table: SeriesTable, h: float) -> "DensityKind":
        return cls(tag="mu_mod2", table=table, h=h)

    def _factor(self, points: np.ndarray) -> np.ndarray:
        system = self.system if self.tag == "mu0" else self.table.system
        if system.conformal_factor_array is not None:
            return system.conformal_factor_array(points)
        return np.array(
            [system.conformal_factor(PhaseState.from_array(row)) for row in points]
        )

    def weights(self, points: np.ndarray) -> np.ndarray:
        """Density values at an (S, 4) array of phase points."""
        points = np.asarray(points, dtype=float)
        if self.tag == "euclidean":
            return np.ones(points.shape[0])
        if self.tag == "mu0":
            return 1.0 / self._factor(points)
        if self.tag == "mu_mod2":
            x, y, px, py = points[:, 0], points[:, 1], points[:, 2], points[:, 3]
            factor = self._factor(points) + self.h * self.h * self.table.n2_raw(x, y, px, py)
            bad = factor <= 0.0
            if np.any(bad):
                raise NonPositiveConformalFactorError(
                    f"modified conformal factor non-positive at {int(bad.sum())} sample(s)"
                )
            return 1.0 / factor
        raise ValueError(f"unknown density tag {self.tag!r}")


@dataclasses.dataclass(frozen=True)
class VolumeConfig:
    """Monte Carlo controls for weighted hull volumes."""

    samples: int = 1_000_000
    seed: int = 0
    membership_tol: float = 1e-9
    fw_max_iter: int = 2000

    def __post_init__(self):
        if self.samples < 10_000:
            raise ValueError("samples must be at least 10^4")
        if not self.membership_tol > 0.0:
            raise ValueError("membership_tol must be positive")
        if self.fw_max_iter < 1:
            raise ValueError("fw_max_iter must be at least 1")


class VolumeEstimate(NamedTuple):
    value: float
    std_error: float
    degenerate: bool = False


class VolumeRecord(NamedTuple):
    time: float
    value: float
    std_error: float


def _support_directions() -> np.ndarray:
    dirs = []
    for axis in range(4):
        for sign in (1.0, -1.0):
            v = np.zeros(4)
            v[axis] = sign
            dirs.append(v)
    for bits in range(16):
        signs = np.array([1.0 if bits & (1 << i) == 0 else -1.0 for i in range(4)])
        dirs.append(0.5 * signs)
    return np.array(dirs)


_DIRECTIONS = _support_directions()


@numba.njit(cache=True)
def _solve_inplace(a, b, n, threshold):  # pragma: no cover - exercised via refine
    for col in range(n):
        piv = col
        big = abs(a[col, col])
        for row in range(col + 1, n):
            mag = abs(a[row, col])
            if mag > big:
                big = mag
                piv = row
        if big <= threshold:
            return False
        if piv != col:
            for c in range(n):
                tmp = a[col, c]
                a[col, c] = a[piv, c]
                a[piv, c] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        inv = 1.0 / a[col, col]
        for row in range(col + 1, n):
            fac = a[row, col] * inv
            if fac != 0.0:
                for c in range(col, n):
                    a[row, c] -= fac * a[col, c]
                b[row] -= fac * b[col]
    for row in range(n - 1, -1, -1):
        acc = b[row]
        for c in range(row + 1, n):
            acc -= a[row, c] * b[c]
        b[row] = acc / a[row, row]
    return True


@numba.njit(cache=True)
def _wolfe_refine(samples, verts, tol, max_iter):  # pragma: no cover - compiled
    """Exact membership for each sample by the min-norm-point iteration.

    Fully corrective Frank-Wolfe on the shifted vertex set {v_j - x}: add
    the most improving vertex, re-solve the affine least-squares problem on
    the active set, and drop vertices whose weights leave the simplex.
    Terminates at the true squared distance up to machine precision; the
    duality bound 2 min_j z . p_j - ||z||^2 certifies non-members early.
    """
    n_samples = samples.shape[0]
    m = verts.shape[0]
    dim = verts.shape[1]
    member = np.zeros(n_samples, np.bool_)
    stalled = 0
    cap = dim + 3
    idx = np.empty(cap, np.int64)
    lam = np.empty(cap)
    pts = np.empty((cap, dim))
    kkt = np.empty((cap + 1, cap + 1))
    rhs = np.empty(cap + 1)
    z = np.empty(dim)
    # transposed copy and vertex norms keep the two hot scans contiguous
    vt = np.empty((dim, m))
    vnorm2 = np.zeros(m)
    for j in range(m):
        for d in range(dim):
            vt[d, j] = verts[j, d]
            vnorm2[j] += verts[j, d] * verts[j, d]
    score = np.empty(m)

    for s in range(n_samples):
        x = samples[s]
        xx = 0.0
        for d in range(dim):
            xx += x[d] * x[d]
        # ||v_j - x||^2 = ||v_j||^2 - 2 v_j . x + ||x||^2
        for j in range(m):
            score[j] = vnorm2[j] + xx
        for d in range(dim):
            xd = 2.0 * x[d]
            for j in range(m):
                score[j] -= xd * vt[d, j]
        best = 0
        best_norm = score[0]
        scale = score[0]
        for j in range(1, m):
            if score[j] < best_norm:
                best_norm = score[j]
                best = j
            if score[j] > scale:
                scale = score[j]
        k = 1
        idx[0] = best
        lam[0] = 1.0
        for d in range(dim):
            z[d] = verts[best, d] - x[d]
        zz = best_norm
        eps = 1e-12 * scale + 1e-300

        it = 0
        settled = False
        while it < max_iter:
            it += 1
            if zz <= tol:
                member[s] = True
                settled = True
                break
            # z . (v_j - x) over all vertices
            zx = 0.0
            for d in range(dim):
                zx += z[d] * x[d]
            for j in range(m):
                score[j] = -zx
            for d in range(dim):
                zd = z[d]
                for j in range(m):
                    score[j] += zd * vt[d, j]
            jmin = 0
            dmin = score[0]
            for j in range(1, m):
                if score[j] < dmin:
                    dmin = score[j]
                    jmin = j
            if 2.0 * dmin - zz > tol:
                settled = True
                break
            if dmin >= zz - eps:
                member[s] = zz <= tol
                settled = True
                break
            duplicate = False
            for a in range(k):
                if idx[a] == jmin:
                    duplicate = True
                    break
            if duplicate:
                member[s] = zz <= tol
                settled = True
                break
            if k == cap:
                drop = 0
                small = lam[0]
                for a in range(1, k):
                    if lam[a] < small:
                        small = lam[a]
                        drop = a
                for a in range(drop, k - 1):
                    idx[a] = idx[a + 1]
                    lam[a] = lam[a + 1]
                k -= 1
                tot = 0.0
                for a in range(k):
                    tot += lam[a]
                for a in range(k):
                    lam[a] /= tot
            idx[k] = jmin
            lam[k] = 0.0
            k += 1

            while True:
                for a in range(k):
                    for d in range(dim):
                        pts[a, d] = verts[idx[a], d] - x[d]
                for a in range(k):
                    for b in range(k):
                        acc = 0.0
                        for d in range(dim):
                            acc += pts[a, d] * pts[b, d]
                        kkt[a, b] = acc
                    kkt[a, k] = 1.0
                    kkt[k, a] = 1.0
                kkt[k, k] = 0.0
                for a in range(k):
                    rhs[a] = 0.0
                rhs[k] = 1.0
                ok = _solve_inplace(kkt[: k + 1, : k + 1], rhs[: k + 1], k + 1, 1e-13 * scale)
                if not ok:
                    # affinely dependent active set; drop the new vertex
                    k -= 1
                    break
                negative = False
                for a in range(k):
                    if rhs[a] <= 1e-12:
                        negative = True
                        break
                if not negative:
                    for a in range(k):
                        lam[a] = rhs[a]
                    break
                theta = 1.0
                drop = -1
                for a in range(k):
                    if rhs[a] <= 1e-12:
                        denom = lam[a] - rhs[a]
                        if denom > 0.0:
                            t = lam[a] / denom
                            if t < theta:
                                theta = t
                                drop = a
                if drop < 0:
                    for a in range(k):
                        lam[a] = rhs[a]
                    break
                for a in range(k):
                    lam[a] = (1.0 - theta) * lam[a] + theta * rhs[a]
                for a in range(drop, k - 1):
                    idx[a] = idx[a + 1]
                    lam[a] = lam[a + 1]
                k -= 1
                if k == 1:
                    lam[0] = 1.0
                    break

            for d in range(dim):
                acc = 0.0
                for a in range(k):
                    acc += lam[a] * (verts[idx[a], d] - x[d])
                z[d] = acc
            zz = 0.0
            for d in range(dim):
                zz += z[d] * z[d]

        if not settled:
            if tol < zz <= 10.0 * tol:
                stalled += 1
            member[s] = zz <= tol
    return member, stalled


def hull_membership(
    samples: np.ndarray,
    vertices: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 2000,
) -> np.ndarray:
    """Boolean membership of each sample in the convex hull of the vertices.

    A sample is a member iff its squared distance to the hull is at most
    ``tol``.  Raises :class:`FrankWolfeStallError` when the exact solve hits
    the iteration cap with a squared distance inside (tol, 10 tol].
    """
    samples = np.ascontiguousarray(samples, dtype=float)
    verts = np.ascontiguousarray(vertices, dtype=float)
    total = samples.shape[0]
    member = np.zeros(total, dtype=bool)
    if total == 0:
        return member

    # certified-outside prefilters: circumscribed ball, then support planes
    centroid = verts.mean(axis=0)
    radius = float(np.sqrt(np.max(np.einsum("ij,ij->i", verts - centroid, verts - centroid))))
    margin = np.linalg.norm(samples - centroid, axis=1) - radius
    outside = (margin > 0.0) & (margin * margin > tol)
    live = np.flatnonzero(~outside)

    if live.size and verts.shape[1] == _DIRECTIONS.shape[1]:
        support = (verts @ _DIRECTIONS.T).max(axis=0)
        plane_margin = (samples[live] @ _DIRECTIONS.T - support).max(axis=1)
        keep = ~((plane_margin > 0.0) & (plane_margin * plane_margin > tol))
        live = live[keep]

    if live.size:
        refined, stalled = _wolfe_refine(samples[live], verts, tol, max_iter)
        member[live[refined]] = True
        if stalled:
            raise FrankWolfeStallError(int(stalled))
    return member


def weighted_hull_volume_multi(
    cloud: PointCloud, densities: Sequence[DensityKind], cfg: VolumeConfig
) -> List[VolumeEstimate]:
    """Hull-volume estimates for several densities sharing one sample set.

    The samples and the membership test are density independent, so
    evaluating several densities on one draw both saves the dominant cost
    and pairs their Monte Carlo noise exactly.
    """
    pts = cloud.as_array()
    dim = pts.shape[1]
    if pts.shape[0] <= dim or np.linalg.matrix_rank(pts - pts[0]) < dim:
        return [VolumeEstimate(0.0, 0.0, True) for _ in densities]

    lower = pts.min(axis=0)
    upper = pts.max(axis=0)
    box_volume = float(np.prod(upper - lower))

    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    samples = lower + rng.random((cfg.samples, dim)) * (upper - lower)

    member = hull_membership(samples, pts, cfg.membership_tol, cfg.fw_max_iter)
    inside = samples[member]
    estimates = []
    for density in densities:
        weights = np.zeros(cfg.samples)
        if inside.size:
            weights[member] = density.weights(inside)
        mean = float(weights.mean())
        variance = float(weights.var())
        estimates.append(
            VolumeEstimate(box_volume * mean, box_volume * math.sqrt(variance / cfg.samples), False)
        )
    return estimates


def weighted_hull_volume(
    cloud: PointCloud, density: DensityKind, cfg: VolumeConfig
) -> VolumeEstimate:
    """Monte Carlo estimate of the density integral over the hull of the cloud.

    Samples are drawn uniformly in the bounding box from a Philox stream
    keyed by ``cfg.seed``; the density is evaluated at member samples and
    averaged in fixed index order.  Degenerate clouds (affine rank below
    the space dimension) report volume zero with the degenerate flag.
    """
    return weighted_hull_volume_multi(cloud, [density], cfg)[0]


class _AffineDensity:
    """Pullback of a density under x -> A w + b, including the Jacobian factor."""

    def __init__(self, density: DensityKind, matrix: np.ndarray, offset: np.ndarray):
        self._density = density
        self._matrix = matrix
        self._offset = offset
        self._jacobian = abs(float(np.linalg.det(matrix)))

    def weights(self, points: np.ndarray) -> np.ndarray:
        return self._jacobian * self._density.weights(points @ self._matrix.T + self._offset)


def registered_volume_estimates(
    cloud: PointCloud,
    frame_cloud: PointCloud,
    densities: Sequence[DensityKind],
    cfg: VolumeConfig,
) -> List[VolumeEstimate]:
    """Hull volumes of ``cloud`` computed in the frame of ``frame_cloud``.

    Fits the least-squares affine map from the frame cloud onto the cloud
    and integrates over the pulled-back hull with the pulled-back density;
    affine maps commute with convex hulls and the Jacobian factor makes the
    change of variables exact, so the estimator is unbiased for the same
    integral.  Because small clouds evolve near-affinely, the registered
    geometry (and hence the membership pattern of a fixed sample stream)
    barely changes between records, which is what makes the
    identical-seed-per-record variance pairing of a volume series
    effective even when the cloud travels and rotates.
    """
    current = cloud.as_array()
    frame = frame_cloud.as_array()
    if current.shape != frame.shape:
        raise ValueError("cloud and frame_cloud must have the same number of points")
    ones = np.ones((frame.shape[0], 1))
    coeffs, *_ = np.linalg.lstsq(np.hstack([frame, ones]), current, rcond=None)
    matrix = coeffs[:-1].T
    offset = coeffs[-1]
    registered = (current - offset) @ np.linalg.inv(matrix).T
    pulled = [_AffineDensity(density, matrix, offset) for density in densities]
    return weighted_hull_volume_multi(PointCloud.from_array(registered), pulled, cfg)


def evolve_cloud(cloud: PointCloud, step: Callable[[PhaseState], PhaseState]) -> PointCloud:
    """Apply a step map to every point, preserving order."""
    out = []
    for index, pt in enumerate(cloud.points):
        try:
            out.append(step(pt))
        except Exception as exc:
            raise CloudStepError(index, exc) from exc
    return PointCloud(tuple(out))


def volume_series(
    cloud0: PointCloud,
    step: Callable[[PhaseState], PhaseState],
    density: DensityKind,
    n_steps: int,
    record_every: int,
    cfg: VolumeConfig,
    dt: float = 1.0,
) -> List[VolumeRecord]:
    """Weighted hull volume recorded every ``record_every`` steps.

    Every record reuses the same Monte Carlo configuration (and hence the
    same underlying sample stream), pairing the variance across records.
    ``dt`` converts step counts into the reported times.
    """
    if record_every < 1:
        raise ValueError("record_every must be at least 1")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")

    records = []
    estimate = weighted_hull_volume(cloud0, density, cfg)
    records.append(VolumeRecord(0.0, estimate.value, estimate.std_error))
    cloud = cloud0
    for step_index in range(1, n_steps + 1):
        cloud = evolve_cloud(cloud, step)
        if step_index % record_every == 0:
            estimate = weighted_hull_volume(cloud, density, cfg)
            records.append(VolumeRecord(step_index * dt, estimate.value, estimate.std_error))
    return records
