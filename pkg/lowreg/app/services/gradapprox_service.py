"""
Constructive approximations on a chart: controlled covers, partitions of
unity with gradient bounds, approximation of vector fields by finite sums
h_p grad f_p, and approximation of nonnegative functions by radial bumps.
"""
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import structlog
from scipy import ndimage
from scipy.spatial import cKDTree

from app.core.exceptions import (
    DeltaTooLargeError,
    InadmissibleEpsilonError,
    MissingProviderError,
    NegativeFieldError,
    ResolutionError,
    SupportViolationError,
)
from app.core.exprparse import diff_expr, eval_expr
from app.core.profiles import floor_function, radial_ramp
from app.core.symbolic import evaluate_nested
from app.models.field import ScalarField, VectorField
from app.models.grid import Box, ChartGrid
from app.schemas.reports import ApproxReport, CoverReport, RotSymReport
from app.services.field_service import fd_array, field_service

logger = structlog.get_logger()

RadiusMap = Union[float, Callable[..., np.ndarray]]


def overlap_bound(n: int) -> int:
    """Lattice points of spacing delta/(2 sqrt n) in a cube of half-width 2 delta"""
    return (2 * math.ceil(4.0 * math.sqrt(n)) + 1) ** n


def piece_bound(n: int) -> int:
    return 2 * (12 * n) ** n * (n * n + 1)


def _block(grid: ChartGrid, center: np.ndarray, radius: float) -> Tuple[Tuple[slice, ...], List[np.ndarray]]:
    """Index window of the nodes within ``radius`` (sup norm) of a point and its offsets x - center"""
    slices = []
    offsets = []
    for axis, ax in enumerate(grid.axes):
        h = grid.spacing[axis]
        start = max(int(math.ceil((center[axis] - radius - grid.lower[axis]) / h - 1e-9)), 0)
        stop = min(int(math.floor((center[axis] + radius - grid.lower[axis]) / h + 1e-9)) + 1, grid.nodes[axis])
        stop = max(stop, start)
        slices.append(slice(start, stop))
        shape = [1] * grid.dimension
        shape[axis] = stop - start
        offsets.append((ax[start:stop] - center[axis]).reshape(shape))
    return tuple(slices), offsets


def _radial(offsets: List[np.ndarray], inner: float, outer: float) -> Tuple[np.ndarray, np.ndarray]:
    """Ramp 1 on B_inner, 0 off B_outer, and its gradient, on a block"""
    r = np.sqrt(sum(o ** 2 for o in offsets))
    value, d, _ = radial_ramp(r, inner, outer)
    safe = np.where(r > 0, r, 1.0)
    grad = np.stack([np.broadcast_to(d * o / safe, r.shape) for o in offsets])
    return value, grad


@dataclass(frozen=True, eq=False)
class ControlledCover:
    """Lattice centres y_i of scale delta covering a sub-box"""

    grid: ChartGrid
    region: Box
    delta: float
    centers: np.ndarray
    lattice_index: np.ndarray

    @property
    def count(self) -> int:
        return int(self.centers.shape[0])

    @property
    def spacing(self) -> float:
        return self.delta / (2.0 * math.sqrt(self.grid.dimension))

    @property
    def overlap_bound(self) -> int:
        return overlap_bound(self.grid.dimension)

    @cached_property
    def tree(self) -> Optional[cKDTree]:
        return cKDTree(self.centers) if self.count else None

    def _probe_nodes(self, expand: float) -> np.ndarray:
        lo = tuple(a - expand for a in self.region[0])
        hi = tuple(b + expand for b in self.region[1])
        slices = self.grid.box_slices((lo, hi))
        return np.stack([c[slices].ravel() for c in self.grid.coordinates], axis=1)

    def measured_overlap(self) -> int:
        """Max number of balls B_2delta(y_i) containing one grid node"""
        if self.tree is None:
            return 0
        nodes = self._probe_nodes(2.0 * self.delta)
        counts = self.tree.query_ball_point(nodes, 2.0 * self.delta, return_length=True)
        return int(np.max(counts))

    def covers_region(self) -> bool:
        """Every grid node of the region lies in some B_delta(y_i)"""
        if self.tree is None:
            return False
        nodes = self._probe_nodes(0.0)
        dist, _ = self.tree.query(nodes)
        return bool(np.all(dist < self.delta))

    def report(self) -> CoverReport:
        return CoverReport(
            delta=self.delta,
            count=self.count,
            overlap_measured=self.measured_overlap(),
            overlap_bound=self.overlap_bound,
            covers_region=self.covers_region(),
        )


class PartitionOfUnity:
    """
    chi_i = eta_i / h(sum_j eta_j) with eta_i = 1 on B_delta(y_i) and 0 off
    B_2delta(y_i), h the smooth floor. Values are produced per centre on
    demand; only the sum of the eta_j and its gradient are stored.
    """

    def __init__(self, cover: ControlledCover):
        self.cover = cover
        self.grid = cover.grid
        n = self.grid.dimension
        self._total = np.zeros(self.grid.shape)
        self._total_grad = np.zeros((n,) + self.grid.shape)
        for y in cover.centers:
            slices, offsets = _block(self.grid, y, 2.0 * cover.delta)
            eta, grad = _radial(offsets, cover.delta, 2.0 * cover.delta)
            self._total[slices] += eta
            self._total_grad[(slice(None),) + slices] += grad
        self._floor, self._floor_slope = floor_function(self._total)

    def __len__(self) -> int:
        return self.cover.count

    def local(self, i: int, radius: Optional[float] = None) -> Tuple[Tuple[slice, ...], List[np.ndarray], np.ndarray, np.ndarray]:
        """
        (window, offsets, chi_i, grad chi_i) on the window of half-width
        ``radius`` (2 delta by default) around y_i.
        """
        delta = self.cover.delta
        slices, offsets = _block(self.grid, self.cover.centers[i], radius or 2.0 * delta)
        eta, grad_eta = _radial(offsets, delta, 2.0 * delta)
        floor = self._floor[slices]
        slope = self._floor_slope[slices]
        total_grad = self._total_grad[(slice(None),) + slices]
        chi = eta / floor
        grad_chi = grad_eta / floor - eta * slope * total_grad / floor ** 2
        return slices, offsets, chi, grad_chi

    def evaluate(self, i: int) -> ScalarField:
        slices, _, chi, grad_chi = self.local(i)
        values = np.zeros(self.grid.shape)
        partials = np.zeros((self.grid.dimension,) + self.grid.shape)
        values[slices] = chi
        partials[(slice(None),) + slices] = grad_chi
        return ScalarField(grid=self.grid, values=values, partials=partials, name=f"chi{i + 1}")

    def total(self) -> np.ndarray:
        """sum_i chi_i = s / h(s)"""
        return self._total / self._floor

    def max_gradient(self) -> float:
        best = 0.0
        for i in range(len(self)):
            _, _, _, grad = self.local(i)
            if grad.size:
                best = max(best, float(np.max(np.sqrt(np.sum(grad ** 2, axis=0)))))
        return best


@dataclass(frozen=True, eq=False)
class CompVApprox:
    """
    X~ = sum_p h_p grad f_p regrouped by lattice residue class. Pieces are
    rebuilt on demand by ``piece``; ``X_tilde`` is the assembled field.
    """

    X: VectorField
    X_tilde: VectorField
    epsilon: float
    delta: float
    partition: PartitionOfUnity
    averages: np.ndarray
    linearisations: np.ndarray
    buckets: Dict[Tuple[int, ...], List[int]]
    report: ApproxReport

    @property
    def labels(self) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
        """(bucket, piece) labels; piece () is the affine part, (l, k) the linear parts"""
        n = self.X.grid.dimension
        kinds = [()] + [(l, k) for l in range(n) for k in range(n)]
        return [(bucket, kind) for bucket in sorted(self.buckets) for kind in kinds]

    @property
    def q(self) -> int:
        return len(self.labels)

    def piece(self, label) -> Tuple[ScalarField, ScalarField]:
        """h_p and f_p of one label, with exact first partials"""
        bucket, kind = label
        grid = self.X.grid
        n = grid.dimension
        h = np.zeros(grid.shape)
        dh = np.zeros((n,) + grid.shape)
        f = np.zeros(grid.shape)
        df = np.zeros((n,) + grid.shape)
        for i in self.buckets[bucket]:
            slices, h_i, dh_i, f_i, df_i = _centre_piece(self, i, kind)
            h[slices] += h_i
            dh[(slice(None),) + slices] += dh_i
            f[slices] += f_i
            df[(slice(None),) + slices] += df_i
        name = f"{bucket}:{kind}"
        return (
            ScalarField(grid=grid, values=h, partials=dh, name=f"h[{name}]"),
            ScalarField(grid=grid, values=f, partials=df, name=f"f[{name}]"),
        )


def _centre_piece(approx: CompVApprox, i: int, kind: tuple):
    """Contribution of centre i to one piece on its 3 delta window"""
    delta = approx.delta
    slices, offsets, chi, grad_chi = approx.partition.local(i, 3.0 * delta)
    psi, grad_psi = _radial(offsets, 2.0 * delta, 3.0 * delta)
    shape = psi.shape
    u = [np.broadcast_to(o, shape) for o in offsets]
    n = len(offsets)
    if not kind:
        A = approx.averages[i]
        lin = sum(A[m] * u[m] for m in range(n))
        f = psi * lin
        df = grad_psi * lin + psi * A.reshape((n,) + (1,) * n)
        return slices, chi, grad_chi, f, df
    l, k = kind
    B = approx.linearisations[i, l, k]
    h = B * chi * psi * u[k]
    dh = B * (grad_chi * psi * u[k] + chi * grad_psi * u[k])
    dh[k] = dh[k] + B * chi * psi
    f = psi * u[l]
    df = grad_psi * u[l]
    df[l] = df[l] + psi
    return slices, h, dh, f, df


@dataclass(frozen=True)
class RadialBump:
    """a * eta(|x - c|) with eta = 1 on B_{radius/2}(c) and 0 off B_radius(c)"""

    center: Tuple[float, ...]
    radius: float
    amplitude: float

    def values(self, grid: ChartGrid) -> np.ndarray:
        offsets = [c - x for c, x in zip(grid.coordinates, self.center)]
        value, _ = _radial(offsets, 0.5 * self.radius, self.radius)
        return self.amplitude * value


@dataclass(frozen=True, eq=False)
class RotSymApprox:
    bumps: List[RadialBump]
    total: ScalarField
    report: RotSymReport


class GradApproxService:
    """Covers, partitions and the two approximation constructions"""

    def admissible_delta(self, region: Box, grid: ChartGrid) -> float:
        return grid.distance_to_boundary(region) / 12.0

    def controlled_cover(self, region: Box, delta: float, grid: ChartGrid) -> ControlledCover:
        """
        Lattice points of (delta / 2 sqrt n) Z^n within distance delta of the
        region.

        Raises:
            DeltaTooLargeError: delta >= dist(region, chart boundary) / 12
        """
        delta_max = self.admissible_delta(region, grid)
        if delta <= 0 or delta >= delta_max:
            raise DeltaTooLargeError(delta, delta_max)
        n = grid.dimension
        s = delta / (2.0 * math.sqrt(n))
        lo = np.array(region[0])
        hi = np.array(region[1])
        first = np.floor((lo - delta) / s).astype(int)
        last = np.ceil((hi + delta) / s).astype(int)
        axes = [np.arange(a, b + 1) for a, b in zip(first, last)]
        index = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        points = index * s
        # Euclidean distance to the box
        gap = np.maximum(np.maximum(lo - points, points - hi), 0.0)
        keep = np.sqrt(np.sum(gap ** 2, axis=1)) < delta
        cover = ControlledCover(
            grid=grid, region=region, delta=delta, centers=points[keep], lattice_index=index[keep]
        )
        logger.debug("Controlled cover built", delta=delta, centers=cover.count)
        return cover

    def partition_subordinate(self, phi: ScalarField, delta: float) -> PartitionOfUnity:
        """
        Partition of unity subordinate to the controlled cover of supp phi.

        Raises:
            DeltaTooLargeError: delta beyond the admissible bound
        """
        grid = phi.grid
        region = phi.support_box()
        if region is None:
            region = grid.interior_box()
        return PartitionOfUnity(self.controlled_cover(region, delta, grid))

    def derivative_bounds(self, X: VectorField) -> Tuple[float, float, float]:
        """sup |X|, sup |DX| and sup |D^2 X| over the grid, from the providers"""
        if X.providers is None:
            raise MissingProviderError(X.name)
        n = X.grid.dimension
        coords = X.grid.coordinates
        first = []
        second = []
        for i in range(n):
            for a in range(n):
                d = diff_expr(X.providers[i], a + 1)
                first.append(eval_expr(d, coords))
                for b in range(n):
                    second.append(eval_expr(diff_expr(d, b + 1), coords))
        c0 = X.sup_norm()
        c1 = float(np.max(np.sqrt(sum(v ** 2 for v in first))))
        c2 = float(np.max(np.sqrt(sum(v ** 2 for v in second))))
        return c0, c1, c2

    def sweep_constant(self, X: VectorField, epsilons: List[float], fill: float = 0.9) -> float:
        """
        C placing the delta of the largest epsilon at ``fill`` of the
        admissible bound for supp X, so the whole sweep fits the chart.
        Falls back to 8 n^2 for a vanishing field or a support touching the
        chart boundary.
        """
        n = X.grid.dimension
        region = X.support_box()
        if region is None:
            return 8.0 * n * n
        delta_max = fill * self.admissible_delta(region, X.grid)
        if delta_max <= 0:
            return 8.0 * n * n
        _, c1, c2 = self.derivative_bounds(X)
        constant = max(epsilons) / (delta_max * (1.0 + c1 + c2))
        logger.debug("Sweep constant chosen", constant=constant, delta_max=delta_max)
        return constant

    def _local_data(self, X: VectorField, centers: np.ndarray, delta: float) -> Tuple[np.ndarray, np.ndarray]:
        """A_i = average of X over B_2delta(y_i) by symmetric Gauss quadrature, B_i = DX(y_i)"""
        n = X.grid.dimension
        nodes, weights = np.polynomial.legendre.leggauss(6)
        grid_pts = np.stack(np.meshgrid(*([nodes] * n), indexing="ij"), axis=-1).reshape(-1, n)
        grid_w = np.prod(np.stack(np.meshgrid(*([weights] * n), indexing="ij"), axis=-1).reshape(-1, n), axis=1)
        inside = np.sum(grid_pts ** 2, axis=1) <= 1.0
        pts, wts = grid_pts[inside], grid_w[inside]
        wts = wts / np.sum(wts)

        sample = centers[:, None, :] + 2.0 * delta * pts[None, :, :]
        coords = tuple(sample[..., a] for a in range(n))
        values = evaluate_nested(X.providers, coords)
        averages = np.einsum("imq,q->mi", values, wts)

        jac = tuple(tuple(diff_expr(X.providers[l], k + 1) for k in range(n)) for l in range(n))
        centre_coords = tuple(centers[:, a] for a in range(n))
        linear = np.moveaxis(evaluate_nested(jac, centre_coords), -1, 0)
        return averages, linear

    def compv_approximate(
        self,
        X: VectorField,
        epsilon: float,
        delta_constant: Optional[float] = None,
    ) -> CompVApprox:
        """
        Approximate X by sum_p h_p grad f_p with at most 2 (12n)^n (n^2 + 1)
        pieces.

        delta = epsilon / (C (1 + sup|DX| + sup|D^2X|)) with C = 8 n^2 unless
        ``delta_constant`` is given. Around each centre y_i the field is
        replaced by A_i + B_i (x - y_i); pieces of centres in the same
        lattice residue class mod 12n have disjoint supports and are summed.

        Raises:
            MissingProviderError: X has no analytic providers
            ResolutionError: delta below two grid cells
            DeltaTooLargeError: delta beyond the admissible bound for supp X
        """
        grid = X.grid
        n = grid.dimension
        if epsilon <= 0:
            raise InadmissibleEpsilonError(epsilon, "epsilon must be positive")
        c0, c1, c2 = self.derivative_bounds(X)
        constant = delta_constant if delta_constant is not None else 8.0 * n * n
        delta = epsilon / (constant * (1.0 + c1 + c2))
        h_max = max(grid.spacing)
        if delta < 2.0 * h_max:
            raise ResolutionError(delta, h_max, "the gradient-field construction")

        region = X.support_box()
        if region is None:
            zero = VectorField(grid=grid, values=np.zeros_like(X.values), name="X~")
            report = ApproxReport(
                epsilon=epsilon, delta=delta, q=0, q_bound=piece_bound(n), centers=0,
                err_w11=0.0, err_linf=0.0, max_grad_h=0.0, max_sup_h=0.0, max_sup_f=0.0,
                max_grad_f=0.0, assembly_gap=0.0, buckets_disjoint=True,
            )
            empty = ControlledCover(grid, grid.interior_box(), delta, np.zeros((0, n)), np.zeros((0, n), dtype=int))
            return CompVApprox(
                X=X, X_tilde=zero, epsilon=epsilon, delta=delta, partition=PartitionOfUnity(empty),
                averages=np.zeros((0, n)), linearisations=np.zeros((0, n, n)), buckets={}, report=report,
            )

        cover = self.controlled_cover(region, delta, grid)
        partition = PartitionOfUnity(cover)
        averages, linear = self._local_data(X, cover.centers, delta)
        buckets: Dict[Tuple[int, ...], List[int]] = {}
        for i, index in enumerate(cover.lattice_index):
            buckets.setdefault(tuple(int(v) for v in np.mod(index, 12 * n)), []).append(i)

        # piece supports lie in the open balls B_3delta(y_i)
        disjoint = all(
            not cKDTree(cover.centers[members]).query_pairs(6.0 * delta * (1.0 - 1e-9))
            for members in buckets.values()
        )

        # direct assembly sum_i chi_i (A_i + B_i (x - y_i))
        direct = np.zeros((n,) + grid.shape)
        for i in range(cover.count):
            slices, offsets, chi, _ = partition.local(i)
            shape = chi.shape
            u = [np.broadcast_to(o, shape) for o in offsets]
            for l in range(n):
                local = averages[i, l] + sum(linear[i, l, k] * u[k] for k in range(n))
                direct[(l,) + slices] += chi * local

        draft = CompVApprox(
            X=X, X_tilde=X, epsilon=epsilon, delta=delta, partition=partition,
            averages=averages, linearisations=linear, buckets=buckets, report=None,
        )
        assembled = np.zeros((n,) + grid.shape)
        sup_h = grad_h = sup_f = grad_f = 0.0
        for label in draft.labels:
            h_p, f_p = draft.piece(label)
            assembled += h_p.values * f_p.partials
            sup_h = max(sup_h, h_p.sup_norm())
            sup_f = max(sup_f, f_p.sup_norm())
            grad_h = max(grad_h, float(np.max(np.sqrt(np.sum(h_p.partials ** 2, axis=0)))))
            grad_f = max(grad_f, float(np.max(np.sqrt(np.sum(f_p.partials ** 2, axis=0)))))

        X_tilde = VectorField(grid=grid, values=assembled, name="X~")
        error = X.values - assembled
        derror = fd_array(error, grid, 1)
        err_w11 = field_service.lp_norm(np.sqrt(np.sum(error ** 2, axis=0)), 1, grid=grid) + sum(
            field_service.lp_norm(np.sqrt(np.sum(d ** 2, axis=0)), 1, grid=grid) for d in derror
        )
        report = ApproxReport(
            epsilon=epsilon,
            delta=delta,
            q=draft.q,
            q_bound=piece_bound(n),
            centers=cover.count,
            err_w11=err_w11,
            err_linf=float(np.max(np.abs(error))),
            max_grad_h=grad_h,
            max_sup_h=sup_h,
            max_sup_f=sup_f,
            max_grad_f=grad_f,
            assembly_gap=float(np.max(np.abs(assembled - direct))),
            buckets_disjoint=disjoint,
        )
        logger.info(
            "Gradient-field approximation built",
            epsilon=epsilon,
            delta=delta,
            q=report.q,
            err_w11=report.err_w11,
            grad_h_times_eps=grad_h * epsilon,
            sup_f_over_eps=sup_f / epsilon,
        )
        return CompVApprox(
            X=X, X_tilde=X_tilde, epsilon=epsilon, delta=delta, partition=partition,
            averages=averages, linearisations=linear, buckets=buckets, report=report,
        )

    # ------------------------------------------------------------------
    # Radial bump approximation
    # ------------------------------------------------------------------

    def _footprint(self, grid: ChartGrid, radius: float) -> Tuple[np.ndarray, np.ndarray]:
        """Closed-ball footprint and eta kernel in node offsets"""
        widths = [int(math.floor(radius / h + 1e-9)) for h in grid.spacing]
        axes = [np.arange(-w, w + 1) * h for w, h in zip(widths, grid.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        r = np.sqrt(sum(m ** 2 for m in mesh))
        kernel, _, _ = radial_ramp(r, 0.5 * radius, radius)
        return r <= radius, kernel

    def _round(
        self,
        residual: np.ndarray,
        grid: ChartGrid,
        rho: float,
        admissible: np.ndarray,
    ) -> Tuple[np.ndarray, np.ndarray, int]:
        """
        One greedy round at scale rho: centres on a node lattice of spacing
        at most rho / sqrt n, amplitudes theta_x / c with theta_x the minimum
        of the residual on the closed ball and c the node overlap count.
        Returns (amplitude per node, removed mass per node, c).
        """
        n = grid.dimension
        strides = [max(1, int(math.floor(rho / (math.sqrt(n) * h) + 1e-9))) for h in grid.spacing]
        centres = np.zeros(grid.shape, dtype=bool)
        centres[tuple(slice(None, None, s) for s in strides)] = True
        centres &= admissible
        footprint, kernel = self._footprint(grid, rho)
        theta = ndimage.minimum_filter(residual, footprint=footprint, mode="constant", cval=0.0)
        theta = np.where(centres, np.maximum(theta, 0.0), 0.0)
        coverage = ndimage.convolve(centres.astype(float), footprint.astype(float), mode="constant", cval=0.0)
        overlap = max(1, int(round(float(np.max(coverage)))))
        amplitude = theta / overlap
        removed = ndimage.convolve(amplitude, kernel, mode="constant", cval=0.0)
        return amplitude, removed, overlap

    def rotsym_approximate(
        self,
        phi: ScalarField,
        epsilon: float,
        radius: RadiusMap,
        max_rounds: int = 1000,
    ) -> RotSymApprox:
        """
        Approximate phi >= 0 from below by radially symmetric bumps in
        admissible balls until max(phi - sum chi) <= epsilon.

        Each round picks the largest dyadic fraction of the admissible radius
        whose round shrinks the residual by the factor 1 - 1/(2c); below two
        cells the residual is removed by node-centred bumps of sub-cell radius
        and the report flags the fallback.

        Args:
            phi: Nonnegative compactly supported function
            epsilon: Target sup distance
            radius: Admissible radius, a constant or a callable of the
                coordinate arrays

        Raises:
            InadmissibleEpsilonError: epsilon <= 0
            NegativeFieldError: phi takes negative values
            SupportViolationError: admissible radius vanishes on supp phi
        """
        grid = phi.grid
        if epsilon <= 0:
            raise InadmissibleEpsilonError(epsilon, "approximation tolerance must be positive")
        if np.min(phi.values) < 0:
            raise NegativeFieldError(phi.name, float(np.min(phi.values)))
        R = radius(*grid.coordinates) if callable(radius) else np.full(grid.shape, float(radius))
        R = np.broadcast_to(np.asarray(R, dtype=float), grid.shape)
        support = phi.values > 0
        if np.any(R[support] <= 0):
            raise SupportViolationError(phi.name, "admissible radius vanishes on the support")

        residual = phi.values.copy()
        bumps: List[RadialBump] = []
        rounds = 0
        overlap_max = 1
        predicted = None
        fine = 0
        fallback_residual: Optional[float] = None
        h_max = max(grid.spacing)
        R0 = float(np.max(R[support])) if np.any(support) else 0.0

        while float(np.max(residual)) > epsilon and rounds < max_rounds:
            top = float(np.max(residual))
            accepted = None
            rho = R0
            while rho >= 2.0 * h_max:
                amplitude, removed, overlap = self._round(residual, grid, rho, R >= rho)
                if np.max(residual - removed) <= (1.0 - 0.5 / overlap) * top:
                    accepted = (rho, amplitude, removed, overlap)
                    break
                rho *= 0.5
            rounds += 1
            if accepted is None:
                # sub-cell bumps reach only their own node
                logger.warning(
                    "Radial bump rounds stalled above grid resolution",
                    round=rounds,
                    residual=top,
                    epsilon=epsilon,
                    nodes=int(np.count_nonzero(residual > 0)),
                )
                fallback_residual = top
                rho = 0.5 * min(grid.spacing)
                for index in zip(*np.nonzero(residual > 0)):
                    center = tuple(float(ax[i]) for ax, i in zip(grid.axes, index))
                    bumps.append(RadialBump(center=center, radius=rho, amplitude=float(residual[index])))
                    fine += 1
                residual = np.where(residual > 0, 0.0, residual)
                break
            rho, amplitude, removed, overlap = accepted
            if predicted is None and top > epsilon:
                predicted = int(math.ceil(math.log(epsilon / top) / math.log(1.0 - 0.5 / overlap)))
            overlap_max = max(overlap_max, overlap)
            for index in zip(*np.nonzero(amplitude > 0)):
                center = tuple(float(ax[i]) for ax, i in zip(grid.axes, index))
                bumps.append(RadialBump(center=center, radius=rho, amplitude=float(amplitude[index])))
            residual = residual - removed
            logger.debug("Radial bump round", round=rounds, rho=rho, overlap=overlap, residual=float(np.max(residual)))

        total = phi.values - residual
        report = RotSymReport(
            epsilon=epsilon,
            bumps=len(bumps),
            rounds=rounds,
            predicted_rounds=predicted,
            overlap_constant=overlap_max,
            residual_max=float(np.max(residual)),
            residual_min=float(np.min(residual)),
            fine_bumps=fine,
            fallback_used=fallback_residual is not None,
            fallback_residual=fallback_residual,
        )
        logger.info("Radial bump approximation built", **report.model_dump())
        return RotSymApprox(
            bumps=bumps,
            total=ScalarField(grid=grid, values=total, name="sum_chi"),
            report=report,
        )


gradapprox_service = GradApproxService()
