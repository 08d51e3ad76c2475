"""Effective-receptive-field analysis.

Exact binomial contributions on a line, Hoeffding tail bounds, explicit-Euler
heat diffusion on graphs against the closed-form Gaussian kernel, the
coarse-grid diffusivity check, and gradient-based contribution maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from . import autodiff as ad
from .autodiff import Tensor
from .coarsening import ScaleHierarchy
from .graph import Graph, grid_graph, laplacian_apply


class UnstableStepError(ValueError):
    """Explicit Euler step violates the stability bound."""


class BoundaryContaminationError(ValueError):
    """Too much mass reached the lattice boundary for an infinite-domain comparison."""


# --- line-graph analysis -----------------------------------------------------


def pascal_contributions(steps: int) -> list[int]:
    """Row ``steps`` of Pascal's triangle via the additive recurrence."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    row = [1]
    for _ in range(steps):
        row = [a + b for a, b in zip([0] + row, row + [0])]
    return row


def binomial_tail(ell: int, k: int) -> Fraction:
    """Exact ``P(X <= k)`` for ``X ~ Binomial(ell, 1/2)``."""
    if not 0 <= k <= ell:
        raise ValueError(f"need 0 <= k <= ell, got k={k}, ell={ell}")
    return Fraction(sum(pascal_contributions(ell)[: k + 1]), 2**ell)


def hoeffding_bound(ell: int, k: int) -> float:
    """``exp(-2 (1/2 - k/ell)^2 ell)`` for ``k <= ell/2``; the trivial bound 1 otherwise."""
    if not 0 <= k <= ell:
        raise ValueError(f"need 0 <= k <= ell, got k={k}, ell={ell}")
    if ell == 0 or 2 * k >= ell:
        return 1.0
    return math.exp(-2.0 * (0.5 - k / ell) ** 2 * ell)


# --- diffusion -------------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionConfig:
    kappa: float
    T: float
    source: int = 0
    dt: float | None = None

    def step_for(self, g: Graph) -> float:
        """Chosen ``dt`` or the default ``0.9 * 2 / (kappa * 2 * max_degree)``."""
        if self.dt is not None:
            return self.dt
        return 0.9 * 2.0 / (self.kappa * 2.0 * max(g.max_degree, 1))

    def check(self, g: Graph) -> float:
        dt = self.step_for(g)
        if self.T < 0 or dt <= 0 or self.kappa <= 0:
            raise ValueError(f"invalid diffusion config {self}")
        if dt * self.kappa * 2 * g.max_degree >= 2:
            raise UnstableStepError(
                f"dt*kappa*2*max_degree = {dt * self.kappa * 2 * g.max_degree:.3f} >= 2"
            )
        return dt


@dataclass
class DiffusionResult:
    times: list[float]
    snapshots: list[np.ndarray]
    max_mass_drift: float = 0.0
    steps: int = 0


def diffuse(
    g: Graph,
    cfg: DiffusionConfig,
    times: Sequence[float] | None = None,
    x0: np.ndarray | None = None,
) -> DiffusionResult:
    """Integrate ``dx/dt = -kappa L x`` with explicit Euler.

    Starts from a unit point source at ``cfg.source`` unless ``x0`` is given.
    Snapshots are taken at each of ``times`` (default: ``[T]``); the last step
    before a snapshot is shortened so snapshot times are hit exactly.
    """
    dt = cfg.check(g)
    times = sorted([cfg.T] if times is None else list(times))
    if times and times[-1] > cfg.T + 1e-12:
        raise ValueError("snapshot times must not exceed T")
    if x0 is None:
        x = np.zeros(g.n)
        x[cfg.source] = 1.0
    else:
        x = np.array(x0, dtype=float)
    mass0 = x.sum(axis=0)
    drift = 0.0
    t = 0.0
    steps = 0
    snaps = []
    for target in times:
        n_full = int(math.floor((target - t) / dt + 1e-9))
        for _ in range(n_full):
            x = x - dt * cfg.kappa * laplacian_apply(g, x)
            steps += 1
            drift = max(drift, float(np.max(np.abs(x.sum(axis=0) - mass0))))
        rest = target - (t + n_full * dt)
        if rest > 1e-12:
            x = x - rest * cfg.kappa * laplacian_apply(g, x)
            steps += 1
            drift = max(drift, float(np.max(np.abs(x.sum(axis=0) - mass0))))
        t = target
        snaps.append(x.copy())
    return DiffusionResult(times, snaps, drift, steps)


def heat_kernel(p, p0, kappa: float, t: float, d: int) -> np.ndarray | float:
    """Infinite-domain solution for a unit point source: Gaussian with variance ``2 kappa t``."""
    if t <= 0:
        raise ValueError("t must be > 0")
    p = np.asarray(p, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    # d == 1: scalar positions; d > 1: coordinates along the last axis
    r2 = (p - p0) ** 2 if d == 1 else np.sum((p - p0) ** 2, axis=-1)
    val = (4.0 * kappa * math.pi * t) ** (-d / 2.0) * np.exp(-r2 / (4.0 * kappa * t))
    return float(val) if np.ndim(val) == 0 else val


def heat_kernel_error(n: int = 201, kappa_t: float = 1.0, kappa: float = 1.0, dt_kappa: float = 1.0 / 6.0):
    """Peak-normalized L-infinity gap between path diffusion and the 1-D kernel.

    Returns ``(error, mass_drift)``. ``dt_kappa = 1/6`` is the explicit-Euler
    step for which the three-point scheme matches the Gaussian through fourth
    order in space.
    """
    from .graph import path_graph

    g = path_graph(n)
    c = n // 2
    t = kappa_t / kappa
    res = diffuse(g, DiffusionConfig(kappa=kappa, T=t, source=c, dt=dt_kappa / kappa))
    x = res.snapshots[-1]
    pos = np.arange(n, dtype=float)
    ref = heat_kernel(pos, float(c), kappa, t, 1)
    err = float(np.max(np.abs(x / x.max() - ref / ref.max())))
    return err, res.max_mass_drift


# --- coarse-grid diffusivity -------------------------------------------------------


@dataclass
class KappaReport:
    fine_n: int
    coarse_n: int
    kappa: float
    t: float
    fine_moment: float
    coarse_moment: float
    ratio: float
    fine_boundary_mass: float
    coarse_boundary_mass: float
    expected_fine: float = field(init=False)

    def __post_init__(self):
        self.expected_fine = 2.0 * self.kappa * self.t

    @property
    def ok(self) -> bool:
        return abs(self.ratio - 4.0) <= 0.15 * 4.0


def _grid_moment(x: np.ndarray, n: int, center: tuple[int, int], spacing: float) -> float:
    rr, cc = np.divmod(np.arange(n * n), n)
    mass = x.sum()
    dr = (rr - center[0]) * spacing
    dc = (cc - center[1]) * spacing
    return float(0.5 * np.sum(x * (dr**2 + dc**2)) / mass)


def _boundary_mass(x: np.ndarray, n: int, hops: int = 2) -> float:
    rr, cc = np.divmod(np.arange(n * n), n)
    edge = np.minimum.reduce([rr, cc, n - 1 - rr, n - 1 - cc]) < hops
    return float(x[edge].sum() / x.sum())


def kappa_rescaling_check(grid_n: int = 64, kappa: float = 1.0, t: float = 4.0, dt: float | None = None) -> KappaReport:
    """Diffuse a point source on an n x n and an (n/2) x (n/2) lattice with the same kappa.

    Per-dimension second moments are reported in fine-grid length units (the
    coarse spacing is two fine steps); the coarse/fine ratio should be ~4.
    """
    if grid_n % 2:
        raise ValueError("grid_n must be even")
    out = {}
    for label, n, spacing in (("fine", grid_n, 1.0), ("coarse", grid_n // 2, 2.0)):
        g = grid_graph(n)
        c = (n // 2, n // 2)
        if t == 0:
            out[label] = (0.0, 0.0)
            continue
        res = diffuse(g, DiffusionConfig(kappa=kappa, T=t, source=c[0] * n + c[1], dt=dt))
        x = res.snapshots[-1]
        out[label] = (_grid_moment(x, n, c, spacing), _boundary_mass(x, n))
    for label, (_, bm) in out.items():
        if bm > 0.01:
            raise BoundaryContaminationError(f"{label} grid: {bm:.2%} of mass within 2 hops of the boundary")
    fm, cm = out["fine"][0], out["coarse"][0]
    ratio = cm / fm if fm > 0 else float("nan")
    return KappaReport(grid_n, grid_n // 2, kappa, t, fm, cm, ratio, out["fine"][1], out["coarse"][1])


# --- contribution maps -----------------------------------------------------------


@dataclass
class ErfMap:
    center: int
    contribution: np.ndarray
    normalized: bool = False

    def max_normalized(self) -> "ErfMap":
        peak = self.contribution.max()
        return ErfMap(self.center, self.contribution / peak if peak > 0 else self.contribution.copy(), True)


def contribution_map(model, hier: ScaleHierarchy, center: int, x0=None, normalize: bool = False, seed: int = 0) -> ErfMap:
    """L1 norm of d(sum of output channels at ``center``)/d(input row v), for every v.

    ``x0`` defaults to standard-normal inputs drawn from ``seed``.
    """
    from .model import forward

    n = hier.graphs[0].n
    if x0 is None:
        x0 = np.random.default_rng(seed).standard_normal((n, model.config.in_dim))
    x = Tensor(x0, requires_grad=True)
    out = forward(model, hier, x)
    picked = ad.gather_rows(out, [center])
    total = ad.matmul(picked, Tensor(np.ones((out.shape[1], 1))))
    ad.backward(total)
    contrib = np.abs(x.grad).sum(axis=1)
    m = ErfMap(center, contrib)
    return m.max_normalized() if normalize else m


def erf_radius(erf: ErfMap, g: Graph, threshold: float) -> int:
    """Largest hop distance whose median contribution reaches ``threshold * contribution[center]``.

    A ring counts when its median is at least the reference value; a zero
    reference (dead center) only counts strictly positive rings.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    dist = g.bfs_distances(erf.center)
    ref = threshold * erf.contribution[erf.center]
    radius = 0
    for r in range(1, int(dist.max()) + 1):
        ring = erf.contribution[dist == r]
        if len(ring) and (np.median(ring) > ref or (ref > 0 and np.median(ring) == ref)):
            radius = r
    return radius


def distance_decay_correlation(erf: ErfMap, g: Graph) -> float:
    """Spearman correlation between hop distance and log-contribution over nodes with nonzero contribution."""
    dist = g.bfs_distances(erf.center)
    mask = (erf.contribution > 0) & (dist >= 0)
    rho = spearmanr(dist[mask], np.log(erf.contribution[mask])).statistic
    return float(rho)
