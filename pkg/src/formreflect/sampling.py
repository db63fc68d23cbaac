"""Sample sets: grids, boundary grids, quasi-random points and mirrored pairs."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import DomainError
from .expr import ChartDomain


def _bounding_box(domain: ChartDomain):
    n = domain.n
    if domain.shape in ("torus", "box", "box-face"):
        return np.array(domain.lower), np.array(domain.upper)
    r = domain.radius
    lo = np.full(n, -r)
    hi = np.full(n, r)
    if domain.shape == "half-ball":
        lo[-1] = 0.0
    return lo, hi


def grid(domain: ChartDomain, per_axis: int = 21) -> np.ndarray:
    """Tensor grid over the bounding box, restricted to the domain."""
    lo, hi = _bounding_box(domain)
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.n)
    return pts[domain.contains(pts)]


def boundary_grid(domain: ChartDomain, per_axis: int = 21) -> np.ndarray:
    """Grid on the boundary portion ``{x_n = 0}`` of a half-ball or box-face domain."""
    if not domain.has_interface:
        raise DomainError("domain has no boundary portion {x_n = 0}")
    lo, hi = _bounding_box(domain)
    n = domain.n
    if n == 1:
        return np.zeros((1, 1))
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo[:-1], hi[:-1])]
    tang = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n - 1)
    pts = np.hstack([tang, np.zeros((len(tang), 1))])
    return pts[domain.contains(pts)]


def sobol(dim: int, count: int, seed: int) -> np.ndarray:
    """``count`` (rounded up to a power of two) scrambled Sobol points in [0,1)^dim."""
    m = max(1, math.ceil(math.log2(max(count, 2))))
    return qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(seed)).random_base2(m)


def random_points(domain: ChartDomain, count: int, seed: int = 0) -> np.ndarray:
    """Quasi-random points inside the domain (rejection from the bounding box)."""
    lo, hi = _bounding_box(domain)
    out = []
    have = 0
    attempt = 0
    while have < count:
        u = sobol(domain.n, 4 * count, seed + 7919 * attempt)
        pts = lo + u * (hi - lo)
        pts = pts[domain.contains(pts)]
        out.append(pts)
        have += len(pts)
        attempt += 1
    return np.vstack(out)[:count]


def mirrored_pairs(domain: ChartDomain, count: int, seed: int = 0, band: float | None = None):
    """Upper points with ``x_n >= band`` and their mirror images ``(x', -x_n)``.

    ``band`` defaults to ``1e-3 * radius``.
    """
    if not domain.has_interface:
        raise DomainError("mirrored pairs need a half-ball or box-face domain")
    if band is None:
        band = 1e-3 * domain.radius
    lo, hi = _bounding_box(domain)
    out = []
    have = 0
    attempt = 0
    while have < count:
        u = sobol(domain.n, 4 * count, seed + 104729 * attempt)
        pts = lo + u * (hi - lo)
        pts = pts[domain.contains(pts) & (pts[:, -1] >= band)]
        out.append(pts)
        have += len(pts)
        attempt += 1
    upper = np.vstack(out)[:count]
    lower = upper.copy()
    lower[:, -1] *= -1.0
    return upper, lower


def unit_ball_nodes(n: int, count: int, seed: int, half: bool = False) -> np.ndarray:
    """Uniform nodes in the unit ball (or its upper half) from ``n+1``-dim scrambled Sobol points.

    The direction is a normalized inverse-normal image of the first ``n``
    coordinates and the radius is ``u**(1/n)`` of the last one; this smooth
    map avoids the indicator discontinuity of rejection sampling.
    """
    u = sobol(n + 1, count, seed)
    z = ndtri(np.clip(u[:, :n], 1e-15, 1 - 1e-15))
    direction = z / np.linalg.norm(z, axis=1, keepdims=True)
    pts = direction * u[:, n:] ** (1.0 / n)
    if half:
        pts[:, -1] = np.abs(pts[:, -1])
    return pts


def ball_volume(n: int, r: float = 1.0, half: bool = False) -> float:
    vol = math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r**n
    return vol / 2 if half else vol
