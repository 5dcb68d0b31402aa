"""Linear-region geometry of single-hidden-layer nets in the hard
(tropical) limit.

A trained layer's spike pattern is constant on the cells of the
hyperplane arrangement w_j . x = offset_j; this module counts those
cells exactly (n = 1, 2; rational predicates) or on a dense grid
(n <= 3), bounds the T-step spike-sequence count, and certifies weight
non-degeneracy through the zonotope volume of the weight rows.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ContractError, ParameterError
from .rng import philox

STREAM_ARRANGE = 700

_GRID_DEFAULT = {1: 100_000, 2: 500, 3: 80}


@dataclass(frozen=True)
class Arrangement:
    """Hyperplanes w_j . x = offset_j.

    The bare constructor keeps the convention that the offset is the
    leak term log(tau0) of a zero-state neuron; ``spike_arrangement``
    maps a trained layer's actual spike boundaries instead.
    """

    W: np.ndarray  # [h, n]
    offsets: np.ndarray  # [h]

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        offsets = np.asarray(self.offsets, dtype=np.float64).ravel()
        if W.shape[0] != offsets.shape[0]:
            raise ParameterError("one offset per hyperplane required")
        if W.shape[0] < 1 or W.shape[1] < 1:
            raise ParameterError("need h >= 1 hyperplanes in n >= 1 dims")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "offsets", offsets)

    @property
    def h(self):
        return self.W.shape[0]

    @property
    def n(self):
        return self.W.shape[1]


def random_arrangement(h: int, n: int, seed: int, tau0: float = 0.9) -> Arrangement:
    """Gaussian rows with the zero-state offset log(tau0); in general
    position with probability one."""
    rng = philox(seed, STREAM_ARRANGE)
    return Arrangement(rng.normal(size=(h, n)), np.full(h, math.log(tau0)))


def spike_arrangement(W, b, theta: float = 0.5, tau0: float = 0.9) -> Arrangement:
    """Spike boundaries of a first-layer neuron from zero state at T=1.

    The unit fires iff max(log(tau0), w.x + b) > theta; for
    theta > log(tau0) that is w.x = theta - b.  Requires theta above the
    leak floor, otherwise units spike unconditionally and have no
    boundary.
    """
    if theta <= math.log(tau0):
        raise ParameterError("theta <= log(tau0): spike pattern has no boundary")
    W = np.asarray(W, dtype=np.float64)
    return Arrangement(W, theta - np.asarray(b, dtype=np.float64))


def region_formula(h: int, n: int) -> int:
    """Maximal cell count of h hyperplanes in n dims (exact big int)."""
    if h < 0 or n < 0:
        raise ParameterError("h and n must be nonnegative")
    return sum(math.comb(h, k) for k in range(min(h, n) + 1))


@dataclass(frozen=True)
class RegionReport:
    formula: int
    empirical: int
    method: str

    def __post_init__(self):
        if self.empirical > self.formula:
            raise ContractError("empirical count exceeded the formula bound")


def _vertex_reach(W: np.ndarray, offsets: np.ndarray) -> float:
    """Largest coordinate magnitude over arrangement vertices (points
    where n hyperplanes meet); 0 when no n-subset is invertible."""
    h, n = W.shape
    reach = 0.0
    for rows in itertools.combinations(range(h), n):
        sub = W[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12 * max(1.0, np.abs(sub).max()) ** n:
            continue
        vertex = np.linalg.solve(sub, offsets[list(rows)])
        reach = max(reach, float(np.max(np.abs(vertex))))
    return reach


def _bounding_half_width(arr: Arrangement) -> float:
    """Grid box half-width: covers three times the farthest
    hyperplane-origin distance plus every arrangement vertex, plus a
    margin of three.  Any cell either owns a vertex or hugs one of the
    hyperplanes near the origin, so every cell meets this box."""
    norms = np.linalg.norm(arr.W, axis=1)
    live = norms > 0
    if not live.any():
        return 3.0
    plane_reach = 3.0 * float(np.max(np.abs(arr.offsets[live]) / norms[live]))
    vertex_reach = _vertex_reach(arr.W[live], arr.offsets[live])
    return max(plane_reach, vertex_reach) + 3.0


def _grid_points(n: int, resolution: int, half_width: float) -> np.ndarray:
    axes = [np.linspace(-half_width, half_width, resolution)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _count_grid(arr: Arrangement, resolution: int, half_width=None) -> int:
    if resolution < 2:
        raise ParameterError("grid resolution must be >= 2")
    hw = _bounding_half_width(arr) if half_width is None else float(half_width)
    pts = _grid_points(arr.n, resolution, hw)
    signs = pts @ arr.W.T > arr.offsets
    return len(np.unique(signs, axis=0))


def _canonical_lines(arr: Arrangement):
    """Distinct lines as exact rational triples (a, b, c): a*x+b*y=c,
    scaled so the leading coefficient is one.  Zero rows drop out."""
    lines = set()
    for (a, b), c in zip(arr.W, arr.offsets):
        fa, fb, fc = Fraction(float(a)), Fraction(float(b)), Fraction(float(c))
        if fa == 0 and fb == 0:
            continue
        lead = fa if fa != 0 else fb
        lines.add((fa / lead, fb / lead, fc / lead))
    return sorted(lines)


def _count_exact_2d(arr: Arrangement) -> int:
    """Exact planar cell count: 1 + L + sum_p (multiplicity(p) - 1) over
    distinct intersection points, all predicates in rational arithmetic."""
    lines = _canonical_lines(arr)
    points = {}
    for i, (a1, b1, c1) in enumerate(lines):
        for j in range(i + 1, len(lines)):
            a2, b2, c2 = lines[j]
            det = a1 * b2 - a2 * b1
            if det == 0:
                continue
            x = (c1 * b2 - c2 * b1) / det
            y = (a1 * c2 - a2 * c1) / det
            points.setdefault((x, y), set()).update((i, j))
    return 1 + len(lines) + sum(len(s) - 1 for s in points.values())


def _count_exact_1d(arr: Arrangement) -> int:
    cuts = {
        Fraction(float(c)) / Fraction(float(w[0]))
        for w, c in zip(arr.W, arr.offsets)
        if w[0] != 0
    }
    return 1 + len(cuts)


def count_regions_bruteforce(arr: Arrangement, method: str = "auto",
                             resolution: int = None, half_width=None) -> RegionReport:
    """Count realizable spike patterns sign(Wx - offsets).

    ``exact`` enumerates cells with rational predicates (n <= 2); ``grid``
    samples sign vectors on a dense grid over the documented box
    (n <= 3).  Equals region_formula(h, n) under general position.
    """
    if method == "auto":
        method = "exact" if arr.n <= 2 else "grid"
    if method == "exact":
        if arr.n == 1:
            empirical = _count_exact_1d(arr)
        elif arr.n == 2:
            empirical = _count_exact_2d(arr)
        else:
            raise ParameterError("exact enumeration supports n <= 2")
    elif method == "grid":
        if arr.n > 3:
            raise ParameterError("grid enumeration supports n <= 3")
        empirical = _count_grid(arr, resolution or _GRID_DEFAULT[arr.n], half_width)
    else:
        raise ParameterError(f"unknown method {method!r}")
    return RegionReport(formula=region_formula(arr.h, arr.n),
                        empirical=empirical, method=method)


def temporal_region_count(W, b, T: int, theta: float = 0.5, tau0: float = 0.9,
                          resolution: int = 300, half_width=None) -> dict:
    """Distinct T-step spike-pattern sequences of the hard temporal
    dynamics on a grid, with the R(h,n)^T bound.

    Per grid point x the drive Wx+b repeats every step; state follows
    pre = max(v + log(tau0), drive), spike = pre > theta, hard reset.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64).ravel()
    h, n = W.shape
    if n > 3:
        raise ParameterError("grid enumeration supports n <= 3")
    if T < 1:
        raise ParameterError("T must be >= 1")
    base = spike_arrangement(W, b, theta, tau0)
    hw = _bounding_half_width(base) if half_width is None else float(half_width)
    pts = _grid_points(n, resolution, hw)
    drive = pts @ W.T + b
    v = np.zeros_like(drive)
    patterns = np.zeros((len(pts), T * h), dtype=bool)
    for t in range(T):
        pre = np.maximum(v + math.log(tau0), drive)
        s = pre > theta
        patterns[:, t * h:(t + 1) * h] = s
        v = pre * (1.0 - s)
    count = len(np.unique(patterns, axis=0))
    bound = region_formula(h, n) ** T
    if count > bound:
        raise ContractError("sequence count exceeded the composition bound")
    return {"count": count, "bound": bound, "timesteps": T, "resolution": resolution}


def zonotope_volume(W) -> float:
    """Exact volume of the Minkowski sum of the weight-row segments:
    sum over n-row subsets of |det|; 0 iff the rows do not span."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    h, n = W.shape
    if h < n:
        return 0.0
    total = 0.0
    for rows in itertools.combinations(range(h), n):
        total += abs(np.linalg.det(W[list(rows)]))
    return total


def general_position_check(W, offsets=None) -> dict:
    """Degeneracy diagnostics for the weight rows.

    Reports rank, the smallest |det| over n-row subsets, near-parallel
    row pairs (|cosine| > 1 - 1e-6), the zonotope volume, and the 2^n
    capacity lower bound that positive volume certifies for h >= n.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    h, n = W.shape
    rank = int(np.linalg.matrix_rank(W))
    vol = zonotope_volume(W)
    min_det = None
    if h >= n:
        min_det = min(
            abs(np.linalg.det(W[list(rows)]))
            for rows in itertools.combinations(range(h), n)
        )
    norms = np.linalg.norm(W, axis=1)
    near_parallel = []
    for i in range(h):
        for j in range(i + 1, h):
            if norms[i] == 0 or norms[j] == 0:
                continue
            cosine = abs(float(W[i] @ W[j]) / (norms[i] * norms[j]))
            if cosine > 1.0 - 1e-6:
                near_parallel.append((i, j))
    report = {
        "h": h,
        "n": n,
        "rank": rank,
        "full_rank": rank == n,
        "min_abs_det": min_det,
        "near_parallel_pairs": near_parallel,
        "zonotope_volume": vol,
        "degenerate": rank < n or bool(near_parallel),
        "capacity_lower_bound": 2 ** n if (vol > 0 and h >= n) else None,
    }
    if offsets is not None:
        report["offsets"] = np.asarray(offsets, dtype=np.float64).tolist()
    return report
