"""DIRECT (DIviding RECTangles) global minimization over a box.

The box is mapped onto the unit hypercube. Each hyperrectangle keeps an
integer level per dimension, so its side along dimension ``i`` is
``3**-levels[i]`` and diameters of equal-shape rectangles compare exactly.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidBounds

MAX_LEVEL = 40


@dataclass
class HyperRect:
    center: np.ndarray
    levels: tuple[int, ...]
    value: float

    @property
    def sides(self) -> np.ndarray:
        return 3.0 ** -np.asarray(self.levels, dtype=float)

    @property
    def diameter(self) -> float:
        return _half_diagonal(self.levels)

    @property
    def volume(self) -> float:
        return 3.0 ** -sum(self.levels)

    @property
    def at_floor(self) -> bool:
        return min(self.levels) >= MAX_LEVEL


def _half_diagonal(levels: Sequence[int]) -> float:
    # sorted so equal level multisets give bit-identical diameters
    return 0.5 * math.sqrt(math.fsum(9.0 ** -k for k in sorted(levels)))


@dataclass
class OptProblem:
    objective: Callable[[np.ndarray], float]
    lower: Sequence[float]
    upper: Sequence[float]
    budget: int = 100
    ftol_rel: float = 1e-4
    eps: float = 1e-4

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if self.lower.shape != self.upper.shape or self.lower.size == 0:
            raise InvalidBounds("lower and upper bounds must be non-empty and of equal length")
        if not np.all(np.isfinite(self.lower)) or not np.all(np.isfinite(self.upper)):
            raise InvalidBounds("bounds must be finite")
        if np.any(self.lower >= self.upper):
            raise InvalidBounds("every lower bound must be strictly below its upper bound")
        if self.budget < 1:
            raise InvalidBounds("evaluation budget must be at least 1")

    @property
    def dim(self) -> int:
        return self.lower.size


@dataclass
class DirectResult:
    x: np.ndarray
    fun: float
    nfev: int
    nit: int
    stop_reason: str
    history: list[float] = field(default_factory=list)
    points: list[np.ndarray] = field(default_factory=list)
    rects: list[HyperRect] = field(default_factory=list)


def potentially_optimal(
    diameters: Sequence[float], values: Sequence[float], f_min: float, eps: float = 1e-4
) -> list[int]:
    """Indices of potentially optimal rectangles.

    Rectangle ``j`` qualifies when some ``K > 0`` makes ``v_j - K d_j`` minimal
    over all rectangles and at most ``f_min - eps |f_min|``. Among rectangles
    with identical ``(d, v)`` only the lowest index is kept.
    """
    d_all = np.asarray(diameters, dtype=float)
    v_all = np.asarray(values, dtype=float)
    target = f_min - eps * abs(f_min)
    # only the lowest value per diameter can qualify (lowest index on ties)
    order = np.lexsort((np.arange(d_all.size), v_all, d_all))
    first = np.ones(order.size, dtype=bool)
    first[1:] = d_all[order[1:]] != d_all[order[:-1]]
    cand = order[first]
    d, v = d_all[cand], v_all[cand]
    chosen: list[int] = []
    for j in range(d.size):
        smaller = d < d[j]
        larger = d > d[j]
        k_low = np.max((v[j] - v[smaller]) / (d[j] - d[smaller])) if smaller.any() else 0.0
        k_high = np.min((v[larger] - v[j]) / (d[larger] - d[j])) if larger.any() else math.inf
        if k_high <= 0 or k_low > k_high:
            continue
        # the eps test is easiest to satisfy at the largest admissible K
        if math.isfinite(k_high) and v[j] - k_high * d[j] > target:
            continue
        chosen.append(int(cand[j]))
    return sorted(chosen)


def trisect(
    rect: HyperRect,
    dims: Sequence[int],
    f: Callable[[np.ndarray], float],
) -> list[HyperRect]:
    """Divide *rect* along *dims* (its longest sides).

    Samples ``c +- side/3`` along each dimension, then splits dimensions in
    order of their best sample, so the best samples land in the largest
    children. Returns the shrunken parent first, then the new rectangles.
    """
    delta = {i: 3.0 ** -(rect.levels[i] + 1) for i in dims}
    samples: dict[int, tuple[tuple[np.ndarray, float], tuple[np.ndarray, float]]] = {}
    for i in dims:
        pair = []
        for sign in (-1.0, 1.0):
            c = rect.center.copy()
            c[i] += sign * delta[i]
            pair.append((c, float(f(c))))
        samples[i] = (pair[0], pair[1])
    order = sorted(dims, key=lambda i: (min(samples[i][0][1], samples[i][1][1]), i))
    levels = list(rect.levels)
    children: list[HyperRect] = []
    for i in order:
        levels[i] += 1
        for c, val in samples[i]:
            children.append(HyperRect(c, tuple(levels), val))
    parent = HyperRect(rect.center, tuple(levels), rect.value)
    return [parent] + children


def minimize(problem: OptProblem, callback: Callable[[list[HyperRect], float], None] | None = None) -> DirectResult:
    """Run DIRECT until the budget is spent or a sweep improves by less than
    ``ftol_rel`` (relative). Sweeps that find no improvement do not stop the run."""
    lo, hi = problem.lower, problem.upper
    span = hi - lo
    points: list[np.ndarray] = []

    def f_unit(u: np.ndarray) -> float:
        x = lo + span * u
        points.append(x.copy())
        val = float(problem.objective(x))
        if math.isnan(val):
            val = math.inf
        return val

    center = np.full(problem.dim, 0.5)
    rects = [HyperRect(center, (0,) * problem.dim, f_unit(center))]
    best_rect_val = rects[0].value
    best_u = center.copy()
    history = [best_rect_val]
    nit = 0
    stop = "budget"

    while True:
        remaining = problem.budget - len(points)
        if remaining <= 0:
            stop = "budget"
            break
        diam = [r.diameter for r in rects]
        vals = [r.value for r in rects]
        selected = [j for j in potentially_optimal(diam, vals, best_rect_val, problem.eps) if not rects[j].at_floor]
        if not selected:
            stop = "resolution"
            break
        nit += 1
        before = best_rect_val
        exhausted = False
        new_rects: list[HyperRect] = []
        replaced: dict[int, HyperRect] = {}
        for j in selected:
            rect = rects[j]
            top = min(rect.levels)
            dims = [i for i, k in enumerate(rect.levels) if k == top]
            remaining = problem.budget - len(points)
            if remaining < 2 * len(dims):
                # budget cannot cover a full division: spend what is left on
                # samples along the split axes, leaving the rectangle intact
                for i in dims:
                    for sign in (-1.0, 1.0):
                        if problem.budget - len(points) <= 0:
                            break
                        c = rect.center.copy()
                        c[i] += sign * 3.0 ** -(rect.levels[i] + 1)
                        val = f_unit(c)
                        if val < best_rect_val:
                            best_rect_val, best_u = val, c
                exhausted = True
                break
            parts = trisect(rect, dims, f_unit)
            replaced[j] = parts[0]
            new_rects.extend(parts[1:])
            for child in parts[1:]:
                if child.value < best_rect_val:
                    best_rect_val, best_u = child.value, child.center.copy()
        for j, r in replaced.items():
            rects[j] = r
        rects.extend(new_rects)
        history.append(best_rect_val)
        if callback is not None:
            callback(rects, best_rect_val)
        if exhausted:
            stop = "budget"
            break
        if problem.ftol_rel > 0 and best_rect_val < before:
            if before - best_rect_val < problem.ftol_rel * abs(best_rect_val):
                stop = "ftol_rel"
                break

    return DirectResult(
        x=lo + span * best_u,
        fun=best_rect_val,
        nfev=len(points),
        nit=nit,
        stop_reason=stop,
        history=history,
        points=points,
        rects=rects,
    )
