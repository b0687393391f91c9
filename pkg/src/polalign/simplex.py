"""Derivative-free Nelder-Mead simplex minimization.

Small, allocation-light implementation used by the compensation optimizer.
Termination is on the spread of cost values across the simplex (not on
vertex positions), with a hard cap on function evaluations; both the cap
and the evaluation count are exposed so callers can budget restarts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

_REFLECT = 1.0
_EXPAND = 2.0
_CONTRACT = 0.5
_SHRINK = 0.5


@dataclass
class SimplexResult:
    x: list[float]
    fun: float
    evaluations: int
    converged: bool


def nelder_mead(
    fn: Callable[[Sequence[float]], float],
    x0: Sequence[float],
    *,
    initial_step: float = 0.2,
    cost_tolerance: float = 1e-9,
    max_evaluations: int = 5000,
) -> SimplexResult:
    """Minimize ``fn`` starting from ``x0``.

    The initial simplex is ``x0`` plus one vertex offset by ``initial_step``
    along each coordinate.  Iteration stops when the cost spread
    ``max(f) - min(f)`` over the simplex falls below ``cost_tolerance``
    (converged) or when ``max_evaluations`` calls have been spent.
    """
    n = len(x0)
    evals = 0

    def call(x):
        nonlocal evals
        evals += 1
        return fn(x)

    verts = [list(map(float, x0))]
    for i in range(n):
        v = list(verts[0])
        v[i] += initial_step
        verts.append(v)
    costs = [call(v) for v in verts]

    converged = False
    while evals < max_evaluations:
        order = sorted(range(n + 1), key=costs.__getitem__)
        verts = [verts[i] for i in order]
        costs = [costs[i] for i in order]
        if costs[-1] - costs[0] < cost_tolerance:
            converged = True
            break

        centroid = [sum(v[i] for v in verts[:-1]) / n for i in range(n)]
        worst = verts[-1]

        reflected = [c + _REFLECT * (c - w) for c, w in zip(centroid, worst)]
        f_r = call(reflected)
        if costs[0] <= f_r < costs[-2]:
            verts[-1], costs[-1] = reflected, f_r
            continue

        if f_r < costs[0]:
            expanded = [c + _EXPAND * (c - w) for c, w in zip(centroid, worst)]
            f_e = call(expanded)
            if f_e < f_r:
                verts[-1], costs[-1] = expanded, f_e
            else:
                verts[-1], costs[-1] = reflected, f_r
            continue

        # contraction: outside if the reflection helped at all, else inside
        if f_r < costs[-1]:
            contracted = [c + _CONTRACT * (r - c) for c, r in zip(centroid, reflected)]
            f_c = call(contracted)
            if f_c <= f_r:
                verts[-1], costs[-1] = contracted, f_c
                continue
        else:
            contracted = [c + _CONTRACT * (w - c) for c, w in zip(centroid, worst)]
            f_c = call(contracted)
            if f_c < costs[-1]:
                verts[-1], costs[-1] = contracted, f_c
                continue

        # shrink toward the best vertex
        best = verts[0]
        for i in range(1, n + 1):
            verts[i] = [b + _SHRINK * (v - b) for b, v in zip(best, verts[i])]
            costs[i] = call(verts[i])

    i_best = min(range(n + 1), key=costs.__getitem__)
    return SimplexResult(x=verts[i_best], fun=costs[i_best], evaluations=evals, converged=converged)
