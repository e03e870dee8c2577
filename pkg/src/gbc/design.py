"""Space-filling designs for simulation scenarios."""

from __future__ import annotations

import numpy as np


def lhs_sample(ranges, m, rng):
    """Symmetric Latin hypercube sample.

    Returns an ``(m, len(ranges))`` array with exactly one point in each of
    the ``m`` equal-width strata per dimension, and with the point set
    invariant under reflection through the box center: the mirror image
    ``lo + hi - x`` of every row is also a row. The first ``m // 2`` rows are
    sampled, the last ``m // 2`` are their mirrors, and an odd ``m`` puts one
    point at the exact center.

    Parameters
    ----------
    ranges : sequence of (lo, hi) pairs
    m : number of points, >= 1
    rng : RngStream
    """
    if m < 1:
        raise ValueError("need at least one design point")
    ranges = [(float(lo), float(hi)) for lo, hi in ranges]
    for lo, hi in ranges:
        if not lo < hi:
            raise ValueError(f"empty range [{lo}, {hi}]")
    d = len(ranges)
    if d == 0:
        raise ValueError("need at least one dimension")

    gen = rng.generator
    half = m // 2
    pts = np.empty((m, d), dtype=np.float64)
    for j, (lo, hi) in enumerate(ranges):
        width = (hi - lo) / m
        # Strata pair up as {s, m-1-s}; each sampled point claims one side of
        # a distinct pair and its mirror lands in the partner stratum.
        pair = gen.permutation(half)
        side = gen.integers(0, 2, size=half)
        strata = np.where(side == 1, m - 1 - pair, pair)
        u = gen.uniform(size=half)
        first = lo + (strata + u) * width
        pts[:half, j] = first
        if m % 2 == 1:
            pts[half, j] = 0.5 * (lo + hi)
        pts[m - half:, j] = (lo + hi) - first
    return pts
