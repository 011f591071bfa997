"""Piecewise-constant functions with exact integration.

Every time integral in the estimators has a piecewise-constant integrand
between distinct observed times, so integrals are sums of value times
segment length and carry no quadrature error.
"""

from __future__ import annotations

import numpy as np


class StepFunction:
    """Piecewise-constant function of time, possibly vector valued.

    Parameters
    ----------
    breaks : array_like, shape (m,)
        Strictly increasing jump locations.
    values : array_like, shape (m, ...)
        ``values[j]`` is the level between ``breaks[j]`` and ``breaks[j+1]``
        (and after the last break for ``j = m - 1``).
    initial : scalar or array_like
        Level before the first break.
    right_continuous : bool
        If True the function takes the new level *at* a break,
        ``f(b_j) = values[j]``.  If False it takes the new level just after
        the break, ``f(b_j) = values[j-1]``; this is the convention for
        predictable processes such as at-risk indicators and ``P(C >= t)``.
    """

    def __init__(self, breaks, values, initial=0.0, right_continuous=True):
        breaks = np.asarray(breaks, dtype=float)
        values = np.asarray(values, dtype=float)
        if breaks.ndim != 1:
            raise ValueError("breaks must be one-dimensional")
        if values.shape[:1] != breaks.shape:
            raise ValueError("values must have one row per break")
        if breaks.size > 1 and np.any(np.diff(breaks) <= 0):
            raise ValueError("breaks must be strictly increasing")
        initial = np.broadcast_to(np.asarray(initial, dtype=float), values.shape[1:]).copy()
        self.breaks = breaks
        self.values = values
        self.initial = initial
        self.right_continuous = bool(right_continuous)
        # antiderivative anchored at the first break
        if breaks.size:
            widths = np.diff(breaks)
            inc = values[:-1] * widths.reshape((-1,) + (1,) * (values.ndim - 1))
            self._cum = np.concatenate(
                [np.zeros((1,) + values.shape[1:]), np.cumsum(inc, axis=0)], axis=0
            )
        else:
            self._cum = np.zeros((0,) + values.shape[1:])

    @classmethod
    def from_segments(cls, knots, segment_values, after=None):
        """Left-continuous function from values on ``(knots[k-1], knots[k]]``.

        ``segment_values[0]`` applies on ``(-inf, knots[0]]``; ``after`` is the
        level beyond the last knot (defaults to the last segment value).
        """
        knots = np.asarray(knots, dtype=float)
        seg = np.asarray(segment_values, dtype=float)
        if after is None:
            after = seg[-1]
        tail = np.asarray(after, dtype=float)[None, ...]
        vals = np.concatenate([seg[1:], tail], axis=0)
        return cls(knots, vals, initial=seg[0], right_continuous=False)

    @property
    def jump_times(self):
        return self.breaks

    @property
    def value_shape(self):
        return self.values.shape[1:]

    def _index(self, t, side):
        return np.searchsorted(self.breaks, t, side=side) - 1

    def _lookup(self, idx):
        idx = np.asarray(idx)
        if self.breaks.size == 0:
            return np.broadcast_to(self.initial, idx.shape + self.value_shape).copy()
        safe = np.clip(idx, 0, None)
        out = self.values[safe]
        before = idx < 0
        if np.any(before):
            out = np.array(out, copy=True)
            out[before] = self.initial
        return out

    def __call__(self, t):
        side = "right" if self.right_continuous else "left"
        return self._lookup(self._index(np.asarray(t, dtype=float), side))

    def left_limit(self, t):
        """``f(t-)``."""
        return self._lookup(self._index(np.asarray(t, dtype=float), "left"))

    def right_limit(self, t):
        """``f(t+)``."""
        return self._lookup(self._index(np.asarray(t, dtype=float), "right"))

    def antiderivative(self, x):
        """``F(x) = integral of f from breaks[0] to x`` (negative for x before it)."""
        x = np.asarray(x, dtype=float)
        if self.breaks.size == 0:
            return x[..., None] * self.initial if self.value_shape else x * self.initial
        idx = self._index(x, "right")
        safe = np.clip(idx, 0, None)
        shape = x.shape + (1,) * len(self.value_shape)
        dx = (x - self.breaks[safe]).reshape(shape)
        out = self._cum[safe] + self.values[safe] * dx
        before = idx < 0
        if np.any(before):
            dx0 = (x - self.breaks[0]).reshape(shape)
            out = np.where(before.reshape(shape), self.initial * dx0, out)
        return out

    def integral(self, a, b):
        """Exact integral of the function over ``[a, b]``."""
        return self.antiderivative(b) - self.antiderivative(a)

    def __neg__(self):
        return StepFunction(self.breaks, -self.values, -self.initial, self.right_continuous)

    def to_dict(self):
        return {
            "breaks": self.breaks.tolist(),
            "values": self.values.tolist(),
            "initial": self.initial.tolist(),
            "right_continuous": self.right_continuous,
        }

    @classmethod
    def from_dict(cls, d):
        values = np.asarray(d["values"], dtype=float)
        if values.size == 0:
            values = values.reshape((0,) + np.shape(d["initial"]))
        return cls(d["breaks"], values, d["initial"], d["right_continuous"])

    def __repr__(self):
        kind = "right" if self.right_continuous else "left"
        return f"StepFunction({self.breaks.size} breaks, shape={self.value_shape}, {kind}-continuous)"


def cumulative_sum_step(times, jumps, initial=0.0):
    """Right-continuous step function ``t -> initial + sum of jumps at times <= t``."""
    times = np.asarray(times, dtype=float)
    jumps = np.asarray(jumps, dtype=float)
    initial = np.asarray(initial, dtype=float)
    return StepFunction(times, initial + np.cumsum(jumps, axis=0), initial=initial)


def running_max_piecewise_linear(knots, values_at_knots, f, t):
    """Running maximum ``max_{0 <= s <= t} f(s)`` of a jump-linear curve.

    ``f`` must be linear between knots with only upward jumps at knots and
    ``f(0-) = 0``; the supremum over ``[0, t]`` is then attained at 0, at a
    knot ``<= t`` (after its jump) or at ``t`` itself.
    """
    t = np.asarray(t, dtype=float)
    runmax = np.maximum.accumulate(np.maximum(np.asarray(values_at_knots, dtype=float), 0.0))
    idx = np.searchsorted(knots, t, side="right") - 1
    prior = np.where(idx >= 0, runmax[np.clip(idx, 0, None)], 0.0) if runmax.size else np.zeros_like(t)
    return np.maximum(np.maximum(prior, 0.0), f(t))
