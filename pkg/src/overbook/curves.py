"""Burstiness curves and token-bucket regulation of request streams.

A burstiness curve caps the number of requests that may arrive in any
time window: at most ``value(t)`` requests in any window of length t,
where ``value(t)`` is the minimum of a finite set of affine pieces
``offset + rate * t``.  The same pieces drive the runtime token-bucket
regulator that enforces the cap on a live stream.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "BurstinessCurve",
    "ClockRegressionError",
    "TokenBucketState",
    "dual_token_bucket",
    "sum_curves",
    "token_bucket",
]

# Absolute slack for the strict-domination test during canonicalization.
DOMINATION_TOL = 1e-12

# Continuous refills accumulate float error; nudge before flooring so a
# bucket holding 1.9999999999999996 tokens still admits 2 requests.
_TOKEN_EPS = 1e-9


class ClockRegressionError(ValueError):
    """A regulator update was asked to move backwards in time."""


@dataclass(frozen=True)
class BurstinessCurve:
    """Concave nondecreasing arrival envelope ``min_k (offset_k + rate_k * t)``.

    Pieces are canonicalized on construction: sorted by decreasing rate
    with strictly increasing offsets, and pieces that never touch the
    lower envelope on t >= 0 are removed.
    """

    pieces: tuple[tuple[float, float], ...]

    def __init__(self, pieces) -> None:
        object.__setattr__(self, "pieces", _canonicalize(pieces))

    @cached_property
    def _offsets(self) -> np.ndarray:
        return np.array([p[0] for p in self.pieces])

    @cached_property
    def _rates(self) -> np.ndarray:
        return np.array([p[1] for p in self.pieces])

    @cached_property
    def breakpoints(self) -> tuple[float, ...]:
        """Window lengths where the active piece changes, in increasing order."""
        out = []
        for (o0, r0), (o1, r1) in zip(self.pieces, self.pieces[1:]):
            out.append((o1 - o0) / (r0 - r1))
        return tuple(out)

    @property
    def peak_rate(self) -> float:
        return self.pieces[0][1]

    @property
    def long_run_rate(self) -> float:
        return self.pieces[-1][1]

    def value(self, t):
        """Largest request count allowed in a window of length ``t >= 0``."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0.0):
            raise ValueError("window length must be nonnegative")
        v = np.min(
            self._offsets[:, None] + self._rates[:, None] * t_arr.reshape(1, -1),
            axis=0,
        )
        return float(v[0]) if t_arr.ndim == 0 else v.reshape(t_arr.shape)

    __call__ = value

    def inverse(self, y):
        """Smallest ``t >= 0`` with ``value(t) >= y`` (inf when unreachable).

        The envelope reaches y exactly when every piece does, so the
        answer is the largest per-piece crossing time.  A flat piece that
        sits below y can never be crossed; a flat active segment at level
        y maps to the left endpoint of that segment.
        """
        y_arr = np.asarray(y, dtype=float)
        if np.any(y_arr < 0.0):
            raise ValueError("target level must be nonnegative")
        t = np.zeros(y_arr.size)
        blocked = np.zeros(y_arr.size, dtype=bool)
        flat = y_arr.reshape(-1)
        for off, rate in self.pieces:
            if rate > 0.0:
                t = np.maximum(t, (flat - off) / rate)
            else:
                blocked |= flat > off
        t = np.where(blocked, math.inf, np.maximum(t, 0.0))
        return float(t[0]) if y_arr.ndim == 0 else t.reshape(y_arr.shape)

    def scaled(self, alpha: float) -> "BurstinessCurve":
        """Curve with every offset and rate multiplied by ``alpha >= 0``."""
        if alpha < 0.0:
            raise ValueError("scale factor must be nonnegative")
        return BurstinessCurve([(o * alpha, r * alpha) for o, r in self.pieces])

    def active_piece(self, t: float) -> tuple[float, float]:
        """Piece achieving the minimum at window length ``t``."""
        return self.pieces[bisect_right(self.breakpoints, t)]


def _canonicalize(pieces) -> tuple[tuple[float, float], ...]:
    cleaned = []
    for piece in pieces:
        off, rate = float(piece[0]), float(piece[1])
        if not (math.isfinite(off) and math.isfinite(rate)):
            raise ValueError("piece offsets and rates must be finite")
        if off < 0.0 or rate < 0.0:
            raise ValueError("piece offsets and rates must be nonnegative")
        cleaned.append((off, rate))
    if not cleaned:
        raise ValueError("a burstiness curve needs at least one piece")

    # Decreasing rate; among equal rates the smallest offset survives.
    cleaned.sort(key=lambda p: (-p[1], p[0]))
    kept: list[tuple[float, float]] = []
    for off, rate in cleaned:
        if kept and abs(rate - kept[-1][1]) <= DOMINATION_TOL:
            continue
        # A slower piece that starts no higher lies below the faster one
        # everywhere on t >= 0, so the faster piece is dominated.
        while kept and off <= kept[-1][0] + DOMINATION_TOL:
            kept.pop()
        kept.append((off, rate))

    # Lower-envelope scan: drop pieces whose active region is empty.
    hull: list[tuple[float, float]] = []

    def crossing(a, b):
        return (b[0] - a[0]) / (a[1] - b[1])

    for piece in kept:
        while len(hull) >= 2 and crossing(hull[-2], piece) <= crossing(
            hull[-2], hull[-1]
        ):
            hull.pop()
        hull.append(piece)
    return tuple(hull)


def dual_token_bucket(
    peak_depth: float, peak_rate: float, sustained_burst: float, sustained_rate: float
) -> BurstinessCurve:
    """Two-piece envelope min(peak_depth + peak_rate*t, sustained_burst + sustained_rate*t).

    Requires peak_rate > sustained_rate > 0 and sustained_burst > peak_depth > 0
    so that both pieces are live.
    """
    if not peak_rate > sustained_rate:
        raise ValueError("peak_rate > sustained_rate violated")
    if not sustained_rate > 0.0:
        raise ValueError("sustained_rate > 0 violated")
    if not sustained_burst > peak_depth:
        raise ValueError("sustained_burst > peak_depth violated")
    if not peak_depth > 0.0:
        raise ValueError("peak_depth > 0 violated")
    return BurstinessCurve([(peak_depth, peak_rate), (sustained_burst, sustained_rate)])


def token_bucket(depth: float, rate: float) -> BurstinessCurve:
    """Degenerate single-bucket envelope depth + rate*t."""
    return BurstinessCurve([(depth, rate)])


def sum_curves(curves) -> BurstinessCurve:
    """Pointwise sum of envelopes, exact as a concave piecewise-linear curve.

    On each region between merged breakpoints every input is affine, so
    the sum there is a single affine piece; the minimum of those pieces
    reproduces the sum everywhere.
    """
    curves = list(curves)
    if not curves:
        raise ValueError("need at least one curve to sum")
    cuts = sorted({t for c in curves for t in c.breakpoints})
    regions = [0.0] + cuts
    pieces = []
    for i, start in enumerate(regions):
        rep = (start + regions[i + 1]) / 2.0 if i + 1 < len(regions) else start + 1.0
        off = 0.0
        rate = 0.0
        for c in curves:
            o, r = c.active_piece(rep)
            off += o
            rate += r
        pieces.append((off, rate))
    return BurstinessCurve(pieces)


class TokenBucketState:
    """Mutable per-piece token buckets enforcing a curve on a live stream.

    Each piece holds a bucket of depth ``offset`` refilled continuously at
    ``rate`` and capped at the depth.  Buckets start full.  A batch of m
    requests is admitted only if every bucket holds at least m tokens;
    otherwise the largest admissible prefix goes through.
    """

    def __init__(self, curve: BurstinessCurve, start_time: float = 0.0) -> None:
        self.curve = curve
        self._tokens = [off for off, _ in curve.pieces]
        self.last_update = float(start_time)

    @property
    def tokens(self) -> tuple[float, ...]:
        return tuple(self._tokens)

    def admit(self, now: float, batch: int) -> int:
        """Refill to ``now`` and admit the largest prefix of ``batch`` requests.

        Args:
            now: arrival timestamp, must not precede the previous update.
            batch: requested batch size, a positive integer.

        Returns:
            Number of requests admitted (0..batch).
        """
        if now < self.last_update:
            raise ClockRegressionError(
                f"update at {now} precedes regulator clock {self.last_update}"
            )
        if batch < 1 or batch != int(batch):
            raise ValueError("batch size must be a positive integer")
        elapsed = now - self.last_update
        self.last_update = now
        available = math.inf
        for i, (off, rate) in enumerate(self.curve.pieces):
            level = min(off, self._tokens[i] + rate * elapsed)
            self._tokens[i] = level
            available = min(available, level)
        admitted = min(int(batch), int(math.floor(available + _TOKEN_EPS)))
        if admitted > 0:
            for i in range(len(self._tokens)):
                self._tokens[i] = max(0.0, self._tokens[i] - admitted)
        return max(admitted, 0)
