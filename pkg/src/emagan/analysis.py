"""Trajectory comparison tools.

LOESS smoothing, dynamic time warping, Pearson correlation, a per-channel
correlation report, an exact odds-ratio test, and 2D trajectory export.
All operations are pure and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .autodiff import ContractViolation
from .models import CHANNEL_NAMES, PLACES, EmaTrajectory

AXES = ("x", "y")
REPORT_HEADER = "place,axis,r,dtw_cost"
TRAJECTORY_HEADER = "sample_index,gen_x,gen_y,real_x,real_y"
DEFAULT_SPAN = 0.2
DEFAULT_REAL_SCALE = 3.0


def _as_series(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractViolation(f"{what}: expected a 1-D series, got shape {arr.shape}")
    if arr.size == 0:
        raise ContractViolation(f"{what}: empty series")
    if not np.isfinite(arr).all():
        raise ContractViolation(f"{what}: non-finite values")
    return arr


# ---------------------------------------------------------------------------
# LOESS
# ---------------------------------------------------------------------------


def loess_smooth(series, span: float, degree: int = 1) -> np.ndarray:
    """Locally weighted polynomial smoothing at uniform sample times.

    At each index, fits a degree-1 or degree-2 polynomial to the
    ceil(span*n) nearest neighbors by weighted least squares with tricube
    weights, then evaluates the fit at that index. Exactly reproduces any
    polynomial of degree <= ``degree``.
    """
    y = _as_series(series, "loess_smooth")
    n = y.size
    if degree not in (1, 2):
        raise ContractViolation(f"loess_smooth: degree must be 1 or 2, got {degree}")
    if not (0.0 < span <= 1.0):
        raise ContractViolation(f"loess_smooth: span must lie in (0, 1], got {span}")
    if span * n < degree + 1:
        raise ContractViolation(
            f"loess_smooth: span*n = {span * n:.3g} < degree+1 = {degree + 1}; "
            "series too short for this span"
        )
    k = min(n, int(math.ceil(span * n)))
    x = np.arange(n, dtype=np.float64)
    out = np.empty(n)
    half = k // 2
    for i in range(n):
        # window of the k nearest indices (uniform times -> contiguous block)
        lo = min(max(0, i - half), n - k)
        hi = lo + k
        xs = x[lo:hi] - x[i]
        ys = y[lo:hi]
        d = np.abs(xs)
        h = d.max()
        if h == 0.0:
            out[i] = ys[0]
            continue
        w = (1.0 - (d / h) ** 3) ** 3
        np.clip(w, 0.0, None, out=w)
        sw = np.sqrt(w)
        cols = [np.ones(k), xs] if degree == 1 else [np.ones(k), xs, xs * xs]
        design = np.stack(cols, axis=1) * sw[:, None]
        coef, *_ = np.linalg.lstsq(design, ys * sw, rcond=None)
        out[i] = coef[0]
    return out


# ---------------------------------------------------------------------------
# DTW
# ---------------------------------------------------------------------------


@dataclass
class AlignedPair:
    """A minimal-cost monotone alignment between two series."""

    path: list  # (i, j) index pairs from (0,0) to (n-1,m-1)
    warped_a: np.ndarray
    warped_b: np.ndarray
    total_cost: float


def dtw_align(a, b) -> AlignedPair:
    """Dynamic time warping with steps {(1,0),(0,1),(1,1)} and |.| cost.

    Backtrace ties prefer the diagonal step, then advancing the first series,
    then the second.
    """
    av = _as_series(a, "dtw_align")
    bv = _as_series(b, "dtw_align")
    n, m = av.size, bv.size
    cost = np.abs(av[:, None] - bv[None, :])
    c = cost.tolist()
    inf = math.inf
    d = [[inf] * m for _ in range(n)]
    d[0][0] = c[0][0]
    for j in range(1, m):
        d[0][j] = d[0][j - 1] + c[0][j]
    for i in range(1, n):
        di = d[i]
        dp = d[i - 1]
        ci = c[i]
        di[0] = dp[0] + ci[0]
        for j in range(1, m):
            best = dp[j - 1]
            if dp[j] < best:
                best = dp[j]
            if di[j - 1] < best:
                best = di[j - 1]
            di[j] = ci[j] + best
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            best = min(d[i - 1][j - 1], d[i - 1][j], d[i][j - 1])
            if d[i - 1][j - 1] == best:
                i -= 1
                j -= 1
            elif d[i - 1][j] == best:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    idx = np.asarray(path)
    return AlignedPair(
        path=path,
        warped_a=av[idx[:, 0]],
        warped_b=bv[idx[:, 1]],
        total_cost=float(d[n - 1][m - 1]),
    )


# ---------------------------------------------------------------------------
# Pearson correlation
# ---------------------------------------------------------------------------


def pearson_r(a, b) -> float:
    """Product-moment correlation; NaN flags the zero-variance case."""
    av = _as_series(a, "pearson_r")
    bv = _as_series(b, "pearson_r")
    if av.size != bv.size:
        raise ContractViolation(
            f"pearson_r: length mismatch {av.size} vs {bv.size}"
        )
    if av.size < 2:
        raise ContractViolation("pearson_r: need at least 2 points")
    da = av - av.mean()
    db = bv - bv.mean()
    va = float(np.dot(da, da))
    vb = float(np.dot(db, db))
    if va == 0.0 or vb == 0.0:
        return float("nan")
    # Perfectly (anti)correlated centered series hit +/-1 exactly; the
    # general path can land one rounding unit short of that.
    if np.array_equal(da, db):
        return 1.0
    if np.array_equal(da, -db):
        return -1.0
    r = float(np.dot(da, db)) / math.sqrt(va * vb)
    return float(min(1.0, max(-1.0, r)))


# ---------------------------------------------------------------------------
# Correlation report
# ---------------------------------------------------------------------------


@dataclass
class ChannelStat:
    place: str
    axis: str
    r: float
    dtw_cost: float


@dataclass
class ChannelCorrelationReport:
    rows: list

    def to_csv(self) -> str:
        lines = [REPORT_HEADER]
        for row in self.rows:
            lines.append(f"{row.place},{row.axis},{repr(row.r)},{repr(row.dtw_cost)}")
        return "\n".join(lines) + "\n"


def _znorm(series: np.ndarray) -> np.ndarray:
    mean = series.mean()
    std = series.std()
    if std == 0.0:
        return series - mean
    return (series - mean) / std


def dtw_corr_pipeline(
    gen: EmaTrajectory,
    real: EmaTrajectory,
    span=DEFAULT_SPAN,
    degree: int = 1,
    normalize: bool = False,
) -> ChannelCorrelationReport:
    """Smooth both trajectories, warp one onto the other, correlate.

    Produces one row per articulator place and axis (12 rows; the voicing
    channel is excluded). Both series receive the same LOESS treatment so
    identical inputs report r = 1 and cost 0 exactly. ``span=None`` disables
    smoothing. ``normalize`` z-scores both series before alignment.
    """
    rows = []
    for place in PLACES:
        for axis in AXES:
            name = f"{place}_{axis}"
            g = gen.channel(name)
            r_series = real.channel(name)
            if span is not None:
                g = loess_smooth(g, span, degree)
                r_series = loess_smooth(r_series, span, degree)
            if normalize:
                g = _znorm(g)
                r_series = _znorm(r_series)
            aligned = dtw_align(g, r_series)
            r = pearson_r(aligned.warped_a, aligned.warped_b)
            rows.append(ChannelStat(place, axis, r, aligned.total_cost))
    return ChannelCorrelationReport(rows)


# ---------------------------------------------------------------------------
# Odds ratio with exact test
# ---------------------------------------------------------------------------


@dataclass
class OddsRatioResult:
    odds_ratio: float
    p_value: float
    or_defined: bool


def odds_ratio_test(a: int, b: int, c: int, d: int) -> OddsRatioResult:
    """Odds ratio (a*d)/(b*c) with a two-sided Fisher exact p-value.

    The p-value sums hypergeometric probabilities, over all tables with the
    observed margins, of every table no more probable than the observed one.
    Computed in exact rational arithmetic so ties are decided exactly.
    """
    counts = (a, b, c, d)
    if any(int(v) != v or v < 0 for v in counts):
        raise ContractViolation(
            f"odds_ratio_test: counts must be non-negative integers, got {counts}"
        )
    a, b, c, d = (int(v) for v in counts)
    if b * c != 0:
        odds = (a * d) / (b * c)
        defined = True
    elif a * d != 0:
        odds = float("inf")
        defined = False
    else:
        odds = float("nan")
        defined = False

    r1, r2 = a + b, c + d
    c1 = a + c
    n = r1 + r2
    if n == 0:
        return OddsRatioResult(odds, 1.0, defined)
    k_lo = max(0, c1 - r2)
    k_hi = min(r1, c1)
    denom = math.comb(n, c1)
    probs = {
        k: Fraction(math.comb(r1, k) * math.comb(r2, c1 - k), denom)
        for k in range(k_lo, k_hi + 1)
    }
    observed = probs[a]
    p = sum(pk for pk in probs.values() if pk <= observed)
    return OddsRatioResult(odds, float(p), defined)


# ---------------------------------------------------------------------------
# 2D trajectory export
# ---------------------------------------------------------------------------


def trajectory_rows(
    gen: EmaTrajectory,
    real: EmaTrajectory = None,
    real_scale: float = DEFAULT_REAL_SCALE,
    span=DEFAULT_SPAN,
    degree: int = 1,
) -> dict:
    """Per-place 2D rows: (sample_index, gen_x, gen_y, real_x, real_y).

    Generated coordinates are smoothed; real coordinates are multiplied by
    ``real_scale``. Missing real data leaves those cells as None. Row count
    covers the longer of the two trajectories.
    """
    out = {}
    for place in PLACES:
        gx = gen.channel(f"{place}_x")
        gy = gen.channel(f"{place}_y")
        if span is not None:
            gx = loess_smooth(gx, span, degree)
            gy = loess_smooth(gy, span, degree)
        if real is not None:
            rx = real.channel(f"{place}_x") * real_scale
            ry = real.channel(f"{place}_y") * real_scale
        else:
            rx = ry = np.empty(0)
        length = max(gx.size, rx.size)
        rows = []
        for i in range(length):
            rows.append(
                (
                    i,
                    float(gx[i]) if i < gx.size else None,
                    float(gy[i]) if i < gy.size else None,
                    float(rx[i]) if i < rx.size else None,
                    float(ry[i]) if i < ry.size else None,
                )
            )
        out[place] = rows
    return out


def trajectory_export(
    gen: EmaTrajectory,
    out_dir,
    real: EmaTrajectory = None,
    real_scale: float = DEFAULT_REAL_SCALE,
    span=DEFAULT_SPAN,
    degree: int = 1,
) -> dict:
    """Write one 2D trajectory CSV per articulator place; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_place = trajectory_rows(gen, real, real_scale, span, degree)
    paths = {}
    for place, rows in by_place.items():
        path = out_dir / f"trajectory_{place}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(TRAJECTORY_HEADER + "\n")
            for idx, gx, gy, rx, ry in rows:
                cells = [str(idx)] + [
                    "" if v is None else repr(v) for v in (gx, gy, rx, ry)
                ]
                f.write(",".join(cells) + "\n")
        paths[place] = path
    return paths
