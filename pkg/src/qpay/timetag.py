"""Time-tag stream analytics: clock sync, coincidences, heralded g2.

Streams are integer picosecond event lists, one per detector channel,
nondecreasing within a stream. Two recording units run free-running clocks,
so stream pairs carry a constant offset (photon travel time plus electronic
delay) and a slow relative drift; both are recovered from the data itself.

Coincidence semantics: a coincidence window w is anchored on the first
channel of the pattern; every other channel must supply a tag within
+-w/2 of the anchor tag (after per-channel delays). Under the default
greedy mode, partner tags are consumed at most once, anchors are processed
in time order and take the earliest available partner, which mirrors
hardware coincidence logic; the all_pairs mode counts every combination,
which mirrors correlation histograms. For independent Poisson streams of
rates r1, r2 the greedy accidental rate is r1*r2*w per unit time (to first
order in occupancy).

The heralded second-order correlation of a pair source is estimated as

    g2(tau) = N_i * N_i12(tau) / (N_i1(0) * N_i2(tau))

with N_i the total herald count, N_i1(0) herald/D1 pairs at zero delay,
N_i2(tau) herald/D2 pairs at delay tau and N_i12(tau) the triples. Points
with a vanishing denominator are flagged invalid rather than fabricated.
Uncertainties propagate Poisson counting noise of the four counters.

Synthetic generators (Poisson background, ideal heralded pairs, a pair
source with occasional double-pair emission) provide test fixtures with
known analytic answers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NoLockError(RuntimeError):
    """Cross-correlation shows no significant peak; streams not locked."""


@dataclass
class TimeTagStream:
    channel: int
    tags: np.ndarray  # int64 picoseconds, nondecreasing

    def __post_init__(self):
        self.tags = np.asarray(self.tags, dtype=np.int64)
        if self.tags.ndim != 1:
            raise ValueError("tags must be a 1-d array")
        if self.tags.size > 1 and np.any(np.diff(self.tags) < 0):
            raise ValueError("tags must be nondecreasing")

    def __len__(self) -> int:
        return self.tags.size

    def shifted(self, delta_ps: int) -> "TimeTagStream":
        return TimeTagStream(self.channel, self.tags + np.int64(delta_ps))


@dataclass
class ClockModel:
    """t_b ~ t_a + offset + drift_rate * (t_a - anchor)."""

    offset_ps: float
    drift_rate: float = 0.0
    anchor_ps: float = 0.0

    def __post_init__(self):
        if abs(self.drift_rate) >= 1e-4:
            raise ValueError("drift rate beyond 1e-4 is outside the model's regime")


@dataclass
class G2Estimate:
    tau_ps: np.ndarray
    g2: np.ndarray
    sigma: np.ndarray
    window_ps: int
    valid: np.ndarray
    counts: dict[str, np.ndarray]

    def __post_init__(self):
        self.tau_ps = np.asarray(self.tau_ps, dtype=np.int64)


# ---------------------------------------------------------------------------
# Clock offset and drift.
# ---------------------------------------------------------------------------


def _difference_histogram(
    a: np.ndarray, b: np.ndarray, search_range_ps: int, bin_ps: int
) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = -search_range_ps, search_range_ps
    left = np.searchsorted(b, a + lo, side="left")
    right = np.searchsorted(b, a + hi, side="right")
    counts = right - left
    total = int(counts.sum())
    if total == 0:
        nbins = max(1, (hi - lo) // bin_ps)
        return np.zeros(nbins, dtype=np.int64), lo + bin_ps * (np.arange(nbins) + 0.5)
    rep_a = np.repeat(a, counts)
    # flat indices of every in-range b partner
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    bidx = np.repeat(left, counts) + (np.arange(total) - starts)
    diffs = b[bidx] - rep_a
    nbins = max(1, (hi - lo) // bin_ps)
    hist = np.bincount(((diffs - lo) // bin_ps).astype(np.int64), minlength=nbins)[:nbins]
    centers = lo + bin_ps * (np.arange(nbins) + 0.5)
    return hist, centers


def estimate_offset(
    a: TimeTagStream,
    b: TimeTagStream,
    search_range_ps: int,
    bin_ps: int,
    significance: float = 5.0,
) -> ClockModel:
    """Clock offset of stream b relative to a via the tag-difference histogram.

    The offset is the center of the highest-count bin; ties break toward the
    smallest |offset|. Raises NoLockError unless the peak clears the noise
    floor of the remaining bins by `significance` standard deviations.
    """
    if bin_ps < 1 or search_range_ps < bin_ps:
        raise ValueError("need bin_ps >= 1 and search_range_ps >= bin_ps")
    hist, centers = _difference_histogram(a.tags, b.tags, search_range_ps, bin_ps)
    peak = int(hist.max(initial=0))
    if peak <= 0:
        raise NoLockError("empty difference histogram within the search range")
    tied = np.flatnonzero(hist == peak)
    k = tied[np.argmin(np.abs(centers[tied]))]
    others = np.delete(hist, k)
    mu = float(others.mean()) if others.size else 0.0
    sigma = max(float(others.std()), np.sqrt(max(mu, 1.0)))
    if peak < mu + significance * sigma:
        raise NoLockError(
            f"no correlation peak above {significance} sigma (peak={peak}, noise={mu:.1f}+-{sigma:.1f})"
        )
    return ClockModel(offset_ps=float(centers[k]))


def _fit_drift_once(
    a: TimeTagStream,
    b: TimeTagStream,
    segment_ps: int,
    search_range_ps: int,
    bin_ps: int,
) -> ClockModel:
    t0, t1 = int(a.tags[0]), int(a.tags[-1])
    mids, offsets = [], []
    start = t0
    while start < t1:
        stop = start + segment_ps
        seg_a = a.tags[(a.tags >= start) & (a.tags < stop)]
        lo = np.searchsorted(b.tags, start - 2 * search_range_ps)
        hi = np.searchsorted(b.tags, stop + 2 * search_range_ps)
        seg_b = b.tags[lo:hi]
        if seg_a.size and seg_b.size:
            try:
                model = estimate_offset(
                    TimeTagStream(a.channel, seg_a),
                    TimeTagStream(b.channel, seg_b),
                    search_range_ps,
                    bin_ps,
                )
            except NoLockError:
                pass
            else:
                mids.append(start + segment_ps / 2.0)
                offsets.append(model.offset_ps)
        start = stop
    if len(mids) < 2:
        raise NoLockError(f"only {len(mids)} lockable segments; need at least 2")
    mids_arr = np.asarray(mids, dtype=np.float64)
    offs_arr = np.asarray(offsets, dtype=np.float64)
    slope, intercept = np.polyfit(mids_arr, offs_arr, 1)
    anchor = float(mids_arr[0])
    return ClockModel(offset_ps=float(intercept + slope * anchor), drift_rate=float(slope), anchor_ps=anchor)


def fit_drift(
    a: TimeTagStream,
    b: TimeTagStream,
    segment_ps: int,
    search_range_ps: int,
    bin_ps: int,
    refine: int = 2,
) -> ClockModel:
    """Piecewise offsets per segment, least-squares slope = drift rate.

    A drifting offset smears each segment's correlation peak over
    drift*segment, so after the first fit the correction is applied and the
    residual drift re-fitted (`refine` times) on a collapsing peak; the
    models compose into one. Raises NoLockError with fewer than two lockable
    segments.
    """
    if segment_ps < 1:
        raise ValueError("segment length must be positive")
    if len(a) == 0:
        raise NoLockError("empty reference stream")
    model = _fit_drift_once(a, b, segment_ps, search_range_ps, bin_ps)
    for _ in range(refine):
        corrected = correct_drift(b, model)
        residual_range = max(4 * bin_ps, search_range_ps // 64)
        try:
            extra = _fit_drift_once(a, corrected, segment_ps, residual_range, bin_ps)
        except NoLockError:
            break
        # compose: apply `model` then `extra`; cross terms are sub-picosecond
        model = ClockModel(
            offset_ps=model.offset_ps
            + extra.offset_ps
            + extra.drift_rate * (model.anchor_ps - extra.anchor_ps),
            drift_rate=model.drift_rate + extra.drift_rate,
            anchor_ps=model.anchor_ps,
        )
    return model


def correct_drift(stream: TimeTagStream, model: ClockModel) -> TimeTagStream:
    """Undo offset and linear drift; output stays sorted."""
    t = stream.tags.astype(np.float64)
    corrected = t - model.offset_ps - model.drift_rate * (t - model.anchor_ps)
    out = np.sort(np.rint(corrected).astype(np.int64))
    return TimeTagStream(stream.channel, out)


def inject_clock(stream: TimeTagStream, model: ClockModel) -> TimeTagStream:
    """Apply a clock model to truth data (test fixture helper)."""
    t = stream.tags.astype(np.float64)
    skewed = t + model.offset_ps + model.drift_rate * (t - model.anchor_ps)
    return TimeTagStream(stream.channel, np.sort(np.rint(skewed).astype(np.int64)))


# ---------------------------------------------------------------------------
# Coincidence counting.
# ---------------------------------------------------------------------------


def _greedy_match_mask(anchor: np.ndarray, partner: np.ndarray, half_window: int) -> np.ndarray:
    """Anchors matched to distinct partners within +-half_window.

    Exact sequential greedy: anchors in time order, each takes the earliest
    partner not yet consumed. Anchors whose candidate partner ranges do not
    overlap resolve independently (vectorized); overlapping runs are walked
    sequentially, which is rare at low occupancy.
    """
    matched = np.zeros(anchor.size, dtype=bool)
    if anchor.size == 0 or partner.size == 0:
        return matched
    left = np.searchsorted(partner, anchor - half_window, side="left")
    right = np.searchsorted(partner, anchor + half_window, side="right")
    idx = np.flatnonzero(left < right)
    if idx.size == 0:
        return matched
    l, r = left[idx], right[idx]
    # r is nondecreasing, so a cluster ends where its range stops overlapping
    breaks = np.flatnonzero(r[:-1] <= l[1:]) + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks, [idx.size]))
    singleton = (ends - starts) == 1
    matched[idx[starts[singleton]]] = True  # sole claimant of its partners
    for s, e in zip(starts[~singleton], ends[~singleton]):
        nxt = int(l[s])
        for k in range(int(s), int(e)):
            j = max(int(l[k]), nxt)
            if j < int(r[k]):
                matched[idx[k]] = True
                nxt = j + 1
    return matched


def _all_pairs_counts(anchor: np.ndarray, partner: np.ndarray, half_window: int) -> np.ndarray:
    left = np.searchsorted(partner, anchor - half_window, side="left")
    right = np.searchsorted(partner, anchor + half_window, side="right")
    return right - left


def count_coincidences(
    streams: dict[int, TimeTagStream] | list[TimeTagStream],
    pattern: list[int],
    window_ps: int,
    delays_ps: dict[int, int] | None = None,
    mode: str = "greedy",
) -> int:
    """Events where every channel of the pattern fires inside the window.

    The first pattern channel anchors the window; remaining channels must
    supply a tag within +-window/2 of the anchor after their delays.
    """
    if not pattern:
        raise ValueError("empty coincidence pattern")
    if window_ps < 1:
        raise ValueError("window must be positive")
    if mode not in ("greedy", "all_pairs"):
        raise ValueError(f"unknown mode {mode!r}")
    by_channel = (
        {s.channel: s for s in streams} if not isinstance(streams, dict) else streams
    )
    delays_ps = delays_ps or {}
    half = window_ps // 2
    anchor_ch = pattern[0]
    anchor = by_channel[anchor_ch].tags + np.int64(delays_ps.get(anchor_ch, 0))
    if len(pattern) == 1:
        return int(anchor.size)
    if mode == "greedy":
        good = np.ones(anchor.size, dtype=bool)
        for ch in pattern[1:]:
            partner = by_channel[ch].tags + np.int64(delays_ps.get(ch, 0))
            good &= _greedy_match_mask(anchor, partner, half)
        return int(np.count_nonzero(good))
    combos = np.ones(anchor.size, dtype=np.int64)
    for ch in pattern[1:]:
        partner = by_channel[ch].tags + np.int64(delays_ps.get(ch, 0))
        combos *= _all_pairs_counts(anchor, partner, half)
    return int(combos.sum())


# ---------------------------------------------------------------------------
# Heralded g2.
# ---------------------------------------------------------------------------


def g2_heralded(
    idler: TimeTagStream,
    d1: TimeTagStream,
    d2: TimeTagStream,
    window_ps: int,
    tau_axis_ps: np.ndarray | list[int],
    mode: str = "greedy",
) -> G2Estimate:
    """Heralded second-order correlation over the given delay axis."""
    tau_axis = np.asarray(tau_axis_ps, dtype=np.int64)
    n_i = len(idler)
    streams = {0: idler, 1: d1, 2: d2}
    n_i1 = count_coincidences(streams, [0, 1], window_ps, mode=mode)
    g2 = np.full(tau_axis.size, np.nan)
    sigma = np.full(tau_axis.size, np.nan)
    valid = np.zeros(tau_axis.size, dtype=bool)
    n_i2_arr = np.zeros(tau_axis.size, dtype=np.int64)
    n_i12_arr = np.zeros(tau_axis.size, dtype=np.int64)
    for k, tau in enumerate(tau_axis):
        delays = {2: -int(tau)}
        n_i2 = count_coincidences(streams, [0, 2], window_ps, delays_ps=delays, mode=mode)
        n_i12 = count_coincidences(streams, [0, 1, 2], window_ps, delays_ps=delays, mode=mode)
        n_i2_arr[k] = n_i2
        n_i12_arr[k] = n_i12
        if n_i == 0 or n_i1 == 0 or n_i2 == 0:
            continue  # flagged invalid, never fabricated
        valid[k] = True
        value = n_i * n_i12 / (n_i1 * n_i2)
        g2[k] = value
        rel = 1.0 / n_i + 1.0 / n_i1 + 1.0 / n_i2 + (1.0 / n_i12 if n_i12 > 0 else 0.0)
        sigma[k] = value * np.sqrt(rel) if n_i12 > 0 else np.sqrt(rel) * n_i / (n_i1 * n_i2)
    return G2Estimate(
        tau_ps=tau_axis,
        g2=g2,
        sigma=sigma,
        window_ps=window_ps,
        valid=valid,
        counts={
            "n_i": np.full(tau_axis.size, n_i),
            "n_i1": np.full(tau_axis.size, n_i1),
            "n_i2": n_i2_arr,
            "n_i12": n_i12_arr,
        },
    )


def g2_csv_lines(est: G2Estimate, config_hash: str = "") -> list[str]:
    lines = [f"# config_hash={config_hash}", "tau_ps,g2,sigma,window_ps,valid"]
    for k in range(est.tau_ps.size):
        lines.append(
            f"{int(est.tau_ps[k])},{float(est.g2[k])!r},{float(est.sigma[k])!r},"
            f"{est.window_ps},{int(est.valid[k])}"
        )
    return lines


# ---------------------------------------------------------------------------
# Synthetic sources.
# ---------------------------------------------------------------------------


def poisson_stream(
    rate_hz: float, duration_s: float, rng: np.random.Generator, channel: int = 0, t0_ps: int = 0
) -> TimeTagStream:
    """Homogeneous Poisson tag stream."""
    n_expected = rate_hz * duration_s
    n = rng.poisson(n_expected)
    tags = np.sort(rng.random(n)) * (duration_s * 1e12)
    return TimeTagStream(channel, np.int64(t0_ps) + tags.astype(np.int64))


def heralded_pair_streams(
    burst_rate_hz: float,
    duration_s: float,
    rng: np.random.Generator,
    double_pair_prob: float = 0.0,
    jitter_ps: float = 0.0,
    min_separation_ps: int = 0,
) -> tuple[TimeTagStream, TimeTagStream, TimeTagStream]:
    """Pair source: heralds on channel 0, signals split 50/50 onto 1 and 2.

    Every burst yields one detected herald and one signal photon; with
    probability double_pair_prob a second, independent pair is emitted in
    the same burst (its herald merges with the first). Ideal detection.
    min_separation_ps > 0 thins bursts closer than that to the previous one,
    removing accidental coincidences between distinct bursts.
    """
    n_bursts = rng.poisson(burst_rate_hz * duration_s)
    times = np.sort(rng.random(n_bursts)) * (duration_s * 1e12)
    if min_separation_ps > 0 and times.size:
        keep = np.ones(times.size, dtype=bool)
        last = -np.inf
        for i, t in enumerate(times):
            if t - last < min_separation_ps:
                keep[i] = False
            else:
                last = t
        times = times[keep]
        n_bursts = times.size
    doubles = rng.random(n_bursts) < double_pair_prob
    idler = times.astype(np.int64)
    sig_times = np.concatenate([times, times[doubles]])
    routes = rng.random(sig_times.size) < 0.5
    if jitter_ps > 0:
        sig_times = sig_times + rng.normal(0.0, jitter_ps, sig_times.size)
    d1 = np.sort(sig_times[routes]).astype(np.int64)
    d2 = np.sort(sig_times[~routes]).astype(np.int64)
    return (
        TimeTagStream(0, idler),
        TimeTagStream(1, d1),
        TimeTagStream(2, d2),
    )


def analytic_heralded_g2_zero(double_pair_prob: float) -> float:
    """Closed-form g2(0) of the synthetic pair source (no accidentals).

    Per burst with n pairs (n=2 with probability p2): P(D1 clicks) =
    1-(1/2)^n, P(D1 and D2) = p2/2, so
    g2(0) = (p2/2) / ((1-p2)/2 + 3*p2/4)^2.
    """
    p2 = double_pair_prob
    p_single_arm = (1.0 - p2) * 0.5 + p2 * 0.75
    return (p2 / 2.0) / (p_single_arm**2)


# ---------------------------------------------------------------------------
# Tag file IO: little-endian records (u8 channel, u64 picoseconds), sorted.
# ---------------------------------------------------------------------------

_TAG_DTYPE = np.dtype([("channel", "u1"), ("t", "<u8")])


def write_tags(path, streams: list[TimeTagStream]) -> None:
    total = sum(len(s) for s in streams)
    rec = np.empty(total, dtype=_TAG_DTYPE)
    off = 0
    for s in streams:
        rec["channel"][off : off + len(s)] = s.channel
        rec["t"][off : off + len(s)] = s.tags.astype(np.uint64)
        off += len(s)
    rec = rec[np.argsort(rec["t"], kind="stable")]
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())


def read_tags(path) -> dict[int, TimeTagStream]:
    rec = np.fromfile(path, dtype=_TAG_DTYPE)
    streams = {}
    for ch in np.unique(rec["channel"]):
        tags = np.sort(rec["t"][rec["channel"] == ch].astype(np.int64))
        streams[int(ch)] = TimeTagStream(int(ch), tags)
    return streams
