"""Speed series, sliding-window samples, splits, scaling, synthetic data, CSV I/O."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, ParseError, ShapeError
from .layers import SeqInput

log = logging.getLogger(__name__)

CHANNELS = ("speed", "volume", "occupancy")
SCALE_FLOOR = 1e-8


@dataclass
class SpeedSeries:
    """``values[t, p, f]`` for timestep t, location p, channel f (channel 0 is speed).

    Unobserved entries are flagged in ``observed`` and hold NaN in ``values``.
    ``normalized`` series are on a scaled axis, so the speed >= 0 check is skipped.
    """

    values: np.ndarray
    observed: np.ndarray = None
    location_ids: list = None
    channels: list = None
    interval_minutes: float = 5.0
    timestamps: list = None
    normalized: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or min(v.shape) < 1:
            raise ShapeError(f"series values must be (T, P, F) with all sizes >= 1, got {v.shape}")
        if self.observed is None:
            obs = ~np.isnan(v)
        else:
            obs = np.array(self.observed, dtype=bool).reshape(v.shape)
        if not np.isfinite(v[obs]).all():
            raise ValueError("observed entries must be finite")
        if not self.normalized and (v[..., 0][obs[..., 0]] < 0).any():
            raise ValueError("observed speeds must be >= 0")
        v[~obs] = np.nan
        self.values, self.observed = v, obs
        T, P, F = v.shape
        if self.location_ids is None:
            self.location_ids = [f"loc_{p}" for p in range(P)]
        if self.channels is None:
            self.channels = list(CHANNELS[:F]) if F <= len(CHANNELS) else [f"ch{f}" for f in range(F)]
        self.location_ids = [str(s) for s in self.location_ids]
        self.channels = [str(s) for s in self.channels]
        if len(self.location_ids) != P or len(self.channels) != F:
            raise ShapeError("location_ids / channels do not match the value array")
        if self.timestamps is not None and len(self.timestamps) != T:
            raise ShapeError(f"{len(self.timestamps)} timestamps for {T} timesteps")

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_timesteps(self):
        return self.values.shape[0]

    @property
    def n_locations(self):
        return self.values.shape[1]

    @property
    def n_channels(self):
        return self.values.shape[2]

    @property
    def steps_per_day(self):
        return int(round(24 * 60 / self.interval_minutes))

    def with_values(self, values, observed=None, normalized=None):
        return SpeedSeries(values, observed, list(self.location_ids), list(self.channels),
                           self.interval_minutes, self.timestamps,
                           self.normalized if normalized is None else normalized)

    def permute_locations(self, perm):
        perm = np.asarray(perm)
        return SpeedSeries(self.values[:, perm], self.observed[:, perm],
                           [self.location_ids[p] for p in perm], list(self.channels),
                           self.interval_minutes, self.timestamps, self.normalized)

    def equals(self, other):
        return (
            self.values.shape == other.values.shape
            and np.array_equal(self.observed, other.observed)
            and np.array_equal(self.values[self.observed], other.values[other.observed])
            and self.location_ids == other.location_ids
            and self.channels == other.channels
            and self.stamps() == other.stamps()
        )

    def stamps(self):
        # CSV rows without explicit timestamps are labelled by step index
        return list(self.timestamps) if self.timestamps else [str(t) for t in range(self.n_timesteps)]


@dataclass
class Sample:
    input: SeqInput
    target: np.ndarray
    origin_index: int


@dataclass
class SampleSet:
    """Column-stacked samples.

    ``X`` is ``(N, n, P*F)`` with location-major columns (``p*F + f``) and NaN
    rows at masked steps, ``mask`` is ``(N, n)``, ``y`` is ``(N, P)`` and
    ``origin`` holds each target's timestep index.
    """

    X: np.ndarray
    mask: np.ndarray
    y: np.ndarray
    origin: np.ndarray
    channels: int = 1

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return Sample(SeqInput(self.X[i:i + 1], self.mask[i:i + 1]), self.y[i], int(self.origin[i]))
        return SampleSet(self.X[i], self.mask[i], self.y[i], self.origin[i], self.channels)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def seq(self, idx=None):
        if idx is None:
            return SeqInput(self.X, self.mask)
        return SeqInput(self.X[idx], self.mask[idx])

    def with_inputs(self, X, mask=None):
        return SampleSet(X, self.mask if mask is None else mask, self.y, self.origin, self.channels)

    def add_features(self, extra):
        """Append per-step columns ``extra`` of shape ``(N, n, k)``; masked steps stay NaN."""
        X = np.concatenate([self.X, extra], axis=-1)
        X[~self.mask] = np.nan
        return SampleSet(X, self.mask, self.y, self.origin, self.channels)


@dataclass
class DatasetSplit:
    train: SampleSet
    validation: SampleSet
    test: SampleSet
    seed: int = 0


def locf_fill(values, observed):
    """Carry each location-channel's last observation forward; backfill the start."""
    T = values.shape[0]
    flat = values.reshape(T, -1)
    obs = observed.reshape(T, -1)
    idx = np.where(obs, np.arange(T)[:, None], -1)
    np.maximum.accumulate(idx, axis=0, out=idx)
    first = np.where(obs.any(axis=0), obs.argmax(axis=0), -1)
    idx = np.where(idx < 0, first[None, :], idx)
    out = np.take_along_axis(flat, np.maximum(idx, 0), axis=0)
    out[idx < 0] = np.nan
    return out.reshape(values.shape)


def window(series, n, drop_masked_last=True, target_series=None):
    """Build one sample per target index ``t`` in ``[n, T)`` from steps ``[t-n, t)``.

    A step is masked iff none of its entries is observed; partially observed
    steps are completed by :func:`locf_fill`. Samples whose target speeds are
    not all observed are dropped, and so (with ``drop_masked_last``) are
    samples whose final input step is masked, since no prediction exists for
    them. ``target_series`` supplies targets from a different (e.g. clean)
    copy of the series.
    """
    T, P, F = series.shape
    if n < 1 or T <= n:
        raise ConfigurationError(f"need T > n >= 1 to form windows, got T={T}, n={n}")
    tgt = series if target_series is None else target_series
    if tgt.shape != series.shape:
        raise ShapeError(f"target series {tgt.shape} does not match input series {series.shape}")

    step_obs = series.observed.reshape(T, -1).any(axis=1)
    filled = locf_fill(series.values, series.observed).reshape(T, P * F)
    if np.isnan(filled[step_obs]).any():
        never = np.flatnonzero(~series.observed.reshape(T, -1).any(axis=0))
        log.warning("%d location-channel column(s) never observed; filled with 0", len(never))
        filled = np.where(np.isnan(filled), 0.0, filled)
    filled[~step_obs] = np.nan

    origin = np.arange(n, T)
    keep = tgt.observed[origin, :, 0].all(axis=1)
    if drop_masked_last:
        keep &= step_obs[origin - 1]
    origin = origin[keep]
    # (T-n+1, W, n) view -> (N, n, W) copy
    win = np.lib.stride_tricks.sliding_window_view(filled, n, axis=0)
    X = np.ascontiguousarray(win[origin - n].transpose(0, 2, 1))
    mask = np.lib.stride_tricks.sliding_window_view(step_obs, n)[origin - n].copy()
    y = tgt.values[origin, :, 0].copy()
    return SampleSet(X, mask, y, origin, F)


def split_shuffle(samples, ratios=(7, 2, 1), seed=0, shuffle=True):
    """Seeded shuffle, then contiguous cuts by ``ratios`` (floor; remainder to test).

    ``shuffle=False`` keeps chronological order.
    """
    if len(ratios) != 3 or min(ratios) <= 0:
        raise ConfigurationError(f"ratios must be three positive numbers, got {ratios}")
    N = len(samples)
    if N < 3:
        raise ConfigurationError(f"need at least 3 samples to split, got {N}")
    order = np.random.default_rng(seed).permutation(N) if shuffle else np.arange(N)
    a, b, c = ratios
    total = a + b + c
    if all(float(r).is_integer() for r in ratios):
        cut1, cut2 = N * int(a) // int(total), N * int(a + b) // int(total)
    else:
        cut1, cut2 = math.floor(N * a / total), math.floor(N * (a + b) / total)
    return DatasetSplit(samples[order[:cut1]], samples[order[cut1:cut2]], samples[order[cut2:]], seed)


@dataclass
class NormStats:
    """Per-column affine scaling ``(x - offset) / scale`` over the ``P*F`` columns."""

    scheme: str
    offset: np.ndarray
    scale: np.ndarray
    channels: int = 1

    @classmethod
    def fit(cls, values, scheme="minmax", channels=1, feature_range=(0.0, 1.0)):
        """Fit on an array whose last axis is the ``P*F`` columns (NaN ignored).

        ``feature_range`` is the ``(lo, hi)`` interval min-max maps onto; a
        constant column always maps to 0.
        """
        cols = np.asarray(values, dtype=np.float64)
        cols = cols.reshape(-1, cols.shape[-1])
        if scheme == "none":
            return cls("none", np.zeros(cols.shape[1]), np.ones(cols.shape[1]), channels)
        if scheme not in ("minmax", "zscore"):
            raise ConfigurationError(f"unknown normalization scheme {scheme!r}")
        seen = ~np.isnan(cols).all(axis=0)
        safe = np.where(seen, cols, 0.0) if not seen.all() else cols
        if scheme == "minmax":
            lo, hi = (float(v) for v in feature_range)
            if not hi > lo:
                raise ConfigurationError(f"feature_range must be increasing, got {feature_range!r}")
            cmin, cmax = np.nanmin(safe, axis=0), np.nanmax(safe, axis=0)
            scale = (cmax - cmin) / (hi - lo)
            offset = np.where(scale < SCALE_FLOOR, cmin, cmin - lo * scale)
        else:
            offset = np.nanmean(safe, axis=0)
            scale = np.nanstd(safe, axis=0)
        if (scale < SCALE_FLOOR).any():
            log.warning("%d constant column(s); scale floored at %g",
                        int((scale < SCALE_FLOOR).sum()), SCALE_FLOOR)
            scale = np.maximum(scale, SCALE_FLOOR)
        return cls(scheme, offset, scale, channels)

    @property
    def speed_offset(self):
        return self.offset[::self.channels]

    @property
    def speed_scale(self):
        return self.scale[::self.channels]

    def transform(self, X):
        return (X - self.offset) / self.scale

    def inverse_transform(self, X):
        return X * self.scale + self.offset

    def transform_target(self, y):
        return (y - self.speed_offset) / self.speed_scale

    def denormalize(self, pred):
        return pred * self.speed_scale + self.speed_offset

    def apply(self, samples):
        return SampleSet(self.transform(samples.X), samples.mask, self.transform_target(samples.y),
                         samples.origin, samples.channels)


def normalize(series, scheme="minmax", stats=None, feature_range=(0.0, 1.0)):
    """Scale every location-channel of a series; returns ``(series, NormStats)``."""
    T, P, F = series.shape
    flat = series.values.reshape(T, P * F)
    if stats is None:
        stats = NormStats.fit(flat, scheme, F, feature_range)
    scaled = stats.transform(flat).reshape(T, P, F)
    return series.with_values(scaled, series.observed, normalized=stats.scheme != "none"), stats


def denormalize(pred, stats):
    return stats.denormalize(np.asarray(pred, dtype=np.float64))


# --- synthetic network ---------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    """Knobs of the synthetic corridor.

    Speeds sit at ``base_speed`` minus two daily peak-hour troughs minus
    congestion waves. A wave starts at a random location and moves to the
    next lower location index every ``wave_lag`` steps, its amplitude scaled
    by ``coupling`` per hop (``coupling=0`` keeps it local).
    """

    base_speed: float = 60.0
    daily_period: int = 288
    peak_depth: float = 15.0
    peak_width: float = 15.0
    peak_times: tuple = (0.33, 0.73)
    location_variation: float = 0.1
    congestion_waves: float = 4.0
    wave_amplitude: float = 25.0
    wave_duration: int = 36
    wave_onset: int = 6
    wave_lag: int = 8
    coupling: float = 0.95
    # roughly loop-detector scale measurement noise in mph
    noise_std: float = 4.0
    channels: tuple = ("speed",)

    def validate(self):
        if self.base_speed <= 0 or self.daily_period < 2:
            raise ConfigurationError("base_speed must be > 0 and daily_period >= 2")
        if self.noise_std < 0 or self.peak_depth < 0 or self.wave_amplitude < 0:
            raise ConfigurationError("noise_std, peak_depth and wave_amplitude must be >= 0")
        if self.congestion_waves < 0 or self.wave_duration < 1 or self.wave_lag < 0 or self.wave_onset < 1:
            raise ConfigurationError(
                "congestion_waves >= 0, wave_duration >= 1, wave_onset >= 1, wave_lag >= 0 required")
        if not 0.0 <= self.coupling <= 1.0:
            raise ConfigurationError(f"coupling must lie in [0, 1], got {self.coupling}")
        if not self.channels or self.channels[0] != "speed" or \
                any(c not in CHANNELS for c in self.channels) or len(set(self.channels)) != len(self.channels):
            raise ConfigurationError(f"channels must start with 'speed' and be drawn from {CHANNELS}")


def _wave_profile(duration, onset=2):
    # linear onset, plateau, gradual recovery; values in [0, 1]
    t = np.arange(duration, dtype=np.float64)
    onset = min(onset, duration)
    recover = max(1, duration // 3)
    prof = np.ones(duration)
    prof[:onset] = (t[:onset] + 1) / (onset + 1)
    tail = t >= duration - recover
    prof[tail] = (duration - t[tail]) / (recover + 1)
    return prof


def synth_generate(P, T, params=None, seed=0):
    """Seeded synthetic speed network of ``P`` locations and ``T`` steps."""
    params = params or SynthParams()
    params.validate()
    if P < 1 or T < 1:
        raise ConfigurationError(f"P and T must be >= 1, got P={P}, T={T}")
    rng = np.random.default_rng(seed)
    day = params.daily_period
    tod = (np.arange(T) % day) / day

    depth = params.peak_depth * (1 + params.location_variation * rng.uniform(-1, 1, P))
    width = params.peak_width / day
    dip = np.zeros(T)
    for centre in params.peak_times:
        d = np.abs(tod - centre)
        d = np.minimum(d, 1 - d)
        dip += np.exp(-0.5 * (d / width) ** 2)
    speed = params.base_speed - dip[:, None] * depth[None, :]

    waves = np.zeros((T, P))
    lag = params.wave_lag
    n_waves = rng.poisson(params.congestion_waves * T / day)
    span = lag * P + params.wave_duration
    for _ in range(n_waves):
        origin = int(rng.integers(P))
        start = int(rng.integers(-span, T))
        amp = params.wave_amplitude * rng.uniform(0.5, 1.0)
        dur = max(1, int(round(params.wave_duration * rng.uniform(0.6, 1.4))))
        prof = _wave_profile(dur, params.wave_onset)
        for hop in range(origin + 1):
            a = amp * params.coupling ** hop
            if hop > 0 and a < 0.5:
                break
            s = start + hop * lag
            lo, hi = max(s, 0), min(s + dur, T)
            if lo < hi:
                waves[lo:hi, origin - hop] += a * prof[lo - s:hi - s]
    speed = speed - waves
    if params.noise_std > 0:
        speed = speed + rng.normal(0.0, params.noise_std, (T, P))
    speed = np.maximum(speed, 0.0)

    chans = [speed]
    if len(params.channels) > 1:
        # Greenshields: density falls linearly with speed; flow = speed * density
        free = params.base_speed
        density = 120.0 * np.clip(1.0 - speed / (free * 1.05), 0.0, 1.0)
        for name in params.channels[1:]:
            chans.append(speed * density / 10.0 if name == "volume" else density / 1.5)
    values = np.stack(chans, axis=-1)
    return SpeedSeries(values, location_ids=[f"loc_{p}" for p in range(P)],
                       channels=list(params.channels), interval_minutes=24 * 60 / day)


def inject_missing(series, proportion, seed=0):
    """Hide exactly ``floor(proportion * T * P * F)`` uniformly chosen observed entries."""
    if not 0.0 <= proportion < 1.0:
        raise ConfigurationError(f"proportion must lie in [0, 1), got {proportion}")
    k = int(math.floor(proportion * series.values.size))
    obs_idx = np.flatnonzero(series.observed)
    if k > obs_idx.size:
        raise ConfigurationError(f"cannot hide {k} entries: only {obs_idx.size} are observed")
    observed = series.observed.copy()
    if k:
        hide = np.random.default_rng(seed).choice(obs_idx, size=k, replace=False)
        observed.reshape(-1)[hide] = False
    return series.with_values(series.values, observed)


# --- CSV -----------------------------------------------------------------


def save_csv(series, path):
    T, P, F = series.shape
    header = ["timestamp"]
    for loc in series.location_ids:
        if F == 1 and series.channels[0] == "speed":
            header.append(loc)
        else:
            header += [f"{loc}:{ch}" for ch in series.channels]
    stamps = series.stamps()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        flat = series.values.reshape(T, P * F)
        obs = series.observed.reshape(T, P * F)
        for t in range(T):
            w.writerow([stamps[t]] + [repr(float(v)) if o else "" for v, o in zip(flat[t], obs[t])])


def load_csv(path, interval_minutes=5.0):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file: header row is mandatory", 1)
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "timestamp":
        raise ParseError("first column must be 'timestamp'", 1)
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise ParseError(f"duplicate column header(s): {dup}", 1)
    if len(header) < 2:
        raise ParseError("no location columns", 1)

    locs, chans = [], {}
    for col in header[1:]:
        loc, _, ch = col.partition(":")
        if not loc:
            raise ParseError(f"empty location id in column {col!r}", 1)
        ch = ch or "speed"
        if loc not in chans:
            locs.append(loc)
            chans[loc] = []
        chans[loc].append(ch)
    channel_list = chans[locs[0]]
    for loc in locs:
        if chans[loc] != channel_list:
            raise ParseError(f"location {loc!r} has channels {chans[loc]}, expected {channel_list}", 1)
    expected_order = [f"{loc}:{ch}" for loc in locs for ch in channel_list]
    given = [c if ":" in c else c + ":speed" for c in header[1:]]
    if given != expected_order:
        raise ParseError("columns of one location must be adjacent and in a common channel order", 1)

    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if r]
    T, P, F = len(body), len(locs), len(channel_list)
    if T == 0:
        raise ParseError("no data rows", 2)
    values = np.full((T, P * F), np.nan)
    stamps = []
    for t, (line, row) in enumerate(body):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        stamps.append(row[0])
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "":
                continue
            try:
                val = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r} in column {header[j + 1]!r}", line) from None
            if not math.isfinite(val):
                raise ParseError(f"non-finite value {cell!r} in column {header[j + 1]!r}", line)
            values[t, j] = val
    return SpeedSeries(values.reshape(T, P, F), location_ids=locs, channels=channel_list,
                       interval_minutes=interval_minutes, timestamps=stamps)


def calendar_features(origins, n, steps_per_day):
    """Hour-of-day and day-of-week (both scaled to [0, 1)) for every window step."""
    t = origins[:, None] - n + np.arange(n)[None, :]
    hour = (t % steps_per_day) / steps_per_day
    dow = ((t // steps_per_day) % 7) / 7.0
    return np.stack([hour, dow], axis=-1)
