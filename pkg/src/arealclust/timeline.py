"""Harmonic design vectors, regime schedules and change-point supports.

Time indices are 1-based in every public signature and external format.
A schedule divides ``{1, ..., T}`` into ``M`` consecutive intervals at
realized change-points ``tbar_1 < ... < tbar_{M-1}``; interval ``m`` carries
the regime label ``pattern[m]``.  Each interior change-point moves inside a
window of ``2 * n_lambda + 1`` ticks centred at ``centers[m]``; the windows
must be pairwise disjoint so every admissible choice still partitions the
time set.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = ["HarmonicDesign", "RegimeSchedule"]


@dataclass(frozen=True)
class HarmonicDesign:
    """Interleaved (cos, sin) design at a fixed set of Fourier frequencies.

    Frequency index ``j`` contributes the pair ``cos(2*pi*j*t/T)``,
    ``sin(2*pi*j*t/T)``.  ``n_times`` must be even (odd raw series are
    padded with one trailing missing observation before they get here) and
    there is no intercept column.
    """

    n_times: int
    frequency_indices: tuple

    def __post_init__(self):
        T = self.n_times
        if T < 2 or T % 2 != 0:
            raise ConfigError(f"design length must be even and >= 2, got {T}")
        freqs = tuple(int(j) for j in self.frequency_indices)
        if len(freqs) == 0:
            raise ConfigError("at least one frequency index is required")
        if len(set(freqs)) != len(freqs):
            raise ConfigError("frequency indices must be distinct")
        if min(freqs) < 1 or max(freqs) > T // 2:
            raise ConfigError(f"frequency indices must lie in [1, {T // 2}]")
        object.__setattr__(self, "frequency_indices", freqs)

    @classmethod
    def from_periods(cls, n_times, periods):
        """Build a design from periods (in time ticks) instead of indices."""
        freqs = []
        for p in periods:
            if n_times % p != 0:
                raise ConfigError(f"period {p} does not divide the series length {n_times}")
            freqs.append(n_times // p)
        return cls(n_times, tuple(freqs))

    @property
    def n_features(self):
        return 2 * len(self.frequency_indices)

    def design_vector(self, t):
        """Design row at 1-based time ``t``."""
        if not 1 <= t <= self.n_times:
            raise ConfigError(f"time {t} outside [1, {self.n_times}]")
        ang = 2.0 * np.pi * np.asarray(self.frequency_indices) * t / self.n_times
        out = np.empty(self.n_features)
        out[0::2] = np.cos(ang)
        out[1::2] = np.sin(ang)
        return out

    def design_matrix(self):
        """Full ``(T, K)`` design, rows indexed by t = 1..T."""
        t = np.arange(1, self.n_times + 1)[:, None]
        ang = 2.0 * np.pi * np.asarray(self.frequency_indices)[None, :] * t / self.n_times
        out = np.empty((self.n_times, self.n_features))
        out[:, 0::2] = np.cos(ang)
        out[:, 1::2] = np.sin(ang)
        return out


@dataclass(frozen=True)
class RegimeSchedule:
    """Deterministic map from change-points to per-time regime labels.

    Parameters
    ----------
    n_times : int
        Series length T.
    pattern : tuple of int
        Regime label (1-based) of each of the M intervals; every label in
        ``1..n_regimes`` must occur.
    centers : tuple of int
        Change-point window centres ``lambda_1 < ... < lambda_{M-1}``.
    n_lambda : int
        Window half-width; the support of change-point ``m`` is
        ``{centers[m] - n_lambda, ..., centers[m] + n_lambda}``.
    """

    n_times: int
    pattern: tuple = (1,)
    centers: tuple = ()
    n_lambda: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pattern", tuple(int(p) for p in self.pattern))
        object.__setattr__(self, "centers", tuple(int(c) for c in self.centers))
        T = self.n_times
        M = len(self.pattern)
        if T < 1:
            raise ConfigError("n_times must be positive")
        if M < 1:
            raise ConfigError("pattern must name at least one interval")
        if len(self.centers) != M - 1:
            raise ConfigError(
                f"{M} intervals need {M - 1} change-point centers, got {len(self.centers)}"
            )
        labels = set(self.pattern)
        if labels != set(range(1, len(labels) + 1)):
            raise ConfigError("pattern labels must be 1..n_regimes with every regime present")
        if self.n_lambda < 0:
            raise ConfigError("n_lambda must be nonnegative")
        lo = [c - self.n_lambda for c in self.centers]
        hi = [c + self.n_lambda for c in self.centers]
        for m in range(M - 1):
            if lo[m] < 2 or hi[m] > T - 1:
                raise ConfigError(
                    f"support of change-point {m + 1} leaves the interior of [2, {T - 1}]"
                )
            if m + 1 < M - 1 and hi[m] >= lo[m + 1]:
                raise ConfigError(
                    f"supports of change-points {m + 1} and {m + 2} overlap"
                )

    @property
    def n_intervals(self):
        return len(self.pattern)

    @property
    def n_regimes(self):
        return max(self.pattern)

    def default_tbar(self):
        """Full change-point vector (1, centers..., T)."""
        return np.array([1, *self.centers, self.n_times], dtype=np.int64)

    def changepoint_support(self, m):
        """Candidate values of the m-th interior change-point (m = 1..M-1)."""
        if not 1 <= m <= self.n_intervals - 1:
            raise ConfigError(f"change-point index {m} outside [1, {self.n_intervals - 1}]")
        c = self.centers[m - 1]
        return np.arange(c - self.n_lambda, c + self.n_lambda + 1, dtype=np.int64)

    def validate_tbar(self, tbar):
        tbar = np.asarray(tbar, dtype=np.int64)
        if tbar.shape != (self.n_intervals + 1,):
            raise ConfigError("tbar must have one entry per interval boundary")
        if tbar[0] != 1 or tbar[-1] != self.n_times:
            raise ConfigError("tbar must start at 1 and end at n_times")
        for m in range(1, self.n_intervals):
            support = self.changepoint_support(m)
            if tbar[m] < support[0] or tbar[m] > support[-1]:
                raise ConfigError(f"tbar[{m}] = {tbar[m]} outside its support")
        return tbar

    def regime_of(self, t, tbar=None):
        """1-based regime label active at time ``t``."""
        if not 1 <= t <= self.n_times:
            raise ConfigError(f"time {t} outside [1, {self.n_times}]")
        tbar = self.default_tbar() if tbar is None else np.asarray(tbar)
        m = int(np.searchsorted(tbar[1:], t, side="left"))
        return self.pattern[m]

    def regime_indices(self, tbar=None):
        """0-based regime index of every time point, as a ``(T,)`` array."""
        tbar = self.default_tbar() if tbar is None else np.asarray(tbar)
        bounds = tbar[1:]
        t = np.arange(1, self.n_times + 1)
        interval = np.searchsorted(bounds, t, side="left")
        pattern = np.asarray(self.pattern, dtype=np.int64) - 1
        return pattern[interval]

    def to_json_dict(self):
        return {
            "T": self.n_times,
            "n_R": self.n_regimes,
            "n_lambda": self.n_lambda,
            "centers": list(self.centers),
            "pattern": list(self.pattern),
        }

    @classmethod
    def from_json_dict(cls, d):
        try:
            return cls(
                n_times=int(d["T"]),
                pattern=tuple(d.get("pattern", (1,))),
                centers=tuple(d.get("centers", ())),
                n_lambda=int(d.get("n_lambda", 0)),
            )
        except KeyError as exc:
            raise ConfigError(f"schedule is missing required key {exc}") from exc
