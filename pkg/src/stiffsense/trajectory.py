"""Trajectories, trial metadata, trial-file IO and preprocessing.

Only horizontal (x-axis) cursor positions are modelled. A trial is one rapid
point-and-click movement from a start bar to a target bar, sampled uniformly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from scipy import signal as sps
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import (
    DomainError,
    DuplicateTrialError,
    EmptyTrialSetError,
    TrialFormatError,
)

DISTANCES_PX = (64, 128, 256, 512, 1024)
WIDTHS_PX = (8, 16, 32, 64)
CONDITIONS = ("calm", "stressed")
MIN_SAMPLES = 8

# End-point window per target distance, in milliseconds.
WINDOW_CUTOFF_MS = {64: 100.0, 128: 125.0, 256: 150.0, 512: 350.0, 1024: 500.0}

GROUND_TRUTH_FILENAME = "ground_truth.csv"

_HEADER_FIELDS = (
    "participant",
    "distance_px",
    "width_px",
    "condition",
    "repetition",
    "sample_rate_hz",
    "start_x_px",
    "target_x_px",
)


class Role(str, Enum):
    ACTUAL = "actual"
    SIMULATED = "simulated"
    TARGET = "target"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled 1-D cursor position signal (pixels).

    The sample buffer is copied on construction and made read-only.
    """

    samples: np.ndarray
    sample_rate_hz: float
    role: Role = Role.ACTUAL

    def __post_init__(self):
        x = np.array(self.samples, dtype=float, copy=True).ravel()
        if x.size < MIN_SAMPLES:
            raise DomainError(
                f"trajectory needs at least {MIN_SAMPLES} samples, got {x.size}"
            )
        if not np.all(np.isfinite(x)):
            raise DomainError("trajectory samples must be finite")
        fs = float(self.sample_rate_hz)
        if not (math.isfinite(fs) and fs > 0):
            raise DomainError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", fs)
        object.__setattr__(self, "role", Role(self.role))

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.role == other.role
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate_hz

    def with_samples(self, samples, role=None) -> "Trajectory":
        return Trajectory(samples, self.sample_rate_hz, self.role if role is None else role)


@dataclass(frozen=True)
class TrialMeta:
    participant_id: str
    distance_px: int
    width_px: int
    condition: str
    repetition: int
    start_x_px: float
    target_x_px: float

    def __post_init__(self):
        if self.distance_px not in DISTANCES_PX:
            raise DomainError(f"distance_px must be one of {DISTANCES_PX}, got {self.distance_px}")
        if self.width_px not in WIDTHS_PX:
            raise DomainError(f"width_px must be one of {WIDTHS_PX}, got {self.width_px}")
        if self.condition not in CONDITIONS:
            raise DomainError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if int(self.repetition) != self.repetition or self.repetition < 0:
            raise DomainError(f"repetition must be a non-negative integer, got {self.repetition}")
        if not str(self.participant_id):
            raise DomainError("participant_id must be non-empty")
        span = abs(self.target_x_px - self.start_x_px)
        if abs(span - self.distance_px) > 1.0:
            raise DomainError(
                f"|target_x_px - start_x_px| = {span} does not match distance_px={self.distance_px}"
            )

    @property
    def key(self) -> str:
        return trial_key(
            self.participant_id, self.condition, self.distance_px, self.width_px, self.repetition
        )


def trial_key(participant_id, condition, distance_px, width_px, repetition) -> str:
    return f"{participant_id}_{condition}_d{distance_px}_w{width_px}_r{repetition}"


@dataclass(frozen=True)
class TrialSet:
    """Keyed collection of (meta, trajectory) pairs, kept sorted by trial key."""

    trials: tuple = ()
    provenance: str = "ingested"

    def __post_init__(self):
        if self.provenance not in ("ingested", "synthetic"):
            raise DomainError(f"unknown provenance {self.provenance!r}")
        pairs = sorted(self.trials, key=lambda p: p[0].key)
        seen = set()
        for meta, _ in pairs:
            if meta.key in seen:
                raise DuplicateTrialError(f"duplicate trial key {meta.key}")
            seen.add(meta.key)
        object.__setattr__(self, "trials", tuple(pairs))

    def __len__(self):
        return len(self.trials)

    def __iter__(self) -> Iterator[tuple]:
        return iter(self.trials)

    def keys(self) -> list:
        return [m.key for m, _ in self.trials]

    def get(self, key):
        for meta, traj in self.trials:
            if meta.key == key:
                return meta, traj
        raise KeyError(key)

    def same_content(self, other: "TrialSet") -> bool:
        """Compare trials field for field, ignoring provenance."""
        if len(self) != len(other):
            return False
        return all(
            m1 == m2 and t1 == t2 for (m1, t1), (m2, t2) in zip(self.trials, other.trials)
        )


# --------------------------------------------------------------------------
# trial CSV format


def write_trial_csv(path, meta: TrialMeta, traj: Trajectory) -> Path:
    path = Path(path)
    lines = [
        f"# participant={meta.participant_id}",
        f"# distance_px={meta.distance_px}",
        f"# width_px={meta.width_px}",
        f"# condition={meta.condition}",
        f"# repetition={meta.repetition}",
        f"# sample_rate_hz={traj.sample_rate_hz!r}",
        f"# start_x_px={float(meta.start_x_px)!r}",
        f"# target_x_px={float(meta.target_x_px)!r}",
        "x_px",
    ]
    lines.extend(repr(float(v)) for v in traj.samples)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trial file {path}: {exc}") from exc
    return path


def read_trial_csv(path) -> tuple:
    """Parse one trial file into ``(TrialMeta, Trajectory)``."""
    path = Path(path)
    header = {}
    samples = []
    seen_column = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r").strip()
            if not line:
                continue
            if line.startswith("#"):
                if seen_column:
                    raise TrialFormatError(path, "header line after data column", lineno)
                body = line[1:].strip()
                if "=" not in body:
                    raise TrialFormatError(path, f"malformed header line {line!r}", lineno)
                name, value = (s.strip() for s in body.split("=", 1))
                header[name] = (value, lineno)
                continue
            if not seen_column:
                if line != "x_px":
                    raise TrialFormatError(path, f"expected column header 'x_px', got {line!r}", lineno)
                seen_column = True
                continue
            try:
                value = float(line)
            except ValueError:
                raise TrialFormatError(path, f"malformed sample {line!r}", lineno) from None
            if not math.isfinite(value):
                raise TrialFormatError(path, f"non-finite sample {line!r}", lineno)
            samples.append(value)

    for name in _HEADER_FIELDS:
        if name not in header:
            raise TrialFormatError(path, f"missing header field '{name}'")
    if not seen_column:
        raise TrialFormatError(path, "missing 'x_px' column")

    def parse(name, kind):
        value, lineno = header[name]
        try:
            return kind(value)
        except ValueError:
            raise TrialFormatError(path, f"bad value for {name}: {value!r}", lineno) from None

    try:
        meta = TrialMeta(
            participant_id=header["participant"][0],
            distance_px=parse("distance_px", int),
            width_px=parse("width_px", int),
            condition=header["condition"][0],
            repetition=parse("repetition", int),
            start_x_px=parse("start_x_px", float),
            target_x_px=parse("target_x_px", float),
        )
        traj = Trajectory(np.asarray(samples), parse("sample_rate_hz", float))
    except DomainError as exc:
        raise TrialFormatError(path, str(exc)) from exc
    return meta, traj


def load_trials(path) -> TrialSet:
    """Load every trial CSV in a directory.

    Raises
    ------
    EmptyTrialSetError
        The directory contains no trial files.
    TrialFormatError
        A file is malformed; the message carries the path and line number.
    DuplicateTrialError
        Two files describe the same trial key. The whole set is rejected.
    """
    root = Path(path)
    if not root.is_dir():
        raise EmptyTrialSetError(f"{root} is not a directory")
    files = sorted(
        p for p in root.iterdir() if p.suffix == ".csv" and p.name != GROUND_TRUTH_FILENAME
    )
    if not files:
        raise EmptyTrialSetError(f"no trial files in {root}")
    return TrialSet(tuple(read_trial_csv(p) for p in files), provenance="ingested")


# --------------------------------------------------------------------------
# preprocessing

# Relative peak-to-peak below which a signal counts as constant. Zero-phase
# filtering leaves rounding ripple of ~1e-15 relative on a constant input.
CONSTANT_RTOL = 1e-10


def is_effectively_constant(x) -> bool:
    x = np.asarray(x, dtype=float)
    span = float(np.ptp(x))
    return span == 0.0 or span <= CONSTANT_RTOL * float(np.max(np.abs(x)))


def smooth(t: Trajectory, cutoff_hz: float = 10.0, order: int = 2) -> Trajectory:
    """Zero-phase Butterworth low-pass (forward-backward).

    Ends are mirror-padded over three periods of the cutoff frequency (capped
    at the signal length) so the filter's start-up transient settles before
    reaching real samples.
    """
    nyquist = t.sample_rate_hz / 2.0
    if not (0 < cutoff_hz < nyquist):
        raise DomainError(f"cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz")
    sos = sps.butter(order, cutoff_hz, btype="low", fs=t.sample_rate_hz, output="sos")
    padlen = min(len(t) - 1, int(round(3 * t.sample_rate_hz / cutoff_hz)))
    y = sps.sosfiltfilt(sos, t.samples, padtype="even", padlen=padlen)
    return t.with_samples(y)


def window_cutoff_samples(distance_px: int, sample_rate_hz: float) -> int:
    return int(round(WINDOW_CUTOFF_MS[distance_px] * 1e-3 * sample_rate_hz))


def truncate_window(t: Trajectory, meta: TrialMeta) -> Trajectory:
    """Keep the prefix up to the per-distance cutoff time.

    Trials already shorter than the cutoff come back unchanged with a
    ``UserWarning``.
    """
    n = window_cutoff_samples(meta.distance_px, t.sample_rate_hz)
    if len(t) < n:
        warnings.warn(
            f"trial {meta.key} lasts {1e3 * t.duration_s:.1f} ms, shorter than the "
            f"{WINDOW_CUTOFF_MS[meta.distance_px]:.0f} ms window; kept unchanged",
            UserWarning,
            stacklevel=2,
        )
        return t
    if len(t) == n:
        return t
    return t.with_samples(t.samples[:n])


class ButterworthSmoother(TransformerMixin, BaseEstimator):
    """Stateless transformer applying :func:`smooth` to each signal.

    ``X`` is a sequence of 1-D arrays (possibly ragged) or a 2-D array with
    one signal per row.
    """

    def __init__(self, cutoff_hz=10.0, sample_rate_hz=2000.0, order=2):
        self.cutoff_hz = cutoff_hz
        self.sample_rate_hz = sample_rate_hz
        self.order = order

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        out = [
            smooth(Trajectory(x, self.sample_rate_hz), self.cutoff_hz, self.order).samples
            for x in _iter_signals(X)
        ]
        if out and len({o.size for o in out}) == 1:
            return np.vstack(out)
        return out


def _iter_signals(X) -> Iterable[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return list(X)
    if isinstance(X, Trajectory):
        return [X.samples]
    return [x.samples if isinstance(x, Trajectory) else np.asarray(x, dtype=float) for x in X]
