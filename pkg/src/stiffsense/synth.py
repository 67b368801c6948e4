"""Synthetic trial sets with known second-order parameters.

Sampling is hierarchical: each participant gets a standardized random effect
per parameter, shared across conditions with correlation
``condition_correlation``; the participant's condition mean is
``mean_c + between_sd_c * effect``. Trials scatter around the participant mean
with ``within_sd_c``. Every random draw comes from a stream keyed by
(master seed, participant or trial key), so output does not depend on the
order in which trials are produced.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError
from .msd import MsdCanonicalParams, step_response
from .trajectory import (
    CONDITIONS,
    DISTANCES_PX,
    GROUND_TRUTH_FILENAME,
    WIDTHS_PX,
    TrialMeta,
    TrialSet,
    Trajectory,
    write_trial_csv,
)

OMEGA_FLOOR = 0.5
ZETA_FLOOR = 0.05


@dataclass(frozen=True)
class ParamDistribution:
    mean: float
    between_sd: float
    within_sd: float


def _default_omega():
    return {"calm": ParamDistribution(12.9, 3.0, 1.5), "stressed": ParamDistribution(14.4, 3.0, 1.5)}


def _default_zeta():
    return {"calm": ParamDistribution(1.00, 0.2, 0.1), "stressed": ParamDistribution(0.97, 0.2, 0.1)}


@dataclass(frozen=True)
class SynthConfig:
    n_participants: int = 49
    repetitions: int = 5
    distances: tuple = DISTANCES_PX
    widths: tuple = WIDTHS_PX
    sample_rate_hz: float = 2000.0
    omega: dict = field(default_factory=_default_omega)
    zeta: dict = field(default_factory=_default_zeta)
    kp_mean: float = 1.0
    kp_sd: float = 0.05
    condition_correlation: float = 1.0
    # Multiplier of the stressed-minus-calm mean shift, per distance (default 1).
    separation_scale: dict = field(default_factory=dict)
    snr_db: Optional[float] = 25.0
    base_duration_ms: float = 150.0
    duration_per_doubling_ms: float = 90.0
    duration_jitter: float = 0.10
    start_x_px: float = 200.0
    seed: int = 0

    def __post_init__(self):
        def check(name, ok, msg):
            if not ok:
                raise ConfigError(name, msg)

        check("n_participants", isinstance(self.n_participants, int) and self.n_participants >= 1, "must be an integer >= 1")
        check("repetitions", isinstance(self.repetitions, int) and self.repetitions >= 1, "must be an integer >= 1")
        check("distances", len(self.distances) > 0 and set(self.distances) <= set(DISTANCES_PX),
              f"must be a non-empty subset of {DISTANCES_PX}")
        check("widths", len(self.widths) > 0 and set(self.widths) <= set(WIDTHS_PX),
              f"must be a non-empty subset of {WIDTHS_PX}")
        check("sample_rate_hz", self.sample_rate_hz > 0, "must be positive")
        for name in ("omega", "zeta"):
            dists = getattr(self, name)
            check(name, set(dists) == set(CONDITIONS), f"needs entries for {CONDITIONS}")
            for cond, d in dists.items():
                check(f"{name}.{cond}", d.mean > 0, "mean must be positive")
                check(f"{name}.{cond}", d.between_sd >= 0 and d.within_sd >= 0, "sds must be >= 0")
        check("kp_sd", self.kp_sd >= 0, "must be >= 0")
        check("condition_correlation", -1.0 <= self.condition_correlation <= 1.0, "must lie in [-1, 1]")
        check("snr_db", self.snr_db is None or math.isfinite(self.snr_db), "must be finite or null")
        check("base_duration_ms", self.base_duration_ms > 0, "must be positive")
        check("duration_per_doubling_ms", self.duration_per_doubling_ms >= 0, "must be >= 0")
        check("duration_jitter", 0 <= self.duration_jitter < 1, "must lie in [0, 1)")
        for d, s in self.separation_scale.items():
            check("separation_scale", int(d) in DISTANCES_PX and s >= 0, f"bad entry {d}: {s}")
        check("seed", isinstance(self.seed, int) and self.seed >= 0, "must be a non-negative integer")

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        name = None
        try:
            for name in ("omega", "zeta"):
                if name in d:
                    base = getattr(cls(), name)
                    merged = dict(base)
                    for cond, v in d[name].items():
                        merged[cond] = ParamDistribution(**v)
                    d[name] = merged
            for name in ("distances", "widths"):
                if name in d:
                    d[name] = tuple(int(v) for v in d[name])
            name = "separation_scale"
            if name in d:
                d["separation_scale"] = {int(k): float(v) for k, v in d["separation_scale"].items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(name, str(exc)) from exc
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["distances"] = list(self.distances)
        d["widths"] = list(self.widths)
        d["separation_scale"] = {str(k): v for k, v in sorted(self.separation_scale.items())}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def duration_ms(self, distance_px):
        return self.base_duration_ms + self.duration_per_doubling_ms * math.log2(distance_px / 64)


@dataclass(frozen=True)
class GroundTruth:
    params: dict  # trial key -> MsdCanonicalParams

    def __len__(self):
        return len(self.params)

    def __getitem__(self, key):
        return self.params[key]


def _rng(seed, *parts):
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([seed, *words]))


def _participant_effects(config, pid):
    """Standardized (omega, zeta, kp) effects per condition for one participant."""
    rng = _rng(config.seed, "participant", pid)
    shared = rng.standard_normal(3)
    own = rng.standard_normal((2, 3))
    r = config.condition_correlation
    mix = math.sqrt(max(0.0, 1.0 - r * r))
    return {cond: r * shared + mix * own[i] for i, cond in enumerate(CONDITIONS)}


def _condition_mean(config, name, cond, distance):
    dists = getattr(config, name)
    calm = dists["calm"].mean
    if cond == "calm":
        return calm
    scale = config.separation_scale.get(distance, 1.0)
    return calm + scale * (dists["stressed"].mean - calm)


def generate(config: SynthConfig):
    """Draw a trial set and its ground truth. Deterministic in ``config``."""
    trials = []
    truth = {}
    fs = config.sample_rate_hz
    for p in range(config.n_participants):
        pid = f"P{p + 1:03d}"
        effects = _participant_effects(config, pid)
        for cond in CONDITIONS:
            e = effects[cond]
            for distance in config.distances:
                w_mu = _condition_mean(config, "omega", cond, distance) + config.omega[cond].between_sd * e[0]
                z_mu = _condition_mean(config, "zeta", cond, distance) + config.zeta[cond].between_sd * e[1]
                k_mu = config.kp_mean + config.kp_sd * e[2]
                for width in config.widths:
                    for rep in range(config.repetitions):
                        meta = TrialMeta(pid, distance, width, cond, rep, config.start_x_px,
                                         config.start_x_px + distance)
                        rng = _rng(config.seed, "trial", meta.key)
                        dw, dz, jitter = rng.standard_normal(3)
                        params = MsdCanonicalParams(
                            kp=float(k_mu),
                            omega=float(max(OMEGA_FLOOR, w_mu + config.omega[cond].within_sd * dw)),
                            zeta=float(max(ZETA_FLOOR, z_mu + config.zeta[cond].within_sd * dz)),
                        )
                        dur = config.duration_ms(distance) * (1.0 + config.duration_jitter * jitter)
                        n = max(8, int(round(dur * 1e-3 * fs)))
                        t = np.arange(n) / fs
                        clean = step_response(params, meta.start_x_px, meta.target_x_px, t)
                        x = clean + noise_for(clean, config.snr_db, rng)
                        trials.append((meta, Trajectory(x, fs)))
                        truth[meta.key] = params
    ordered = dict(sorted(truth.items()))
    return TrialSet(tuple(trials), provenance="synthetic"), GroundTruth(ordered)


def noise_for(clean, snr_db, rng):
    """White Gaussian noise at ``snr_db`` relative to the mean-removed power of ``clean``."""
    if snr_db is None:
        return np.zeros_like(clean)
    power = float(np.var(clean))
    return rng.normal(0.0, math.sqrt(power / 10 ** (snr_db / 10.0)), clean.size)


def realized_snr_db(clean, noisy):
    clean = np.asarray(clean, dtype=float)
    noise = np.asarray(noisy, dtype=float) - clean
    return 10.0 * math.log10(np.var(clean) / np.mean(noise**2))


def export(trial_set: TrialSet, truth: GroundTruth, directory) -> Path:
    """One trial CSV per trial plus ``ground_truth.csv`` keyed by trial."""
    root = Path(directory)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {root}: {exc}") from exc
    for meta, traj in trial_set:
        write_trial_csv(root / f"{meta.key}.csv", meta, traj)
    write_ground_truth(root / GROUND_TRUTH_FILENAME, truth)
    return root


def write_ground_truth(path, truth: GroundTruth):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial_key", "kp", "omega", "zeta"])
            for key in sorted(truth.params):
                p = truth.params[key]
                w.writerow([key, repr(float(p.kp)), repr(float(p.omega)), repr(float(p.zeta))])
    except OSError as exc:
        raise OSError(f"cannot write ground truth {path}: {exc}") from exc


def read_ground_truth(path) -> GroundTruth:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return GroundTruth({
        r["trial_key"]: MsdCanonicalParams(float(r["kp"]), float(r["omega"]), float(r["zeta"]))
        for r in rows
    })
