"""Pipeline stages: synth -> estimate -> correlate / classify -> report.

Every stage reads and writes plain CSV/JSON artifacts inside ``out_dir`` so a
stage can be re-run without repeating earlier ones. Output is a pure function
of the configuration (including the master seed) and the input files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from . import __version__
from .classify import VARIANTS, ExperimentConfig, derive_seed, run_experiment, variant_name
from .exceptions import ConfigError, InsufficientDataError, StiffsenseError
from .lpc import PAIR_SELECTIONS, DampingEstimate, estimate_lpc
from .msd import FitOptions, MsdCanonicalParams, MsdFit, fit_pem, is_outlier
from .stats import DEFAULT_THRESHOLDS, condition_summary, pair_estimates, threshold_sweep
from .synth import SynthConfig, export, generate
from .trajectory import GROUND_TRUTH_FILENAME, TrialMeta, load_trials, smooth

log = logging.getLogger(__name__)

ESTIMATES_CSV = "estimates.csv"
ESTIMATES_JSON = "estimates.json"
CORRELATION_CSV = "correlation_curve.csv"
CORRELATION_JSON = "correlation.json"
SUMMARY_CSV = "condition_summary.csv"
ACCURACY_JSON = "accuracy.json"
ACCURACY_CELLS_CSV = "accuracy_cells.csv"
ACCURACY_TABLE_CSV = "accuracy_table.csv"
REPORT_JSON = "report.json"
RETENTION_PLOT_CSV = "plot_correlation_retention.csv"


@dataclass
class PipelineConfig:
    out_dir: str = "stiffsense_out"
    trials_dir: Optional[str] = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    smoothing_cutoff_hz: float = 10.0
    lpc_order: int = 4
    lpc_signal: str = "smoothed"
    msd_signal: str = "smoothed"
    pair_selection: str = "dominant"
    fit: FitOptions = field(default_factory=FitOptions)
    gof_thresholds: tuple = DEFAULT_THRESHOLDS
    classifier: ExperimentConfig = field(default_factory=ExperimentConfig)
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if not self.smoothing_cutoff_hz > 0:
            raise ConfigError("smoothing_cutoff_hz", "must be positive")
        if not (isinstance(self.lpc_order, int) and self.lpc_order >= 1):
            raise ConfigError("lpc_order", "must be an integer >= 1")
        if self.lpc_signal not in ("smoothed", "raw"):
            raise ConfigError("lpc_signal", "must be 'smoothed' or 'raw'")
        if self.msd_signal not in ("smoothed", "raw"):
            raise ConfigError("msd_signal", "must be 'smoothed' or 'raw'")
        if self.pair_selection not in PAIR_SELECTIONS:
            raise ConfigError("pair_selection", f"must be one of {PAIR_SELECTIONS}")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            raise ConfigError("seed", "must be a non-negative integer")
        if not (isinstance(self.jobs, int) and self.jobs != 0):
            raise ConfigError("jobs", "must be a non-zero integer")
        if any(not (0 <= t <= 100) for t in self.gof_thresholds):
            raise ConfigError("gof_thresholds", "thresholds must lie in [0, 100]")

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def trials_path(self) -> Path:
        return Path(self.trials_dir) if self.trials_dir else self.out / "trials"

    def synth_config(self) -> SynthConfig:
        return replace(self.synth, seed=self.seed)

    def experiment_config(self) -> ExperimentConfig:
        return replace(self.classifier, seed=derive_seed(self.seed, "classify"), jobs=self.jobs)

    def estimation_settings(self) -> dict:
        return {
            "smoothing_cutoff_hz": self.smoothing_cutoff_hz,
            "lpc_order": self.lpc_order,
            "lpc_signal": self.lpc_signal,
            "msd_signal": self.msd_signal,
            "pair_selection": self.pair_selection,
            "fit": self.fit.to_dict(),
        }

    def to_dict(self) -> dict:
        return {
            "out_dir": self.out_dir,
            "trials_dir": self.trials_dir,
            "synth": self.synth.to_dict(),
            **self.estimation_settings(),
            "gof_thresholds": list(self.gof_thresholds),
            "classifier": {k: v for k, v in self.classifier.to_dict().items() if k not in ("seed", "jobs")},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d) -> "PipelineConfig":
        d = dict(d or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        try:
            if "synth" in d:
                d["synth"] = SynthConfig.from_dict(d["synth"])
            if "fit" in d:
                d["fit"] = FitOptions.from_dict(d["fit"])
            if "classifier" in d:
                d["classifier"] = ExperimentConfig.from_dict(d["classifier"])
            if "gof_thresholds" in d:
                d["gof_thresholds"] = tuple(float(t) for t in d["gof_thresholds"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("config", str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from exc


# --------------------------------------------------------------------------
# artifact helpers


def _json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if hasattr(obj, "item"):
        return _json_safe(obj.item())
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_json_safe(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise InsufficientDataError(f"missing artifact {path} (run '{stage}' first)")
    return path


# --------------------------------------------------------------------------
# estimate store


@dataclass
class StoreEntry:
    meta: TrialMeta
    lpc: Optional[DampingEstimate] = None
    lpc_error: str = ""
    msd: Optional[MsdFit] = None
    msd_error: str = ""


_STORE_COLUMNS = (
    "trial_key", "participant", "condition", "distance_px", "width_px", "repetition",
    "start_x_px", "target_x_px",
    "lpc_omega", "lpc_zeta", "lpc_error",
    "msd_kp", "msd_omega", "msd_zeta", "msd_gof_percent", "msd_residual_ss",
    "msd_converged", "msd_at_bound", "msd_iterations", "msd_start_index", "msd_error",
)


class EstimateStore:
    """Per-trial LPC and MSD results (or failure reasons), keyed by trial."""

    def __init__(self, entries=()):
        self.entries = {e.meta.key: e for e in sorted(entries, key=lambda e: e.meta.key)}

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries.values())

    def counts(self) -> dict:
        n = len(self.entries)
        lpc_fail = sum(1 for e in self if e.lpc is None)
        msd_fail = sum(1 for e in self if e.msd is None)
        outliers = sum(1 for e in self if e.msd is not None and is_outlier(e.msd))
        return {
            "trials": n,
            "lpc_success": n - lpc_fail,
            "lpc_failures": lpc_fail,
            "msd_success": n - msd_fail,
            "msd_failures": msd_fail,
            "msd_outliers": outliers,
            "msd_not_converged": sum(1 for e in self if e.msd is not None and not e.msd.converged),
        }

    def failure_reasons(self) -> dict:
        out = {"LPC": {}, "MSD": {}}
        for e in self:
            if e.lpc is None:
                out["LPC"][e.lpc_error] = out["LPC"].get(e.lpc_error, 0) + 1
            if e.msd is None:
                out["MSD"][e.msd_error] = out["MSD"].get(e.msd_error, 0) + 1
        return out

    def estimates(self) -> dict:
        return {k: (e.lpc, e.msd) for k, e in self.entries.items()}

    def metas(self) -> list:
        return [e.meta for e in self]

    def write_csv(self, path):
        rows = []
        for e in self:
            m = e.meta
            row = [m.key, m.participant_id, m.condition, m.distance_px, m.width_px, m.repetition,
                   float(m.start_x_px), float(m.target_x_px)]
            row += [e.lpc.omega, e.lpc.zeta, ""] if e.lpc else [None, None, e.lpc_error]
            if e.msd:
                f = e.msd
                row += [f.params.kp, f.params.omega, f.params.zeta, f.gof_percent, f.residual_ss,
                        int(f.converged), int(f.at_bound), f.iterations, f.start_index, ""]
            else:
                row += [None] * 9 + [e.msd_error]
            rows.append(row)
        write_csv(path, _STORE_COLUMNS, rows)

    @classmethod
    def read_csv(cls, path) -> "EstimateStore":
        entries = []
        with open(path, encoding="utf-8", newline="") as fh:
            for r in csv.DictReader(fh):
                meta = TrialMeta(r["participant"], int(r["distance_px"]), int(r["width_px"]),
                                 r["condition"], int(r["repetition"]), float(r["start_x_px"]),
                                 float(r["target_x_px"]))
                e = StoreEntry(meta)
                if r["lpc_omega"]:
                    e.lpc = DampingEstimate(float(r["lpc_omega"]), float(r["lpc_zeta"]), "LPC")
                else:
                    e.lpc_error = r["lpc_error"]
                if r["msd_omega"]:
                    e.msd = MsdFit(
                        params=MsdCanonicalParams(float(r["msd_kp"]), float(r["msd_omega"]), float(r["msd_zeta"])),
                        gof_percent=float(r["msd_gof_percent"]),
                        residual_ss=float(r["msd_residual_ss"]),
                        converged=bool(int(r["msd_converged"])),
                        iterations=int(r["msd_iterations"]),
                        at_bound=bool(int(r["msd_at_bound"])),
                        start_index=int(r["msd_start_index"]),
                    )
                else:
                    e.msd_error = r["msd_error"]
                entries.append(e)
        return cls(entries)


def estimate_trial(meta, traj, settings: dict) -> StoreEntry:
    """Run both estimators on one trial; failures are recorded, not raised."""
    entry = StoreEntry(meta)
    try:
        smoothed = smooth(traj, settings["smoothing_cutoff_hz"])
    except StiffsenseError as exc:
        reason = f"{type(exc).__name__}: {exc}"
        entry.lpc_error = entry.msd_error = reason
        return entry
    lpc_input = smoothed if settings["lpc_signal"] == "smoothed" else traj
    try:
        entry.lpc = estimate_lpc(lpc_input, settings["lpc_order"], settings["pair_selection"])
    except (StiffsenseError, ArithmeticError) as exc:
        entry.lpc_error = type(exc).__name__
    try:
        msd_input = smoothed if settings["msd_signal"] == "smoothed" else traj
        entry.msd = fit_pem(msd_input, meta, FitOptions.from_dict(settings["fit"]))
    except (StiffsenseError, ArithmeticError) as exc:
        entry.msd_error = type(exc).__name__
    return entry


def _estimate_chunk(chunk, settings):
    return [estimate_trial(m, t, settings) for m, t in chunk]


def _fingerprint(config: PipelineConfig, trials_dir: Path) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(config.estimation_settings(), sort_keys=True).encode())
    for p in sorted(trials_dir.glob("*.csv")):
        if p.name == GROUND_TRUTH_FILENAME:
            continue
        h.update(p.name.encode())
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


# --------------------------------------------------------------------------
# stages


def run_synth(config: PipelineConfig) -> int:
    trial_set, truth = generate(config.synth_config())
    export(trial_set, truth, config.trials_path)
    log.info("wrote %d trials to %s", len(trial_set), config.trials_path)
    return len(trial_set)


def run_estimate(config: PipelineConfig, force: bool = False) -> EstimateStore:
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    trials = load_trials(config.trials_path)
    fingerprint = _fingerprint(config, config.trials_path)
    meta_path, csv_path = out / ESTIMATES_JSON, out / ESTIMATES_CSV
    if not force and meta_path.exists() and csv_path.exists():
        if read_json(meta_path).get("fingerprint") == fingerprint:
            log.info("estimate store up to date; skipping refit")
            return EstimateStore.read_csv(csv_path)

    settings = config.estimation_settings()
    pairs = list(trials)
    if config.jobs == 1:
        entries = _estimate_chunk(pairs, settings)
    else:
        from joblib import Parallel, delayed

        size = max(1, len(pairs) // (8 * max(1, abs(config.jobs))))
        chunks = [pairs[i : i + size] for i in range(0, len(pairs), size)]
        entries = [e for part in Parallel(n_jobs=config.jobs)(
            delayed(_estimate_chunk)(c, settings) for c in chunks) for e in part]
    store = EstimateStore(entries)
    counts = store.counts()
    if counts["trials"] != len(trials):
        raise StiffsenseError("trial count not conserved through estimation")
    store.write_csv(csv_path)
    write_json(meta_path, {
        "fingerprint": fingerprint,
        "settings": settings,
        "counts": counts,
        "failure_reasons": store.failure_reasons(),
        "notes": [
            "LPC omega is in z-plane units (|Im r|); MSD omega is in rad/s.",
            "LPC input is the mean-removed " + config.lpc_signal + " signal.",
            "MSD input is the " + config.msd_signal + " signal.",
        ],
    })
    return store


def _load_store(config) -> EstimateStore:
    return EstimateStore.read_csv(_require(config.out / ESTIMATES_CSV, "estimate"))


def run_correlate(config: PipelineConfig):
    store = _load_store(config)
    rows = [(e.meta.key, e.lpc, e.msd) for e in store]
    pairs = pair_estimates(rows)
    if len(pairs) < 3:
        raise InsufficientDataError(
            f"only {len(pairs)} jointly successful non-outlier rows of {len(store)} trials (need 3)"
        )
    curve = threshold_sweep(pairs, config.gof_thresholds)
    records = []
    for e in store:
        if e.lpc is not None:
            records.append((e.meta.participant_id, e.meta.condition, e.lpc))
        if e.msd is not None and not is_outlier(e.msd):
            records.append((e.meta.participant_id, e.meta.condition, e.msd.to_estimate()))
    summary = condition_summary(records)

    out = config.out
    header, curve_rows = curve.to_rows()
    write_csv(out / CORRELATION_CSV, header, curve_rows)
    write_csv(
        out / SUMMARY_CSV,
        ("method", "parameter", "condition", "mean", "se", "n_participants", "t", "df", "p"),
        [
            (r["method"], r["parameter"], r["condition"], r["mean"], r["se"], r["n_participants"],
             summary.test_for(r["method"], r["parameter"])["t"],
             summary.test_for(r["method"], r["parameter"])["df"],
             summary.test_for(r["method"], r["parameter"])["p"])
            for r in summary.rows
        ],
    )
    write_json(out / CORRELATION_JSON, {
        "curve": curve.to_dict(),
        "summary": summary.to_dict(),
        "paired_rows": len(pairs),
        "trials": len(store),
        "outlier_rule": "MSD rows with zeta <= 0 or zeta > 100 removed",
    })
    return curve, summary


def run_classify(config: PipelineConfig):
    store = _load_store(config)
    report = run_experiment(store.metas(), store.estimates(), config.experiment_config())
    if not any(c["available"] for c in report.cells):
        raise InsufficientDataError("every classification cell is unavailable")
    out = config.out
    write_json(out / ACCURACY_JSON, report.to_dict())
    header, rows = report.accuracy_table()
    write_csv(out / ACCURACY_TABLE_CSV, header, rows)
    cols = ("participant", "distance_px", "feature_source", "feature_set", "n_samples", "n_dropped",
            "available", "mean_accuracy", "se", "reason")
    write_csv(out / ACCURACY_CELLS_CSV, cols, [[c[k] for k in cols] for c in report.cells])
    return report


def run_report(config: PipelineConfig) -> dict:
    out = config.out
    est = read_json(_require(out / ESTIMATES_JSON, "estimate"))
    corr = read_json(_require(out / CORRELATION_JSON, "correlate"))
    acc = read_json(_require(out / ACCURACY_JSON, "classify"))
    curve = corr["curve"]
    write_csv(
        out / RETENTION_PLOT_CSV,
        ("threshold", "rho_omega", "rho_zeta", "retention_percent"),
        zip(curve["thresholds"],
            [v if v is not None else math.nan for v in curve["rho_omega"]],
            [v if v is not None else math.nan for v in curve["rho_zeta"]],
            curve["retention_percent"]),
    )
    report = {
        "software": {"name": "stiffsense", "version": __version__},
        "config": config.to_dict(),
        "failures": {
            "counts": est["counts"],
            "reasons": est["failure_reasons"],
        },
        "correlation": corr,
        "classification": {
            "overall": acc["overall"],
            "by_distance": acc["by_distance"],
            "config": acc["config"],
            "columns": [variant_name(s, f) for s, f in VARIANTS],
        },
        "notes": est.get("notes", []) + [
            "Condition summaries aggregate participant means before testing.",
            "Classifier defaults: C=1, RBF kernel, gamma=1/(n_features * mean feature variance).",
        ],
    }
    write_json(out / REPORT_JSON, report)
    return report
