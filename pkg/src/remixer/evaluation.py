"""The evaluation protocol: per-source gain sweeps, remix-quality and
loudness reports, and separation score distributions.

The sweep manipulates one source at a time over -24..+24 dB in 3 dB steps
(17 values per source) and shares a single all-zero point, so K sources
yield exactly 16K + 1 gain vectors. For every evaluation segment and every
sweep vector we synthesize the ground-truth remix, produce the model's
remix (output-side scaling for the plain and remix-regularized variants,
decoder re-runs on the cached latent for the latent-control variant), and
record remix SNR, SD-SDR, their minimum, and the least-squares loudness
differences.

``report`` writes the raw records as CSV, a grouped summary as JSON,
plot-ready per-source curve CSVs (gain vs mean score), and rendered figures
of those curves.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .audio import GainVector, SourceSet, Waveform, mix, remix_target
from .datagen import DatasetManifest, load_sources, segment_sources
from .model import (
    Checkpoint,
    SeparationOutput,
    decode_remix_from_cache,
    forward_separate,
    remix_from_estimates,
)

__all__ = [
    "SWEEP_MIN_DB",
    "SWEEP_MAX_DB",
    "SWEEP_STEP_DB",
    "SWEEP_VALUES_PER_SOURCE",
    "SweepSpec",
    "DEFAULT_SWEEP",
    "EvalRecord",
    "enumerate_sweep",
    "manipulated_index",
    "evaluate",
    "separation_scores",
    "report",
    "write_records_csv",
    "read_records_csv",
    "quartile_summary",
]

@dataclass(frozen=True)
class SweepSpec:
    """One-source-at-a-time gain grid with a single shared all-zero point."""

    min_db: float = -24.0
    max_db: float = 24.0
    step_db: float = 3.0

    def gain_values(self) -> list[float]:
        n = int(round((self.max_db - self.min_db) / self.step_db)) + 1
        return [self.min_db + i * self.step_db for i in range(n)]

    def vectors(self, k: int) -> list[GainVector]:
        """All sweep gain vectors for K sources: with the default grid's 17
        values per source (16 nonzero) that is exactly 16K + 1 vectors.

        The all-zero vector appears exactly once, first; after it come the
        nonzero values for source 0, then source 1, and so on. Deterministic
        order, no duplicates.
        """
        if k < 2:
            raise ValueError(f"sweep needs K >= 2, got {k}")
        out = [GainVector.unity(k)]
        for source in range(k):
            for value in self.gain_values():
                if value == 0.0:
                    continue
                db = [0.0] * k
                db[source] = value
                out.append(GainVector(db=tuple(db)))
        return out


DEFAULT_SWEEP = SweepSpec()
SWEEP_MIN_DB = DEFAULT_SWEEP.min_db
SWEEP_MAX_DB = DEFAULT_SWEEP.max_db
SWEEP_STEP_DB = DEFAULT_SWEEP.step_db
SWEEP_VALUES_PER_SOURCE = 17  # -24..+24 inclusive at 3 dB steps


def sweep_gain_values() -> list[float]:
    return DEFAULT_SWEEP.gain_values()


def enumerate_sweep(k: int, spec: SweepSpec = DEFAULT_SWEEP) -> list[GainVector]:
    """All one-source-at-a-time gain vectors: 16K + 1 for the default grid."""
    return spec.vectors(k)


def manipulated_index(gains: GainVector) -> int:
    """Index of the single nonzero entry, or -1 for the all-zero point."""
    nonzero = [i for i, v in enumerate(gains.db) if v != 0.0]
    if not nonzero:
        return -1
    if len(nonzero) > 1:
        raise ValueError(f"not a one-at-a-time sweep vector: {gains.db}")
    return nonzero[0]


@dataclass(frozen=True)
class EvalRecord:
    """One (segment, gain vector, variant) measurement."""

    track_id: str
    segment_index: int
    manipulated: int       # source index, -1 for the shared 0 dB point
    gain_db: float         # the manipulated source's gain (0.0 at the shared point)
    variant: str
    min_sdr_db: float
    snr_db: float
    sd_sdr_db: float
    ld_db: tuple[float, ...]     # per-source loudness differences
    ld_manipulated_db: float     # ld_db[manipulated]; mean of ld_db at the 0 dB point


def evaluate(
    checkpoint: Checkpoint,
    manifest: DatasetManifest,
    split: str,
    sweep: list[GainVector] | None = None,
    segment_s: float = 1.0,
    hop_s: float | None = None,
) -> list[EvalRecord]:
    """Run the sweep protocol over every segment of a split.

    Segments are fixed-length windows (no activity restriction at eval
    time). Windows whose ground-truth remix is all-zero or whose sources
    are numerically dependent cannot be scored and are skipped. The output
    is deterministically ordered by (track, segment, sweep position).
    """
    cfg = checkpoint.params.config
    if manifest.k != cfg.k:
        raise ValueError(f"manifest K={manifest.k} does not match model K={cfg.k}")
    if manifest.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"manifest rate {manifest.sample_rate} does not match model rate {cfg.sample_rate}"
        )
    sweep = sweep if sweep is not None else enumerate_sweep(cfg.k)
    hop_s = hop_s if hop_s is not None else segment_s
    records: list[EvalRecord] = []
    for item in manifest.split_items(split):
        sources = load_sources(manifest, item)
        for seg_index, seg in enumerate(segment_sources(sources, segment_s, hop_s)):
            records.extend(
                _evaluate_segment(checkpoint, item.track_id, seg_index, seg, sweep)
            )
    return records


def _evaluate_segment(
    checkpoint: Checkpoint,
    track_id: str,
    seg_index: int,
    seg: SourceSet,
    sweep: list[GainVector],
) -> list[EvalRecord]:
    try:
        mixture = mix(seg)
        separated = forward_separate(checkpoint.params, mixture)
    except ValueError:
        return []
    records = []
    for gains in sweep:
        target = remix_target(seg, gains)
        if not np.any(target.samples):
            continue
        estimate = _model_remix(checkpoint, separated, gains)
        try:
            loud = metrics.loudness_ls(estimate, seg, gains)
        except metrics.DegenerateInputError:
            continue
        snr_db = metrics.snr(target, estimate)
        sd_db = metrics.sd_sdr(target, estimate)
        manip = manipulated_index(gains)
        ld_manip = loud.ld_db[manip] if manip >= 0 else float(np.mean(loud.ld_db))
        records.append(
            EvalRecord(
                track_id=track_id,
                segment_index=seg_index,
                manipulated=manip,
                gain_db=float(gains.db[manip]) if manip >= 0 else 0.0,
                variant=checkpoint.variant,
                min_sdr_db=min(snr_db, sd_db),
                snr_db=snr_db,
                sd_sdr_db=sd_db,
                ld_db=loud.ld_db,
                ld_manipulated_db=ld_manip,
            )
        )
    return records


def _model_remix(
    checkpoint: Checkpoint, separated: SeparationOutput, gains: GainVector
) -> Waveform:
    """Variant-aware remix: the latent-control variant re-runs the decoder
    per gain vector; the others scale and sum the cached estimates."""
    if checkpoint.variant == "model2":
        return decode_remix_from_cache(checkpoint.params, separated, gains)
    return remix_from_estimates(separated, gains)


# ---------------------------------------------------------------------------
# Separation scores
# ---------------------------------------------------------------------------


def separation_scores(
    checkpoint: Checkpoint,
    manifest: DatasetManifest,
    split: str,
    segment_s: float = 1.0,
) -> dict[str, dict[str, list[float]]]:
    """Per-source SDR/SIR/SAR over all segments of a split.

    Returns ``{label: {"sdr": [...], "sir": [...], "sar": [...]}}`` with one
    value per segment; -inf sentinels (zero target coefficient) stay in the
    lists and are separated out by ``quartile_summary``.
    """
    cfg = checkpoint.params.config
    if manifest.k != cfg.k:
        raise ValueError(f"manifest K={manifest.k} does not match model K={cfg.k}")
    out: dict[str, dict[str, list[float]]] = {
        label: {"sdr": [], "sir": [], "sar": []} for label in manifest.labels
    }
    for item in manifest.split_items(split):
        sources = load_sources(manifest, item)
        for seg in segment_sources(sources, segment_s, segment_s):
            mixture = mix(seg)
            try:
                separated = forward_separate(checkpoint.params, mixture)
            except ValueError:
                continue
            for k, label in enumerate(manifest.labels):
                try:
                    d = metrics.bss_decompose(separated.estimates[k], seg, k)
                except metrics.DegenerateInputError:
                    continue
                out[label]["sdr"].append(metrics.sdr_sep(d))
                out[label]["sir"].append(metrics.sir(d))
                out[label]["sar"].append(metrics.sar(d))
    return out


def quartile_summary(values: list[float]) -> dict:
    """Box-plot summary; -inf/+inf sentinels are counted, not averaged."""
    finite = [v for v in values if math.isfinite(v)]
    n_inf = len(values) - len(finite)
    if not finite:
        return {"n": 0, "n_sentinel": n_inf}
    arr = np.asarray(finite)
    return {
        "n": len(finite),
        "n_sentinel": n_inf,
        "min": float(arr.min()),
        "q1": float(np.percentile(arr, 25)),
        "median": float(np.percentile(arr, 50)),
        "q3": float(np.percentile(arr, 75)),
        "max": float(arr.max()),
        "mean": float(arr.mean()),
    }


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

_CSV_COLUMNS = [
    "track_id",
    "segment_index",
    "manipulated",
    "gain_db",
    "variant",
    "min_sdr_db",
    "snr_db",
    "sd_sdr_db",
    "ld_db",
    "ld_manipulated_db",
]


def write_records_csv(path, records: list[EvalRecord]) -> None:
    """Raw records as CSV; floats use repr so a re-parse is lossless."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(_CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.track_id,
                    r.segment_index,
                    r.manipulated,
                    repr(r.gain_db),
                    r.variant,
                    repr(r.min_sdr_db),
                    repr(r.snr_db),
                    repr(r.sd_sdr_db),
                    "|".join(repr(v) for v in r.ld_db),
                    repr(r.ld_manipulated_db),
                ]
            )


def read_records_csv(path) -> list[EvalRecord]:
    records = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != _CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected records header {header}")
        for row in reader:
            records.append(
                EvalRecord(
                    track_id=row[0],
                    segment_index=int(row[1]),
                    manipulated=int(row[2]),
                    gain_db=float(row[3]),
                    variant=row[4],
                    min_sdr_db=float(row[5]),
                    snr_db=float(row[6]),
                    sd_sdr_db=float(row[7]),
                    ld_db=tuple(float(v) for v in row[8].split("|")),
                    ld_manipulated_db=float(row[9]),
                )
            )
    return records


def _mean_std(values: list[float]) -> dict:
    """Mean/std over finite values; caps and infinities tallied separately."""
    finite = [v for v in values if math.isfinite(v)]
    n_cap = sum(1 for v in values if v == metrics.CAP_DB)
    n_inf = len(values) - len(finite)
    entry = {"n": len(values), "n_capped": n_cap, "n_infinite": n_inf}
    if finite:
        arr = np.asarray(finite)
        entry["mean"] = float(arr.mean())
        entry["std"] = float(arr.std())
    return entry


def summarize(records: list[EvalRecord]) -> dict:
    """Grouped means/stds: per variant overall and per (variant, gain)."""
    variants = sorted({r.variant for r in records})
    summary: dict = {"variants": {}}
    for variant in variants:
        rv = [r for r in records if r.variant == variant]
        overall = {
            "min_sdr_db": _mean_std([r.min_sdr_db for r in rv]),
            "snr_db": _mean_std([r.snr_db for r in rv]),
            "sd_sdr_db": _mean_std([r.sd_sdr_db for r in rv]),
            "ld_manipulated_db": _mean_std([r.ld_manipulated_db for r in rv]),
        }
        by_gain = {}
        for gain in sorted({r.gain_db for r in rv}):
            rg = [r for r in rv if r.gain_db == gain]
            by_gain[repr(gain)] = {
                "min_sdr_db": _mean_std([r.min_sdr_db for r in rg]),
                "ld_manipulated_db": _mean_std([r.ld_manipulated_db for r in rg]),
            }
        summary["variants"][variant] = {"overall": overall, "by_gain": by_gain}
    return summary


def _curve_rows(records: list[EvalRecord], variant: str, source: int) -> list[dict]:
    """17 rows for one (variant, source) knob curve.

    Nonzero gains take the records where this source was manipulated; the
    0 dB row reuses the shared all-zero point, reading this source's LD out
    of the per-source vector.
    """
    rows = []
    for gain in sweep_gain_values():
        if gain == 0.0:
            rg = [r for r in records if r.variant == variant and r.manipulated == -1]
            ld_values = [r.ld_db[source] for r in rg]
        else:
            rg = [
                r
                for r in records
                if r.variant == variant and r.manipulated == source and r.gain_db == gain
            ]
            ld_values = [r.ld_manipulated_db for r in rg]
        min_sdr_values = [r.min_sdr_db for r in rg]
        rows.append(
            {
                "gain_db": gain,
                "mean_min_sdr_db": _finite_mean(min_sdr_values),
                "mean_ld_db": _finite_mean(ld_values),
                "n": len(rg),
            }
        )
    return rows


def _finite_mean(values: list[float]) -> float:
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else float("nan")


def report(
    records: list[EvalRecord],
    out_dir,
    labels: tuple[str, ...] | None = None,
    render_figures: bool = True,
) -> dict[str, Path]:
    """Write records.csv, summary.json, per-source curve CSVs, and figures.

    Returns a map of artifact names to paths. ``labels`` names the sources
    in the curve filenames; indices are used when absent.
    """
    if not records:
        raise ValueError("no records to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, Path] = {}

    records_path = out_dir / "records.csv"
    write_records_csv(records_path, records)
    artifacts["records"] = records_path

    summary_path = out_dir / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summarize(records), f, indent=2, sort_keys=True)
        f.write("\n")
    artifacts["summary"] = summary_path

    k = len(records[0].ld_db)
    names = list(labels) if labels is not None else [f"source{k_}" for k_ in range(k)]
    variants = sorted({r.variant for r in records})
    curves_dir = out_dir / "curves"
    curves_dir.mkdir(exist_ok=True)
    curve_data: dict[tuple[str, str], list[dict]] = {}
    for variant in variants:
        for source in range(k):
            rows = _curve_rows(records, variant, source)
            curve_data[(variant, names[source])] = rows
            path = curves_dir / f"{variant}_{names[source]}.csv"
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(["gain_db", "mean_min_sdr_db", "mean_ld_db", "n"])
                for row in rows:
                    writer.writerow(
                        [
                            repr(row["gain_db"]),
                            repr(row["mean_min_sdr_db"]),
                            repr(row["mean_ld_db"]),
                            row["n"],
                        ]
                    )
            artifacts[f"curve:{variant}:{names[source]}"] = path

    if render_figures:
        from .plots import render_curve_figures

        for name, path in render_curve_figures(curve_data, out_dir / "figures").items():
            artifacts[name] = path
    return artifacts
