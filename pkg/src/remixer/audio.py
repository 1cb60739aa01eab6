"""Core audio types and mixing arithmetic.

Everything downstream (losses, metrics, the model, the evaluation sweep)
works in terms of three small value types defined here:

- ``Waveform``: a mono buffer of float64 samples at a fixed sample rate.
- ``SourceSet``: an ordered, label-bound collection of stem waveforms.
  Mixtures and remix targets are derived from it; the source order is
  fixed (no permutation anywhere in the pipeline).
- ``GainVector``: per-source volume changes, stored in dB with the linear
  amplitude ratio derived via ``gamma = 10**(db/20)``.

All operations are pure functions over immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Waveform",
    "SourceSet",
    "GainVector",
    "db_to_linear",
    "linear_to_db",
    "mix",
    "remix_target",
    "sample_training_gains",
    "segment",
    "is_active_segment",
    "rms_db",
    "DEFAULT_SAMPLE_RATE",
    "ACTIVE_THRESHOLD_DB",
]

# Desk-scale processing rate. A config value, not a constant of the method.
DEFAULT_SAMPLE_RATE = 8000

# A stem counts as "active" in a window when its RMS exceeds this (dBFS).
ACTIVE_THRESHOLD_DB = -40.0


@dataclass(frozen=True)
class Waveform:
    """Mono audio buffer: float64 samples at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform samples must be 1-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class SourceSet:
    """Ordered collection of stem waveforms with instrument labels.

    Order is fixed and label-bound: ``sources[k]`` always carries
    ``labels[k]``, and every consumer relies on that pairing.
    """

    sources: tuple[Waveform, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        sources = tuple(self.sources)
        labels = tuple(self.labels)
        if len(sources) < 1:
            raise ValueError("SourceSet needs at least one source")
        if len(labels) != len(sources):
            raise ValueError(f"{len(labels)} labels for {len(sources)} sources")
        first = sources[0]
        for w in sources[1:]:
            if len(w) != len(first):
                raise ValueError("all sources must have equal length")
            if w.sample_rate != first.sample_rate:
                raise ValueError("all sources must share one sample rate")
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "labels", labels)

    @property
    def k(self) -> int:
        return len(self.sources)

    @property
    def sample_rate(self) -> int:
        return self.sources[0].sample_rate

    @property
    def n_samples(self) -> int:
        return len(self.sources[0])


@dataclass(frozen=True)
class GainVector:
    """Per-source volume changes in dB, with cached linear ratios."""

    db: tuple[float, ...]
    linear: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        db = tuple(float(v) for v in self.db)
        if not all(math.isfinite(v) for v in db):
            raise ValueError(f"gain dB values must be finite, got {db}")
        object.__setattr__(self, "db", db)
        object.__setattr__(self, "linear", tuple(db_to_linear(v) for v in db))

    @classmethod
    def unity(cls, k: int) -> "GainVector":
        return cls(db=(0.0,) * k)

    @classmethod
    def from_linear(cls, ratios) -> "GainVector":
        return cls(db=tuple(linear_to_db(r) for r in ratios))

    def compose(self, other: "GainVector") -> "GainVector":
        """Stack two gain changes: dB values add, linear ratios multiply."""
        if len(other.db) != len(self.db):
            raise ValueError("gain vectors must have equal length")
        return GainVector(db=tuple(a + b for a, b in zip(self.db, other.db)))

    def __len__(self) -> int:
        return len(self.db)


def db_to_linear(db: float) -> float:
    """Convert a level change in dB to an amplitude ratio, 10**(db/20).

    A +10 dB request maps to a ratio of ~3.1623; 0 dB is unity.
    """
    db = float(db)
    if not math.isfinite(db):
        raise ValueError(f"dB value must be finite, got {db}")
    return 10.0 ** (db / 20.0)


def linear_to_db(ratio: float) -> float:
    """Convert an amplitude ratio to dB, 20*log10(ratio). Requires ratio > 0."""
    ratio = float(ratio)
    if not ratio > 0.0:
        raise ValueError(f"amplitude ratio must be > 0, got {ratio}")
    return 20.0 * math.log10(ratio)


def _check_combinable(sources: SourceSet) -> None:
    # SourceSet construction already guarantees equal lengths and rates;
    # re-checked here so hand-built tuples fail loudly too.
    if sources.k < 1:
        raise ValueError("need at least one source")


def mix(sources: SourceSet) -> Waveform:
    """Elementwise sum of all stems: the unweighted input mixture."""
    _check_combinable(sources)
    total = np.zeros(sources.n_samples, dtype=np.float64)
    for w in sources.sources:
        total += w.samples
    return Waveform(total, sources.sample_rate)


def remix_target(sources: SourceSet, gains: GainVector) -> Waveform:
    """Weighted sum of stems using linear gains: the ground-truth remix.

    With all gains at 0 dB this is bit-identical to ``mix`` (each linear
    ratio is exactly 1.0, and x * 1.0 == x for finite floats).
    """
    _check_combinable(sources)
    if len(gains) != sources.k:
        raise ValueError(f"gain vector length {len(gains)} != K={sources.k}")
    total = np.zeros(sources.n_samples, dtype=np.float64)
    for g, w in zip(gains.linear, sources.sources):
        total += g * w.samples
    return Waveform(total, sources.sample_rate)


def sample_training_gains(
    k: int,
    seed,
    low_db: float = -12.0,
    high_db: float = 12.0,
) -> GainVector:
    """Draw K i.i.d. uniform dB gains in [low_db, high_db].

    ``seed`` may be an int or a ``numpy.random.Generator``; given an int the
    draw is fully deterministic.
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    return GainVector(db=tuple(rng.uniform(low_db, high_db, size=k)))


def segment(w: Waveform, length_s: float, hop_s: float) -> list[Waveform]:
    """Slice a waveform into consecutive windows; the trailing partial window
    is dropped (fixed-length windows only)."""
    if length_s <= 0 or hop_s <= 0:
        raise ValueError("length_s and hop_s must be positive")
    win = int(round(length_s * w.sample_rate))
    hop = int(round(hop_s * w.sample_rate))
    out = []
    start = 0
    while start + win <= len(w):
        out.append(Waveform(w.samples[start : start + win], w.sample_rate))
        start += hop
    return out


def rms_db(w: Waveform) -> float:
    """RMS level in dBFS (full scale = 1.0). All-zero input gives -inf."""
    mean_sq = float(np.mean(w.samples**2))
    if mean_sq == 0.0:
        return float("-inf")
    return 10.0 * math.log10(mean_sq)


def is_active_segment(sources: SourceSet, threshold_db: float = ACTIVE_THRESHOLD_DB) -> bool:
    """True iff every stem's RMS strictly exceeds the threshold.

    A source sitting exactly at the threshold does not count as active.
    """
    return all(rms_db(w) > threshold_db for w in sources.sources)
