"""Synthetic stem generation, WAV I/O, and dataset manifests.

The synthetic instrument families are built to be mutually separable in
principle: distinct frequency bands and envelope patterns per family so a
small model can learn the task. Stems are written one WAV per instrument
under ``<root>/<split>/<track_id>/<label>.wav`` with a JSON manifest at the
root. Everything is a pure function of (seed, config): per-item seeds are
derived from the master seed with a splitmix64 mix, so regeneration is
byte-identical.

The WAV layer speaks mono RIFF/WAVE only: PCM 16-bit or IEEE float 32-bit.
Parse failures report the byte offset. Compressed or multichannel files are
rejected; bit-exactness of tests beats format tolerance here.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import (
    ACTIVE_THRESHOLD_DB,
    DEFAULT_SAMPLE_RATE,
    SourceSet,
    Waveform,
    is_active_segment,
    mix,
    segment,
)

__all__ = [
    "InstrumentSpec",
    "DatasetManifest",
    "ManifestItem",
    "WavFormatError",
    "FAMILIES",
    "family_order",
    "labels_for_k",
    "synth_source",
    "build_dataset",
    "ingest_stems",
    "read_wav",
    "write_wav",
    "encode_wav",
    "decode_wav",
    "load_manifest",
    "load_sources",
    "splitmix64",
    "MANIFEST_VERSION",
    "MANIFEST_NAME",
]

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"

FAMILIES = (
    "harmonic-tone",
    "noise-burst-percussion",
    "low-band-tone",
    "plucked-decay",
    "filtered-noise-pad",
)

# Instrument roles in their fixed dataset order, with the family that
# stands in for each.
_ROLE_ORDER = (
    ("piano", "harmonic-tone"),
    ("drums", "noise-burst-percussion"),
    ("bass", "low-band-tone"),
    ("guitars", "plucked-decay"),
    ("string", "filtered-noise-pad"),
)


def labels_for_k(k: int) -> tuple[str, ...]:
    if not 2 <= k <= len(_ROLE_ORDER):
        raise ValueError(f"K must be in [2, {len(_ROLE_ORDER)}], got {k}")
    return tuple(label for label, _ in _ROLE_ORDER[:k])


def family_order(k: int) -> tuple[str, ...]:
    if not 2 <= k <= len(_ROLE_ORDER):
        raise ValueError(f"K must be in [2, {len(_ROLE_ORDER)}], got {k}")
    return tuple(family for _, family in _ROLE_ORDER[:k])


@dataclass(frozen=True)
class InstrumentSpec:
    """Parameter ranges for one synthetic instrument family."""

    family: str
    f0_low_hz: float
    f0_high_hz: float
    attack_s: float
    decay_s: float
    amp_low: float
    amp_high: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not 0 < self.amp_low <= self.amp_high <= 1.0:
            raise ValueError("amplitude range must lie in (0, 1]")
        if self.f0_low_hz <= 0 or self.f0_high_hz < self.f0_low_hz:
            raise ValueError("bad f0 band")


_DEFAULT_SPECS = {
    "harmonic-tone": InstrumentSpec("harmonic-tone", 220.0, 523.0, 0.01, 0.5, 0.4, 0.8),
    "noise-burst-percussion": InstrumentSpec(
        "noise-burst-percussion", 80.0, 200.0, 0.002, 0.06, 0.5, 0.9
    ),
    "low-band-tone": InstrumentSpec("low-band-tone", 55.0, 110.0, 0.02, 0.6, 0.4, 0.8),
    "plucked-decay": InstrumentSpec("plucked-decay", 330.0, 660.0, 0.005, 0.3, 0.4, 0.8),
    "filtered-noise-pad": InstrumentSpec(
        "filtered-noise-pad", 1500.0, 3000.0, 0.2, 1.0, 0.3, 0.6
    ),
}


def default_spec(family: str) -> InstrumentSpec:
    return _DEFAULT_SPECS[family]


def splitmix64(value: int) -> int:
    """Stateless 64-bit mix; used to derive independent per-item seeds."""
    z = (value + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------


def _note_envelope(n: int, sr: int, attack_s: float, decay_s: float, sustain: float) -> np.ndarray:
    t = np.arange(n) / sr
    attack = np.clip(t / max(attack_s, 1e-4), 0.0, 1.0)
    decay = sustain + (1.0 - sustain) * np.exp(-t / max(decay_s, 1e-4))
    return attack * decay


def _harmonic_note(n: int, sr: int, f0: float, n_harmonics: int, rolloff: float, phases) -> np.ndarray:
    t = np.arange(n) / sr
    out = np.zeros(n)
    nyquist = sr / 2.0
    for h in range(1, n_harmonics + 1):
        f = f0 * h
        if f >= nyquist:
            break
        out += (1.0 / h**rolloff) * np.sin(2.0 * np.pi * f * t + phases[h - 1])
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def synth_source(
    spec: InstrumentSpec,
    duration_s: float,
    seed: int,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> Waveform:
    """Render one stem, deterministically for a given seed.

    Peak amplitude is bounded by the spec's amplitude range; harmonic
    families put their energy at multiples of a fundamental drawn from the
    spec's band, noise families stay broadband.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    amp = rng.uniform(spec.amp_low, spec.amp_high)
    fam = spec.family

    if fam == "harmonic-tone":
        out = _note_pattern(rng, n, sample_rate, spec, note_every_s=0.5, n_harmonics=5, rolloff=1.5)
    elif fam == "plucked-decay":
        out = _note_pattern(rng, n, sample_rate, spec, note_every_s=1.0 / 3.0, n_harmonics=4, rolloff=1.0)
    elif fam == "low-band-tone":
        out = _note_pattern(rng, n, sample_rate, spec, note_every_s=0.5, n_harmonics=2, rolloff=1.0, sustain=0.8)
    elif fam == "noise-burst-percussion":
        out = _percussion(rng, n, sample_rate, spec)
    elif fam == "filtered-noise-pad":
        out = _noise_pad(rng, n, sample_rate, spec)
    else:  # pragma: no cover - guarded by InstrumentSpec
        raise ValueError(fam)

    peak = np.max(np.abs(out))
    if peak > 0:
        out = out * (amp / peak)
    return Waveform(out, sample_rate)


def _note_pattern(rng, n, sr, spec, note_every_s, n_harmonics, rolloff, sustain=0.3):
    """Repeating notes from a small pitch set, overlapping decays summed."""
    out = np.zeros(n)
    pitch_set = rng.uniform(spec.f0_low_hz, spec.f0_high_hz, size=4)
    note_len = int(round(note_every_s * sr))
    n_notes = max(1, math.ceil(n / note_len))
    for i in range(n_notes):
        start = i * note_len
        length = min(2 * note_len, n - start)
        if length <= 0:
            break
        f0 = float(rng.choice(pitch_set))
        phases = rng.uniform(0, 2 * np.pi, size=n_harmonics)
        tone = _harmonic_note(length, sr, f0, n_harmonics, rolloff, phases)
        env = _note_envelope(length, sr, spec.attack_s, spec.decay_s, sustain)
        out[start : start + length] += tone * env
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def _percussion(rng, n, sr, spec):
    """Noise bursts on a 4 Hz grid with alternating accents."""
    out = np.zeros(n)
    hit_every = int(round(sr / 4))
    t_decay = spec.decay_s
    for i, start in enumerate(range(0, n, hit_every)):
        length = min(int(round(6 * t_decay * sr)), n - start)
        if length <= 0:
            break
        burst = rng.standard_normal(length)
        env = np.exp(-np.arange(length) / (t_decay * sr))
        accent = 1.0 if i % 2 == 0 else 0.6
        out[start : start + length] += accent * burst * env
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def _noise_pad(rng, n, sr, spec):
    """Broadband noise band-limited in the frequency domain, slow AM."""
    noise = rng.standard_normal(n)
    spectrum = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, d=1.0 / sr)
    band = (freqs >= spec.f0_low_hz) & (freqs <= spec.f0_high_hz)
    spectrum[~band] = 0.0
    out = np.fft.irfft(spectrum, n=n)
    t = np.arange(n) / sr
    am = 0.75 + 0.25 * np.sin(2.0 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
    out = out * am
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


class WavFormatError(ValueError):
    """Malformed or unsupported WAV data; message carries the byte offset."""


def encode_wav(w: Waveform, bit_depth: int = 32) -> bytes:
    """Serialize to mono WAV bytes: 32 -> IEEE float32, 16 -> PCM int16.

    Float32 write/read round-trips exactly for float32-representable data;
    int16 quantization error is bounded by 1/32768.
    """
    samples = w.samples
    if bit_depth == 32:
        audio_format = 3
        payload = samples.astype("<f4").tobytes()
        bytes_per_sample = 4
    elif bit_depth == 16:
        audio_format = 1
        scaled = np.clip(np.round(samples * 32768.0), -32768, 32767)
        payload = scaled.astype("<i2").tobytes()
        bytes_per_sample = 2
    else:
        raise ValueError(f"unsupported bit depth {bit_depth} (use 16 or 32)")
    byte_rate = w.sample_rate * bytes_per_sample
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        audio_format,
        1,
        w.sample_rate,
        byte_rate,
        bytes_per_sample,
        bit_depth,
        b"data",
        len(payload),
    )
    return header + payload


def write_wav(path, w: Waveform, bit_depth: int = 32) -> None:
    """Write a mono WAV file; see ``encode_wav`` for the format contract."""
    with open(path, "wb") as f:
        f.write(encode_wav(w, bit_depth=bit_depth))


def read_wav(path) -> Waveform:
    """Read a mono PCM16 or float32 WAV into a float64 waveform."""
    with open(path, "rb") as f:
        return decode_wav(f.read())


def decode_wav(data: bytes) -> Waveform:
    """Parse WAV bytes; raise WavFormatError with a byte offset on failure."""
    if len(data) < 12:
        raise WavFormatError(f"truncated file at byte {len(data)}: no RIFF header")
    if data[0:4] != b"RIFF":
        raise WavFormatError("missing RIFF magic at byte 0")
    if data[8:12] != b"WAVE":
        raise WavFormatError("missing WAVE form type at byte 8")

    fmt = None
    payload = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset : offset + 4]
        (chunk_size,) = struct.unpack_from("<I", data, offset + 4)
        body_start = offset + 8
        if body_start + chunk_size > len(data):
            raise WavFormatError(
                f"chunk {chunk_id!r} at byte {offset} overruns file "
                f"(size {chunk_size}, remaining {len(data) - body_start})"
            )
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise WavFormatError(f"fmt chunk too short at byte {offset}")
            fmt = struct.unpack_from("<HHIIHH", data, body_start)
        elif chunk_id == b"data":
            payload = data[body_start : body_start + chunk_size]
        offset = body_start + chunk_size + (chunk_size % 2)

    if fmt is None:
        raise WavFormatError(f"no fmt chunk found before byte {offset}")
    if payload is None:
        raise WavFormatError(f"no data chunk found before byte {offset}")

    audio_format, channels, sample_rate, _, _, bits = fmt
    if channels != 1:
        raise WavFormatError(f"only mono supported, file has {channels} channels")
    if audio_format == 1 and bits == 16:
        samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(
            f"unsupported codec: format {audio_format}, {bits}-bit "
            "(PCM 16-bit and IEEE float 32-bit only)"
        )
    return Waveform(samples, sample_rate)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestItem:
    track_id: str
    split: str
    seed: int
    stems: dict[str, str]  # label -> path relative to the manifest root


@dataclass
class DatasetManifest:
    version: int
    sample_rate: int
    k: int
    labels: tuple[str, ...]
    duration_s: float
    master_seed: int
    items: list[ManifestItem] = field(default_factory=list)
    root: Path | None = None

    def split_items(self, split: str) -> list[ManifestItem]:
        return [it for it in self.items if it.split == split]

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "sample_rate": self.sample_rate,
            "k": self.k,
            "labels": list(self.labels),
            "duration_s": self.duration_s,
            "master_seed": self.master_seed,
            "items": [
                {
                    "track_id": it.track_id,
                    "split": it.split,
                    "seed": it.seed,
                    "stems": it.stems,
                }
                for it in self.items
            ],
        }

    def save(self, root: Path) -> Path:
        path = Path(root) / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    root = path.parent if path.is_file() else path
    file = path if path.is_file() else root / MANIFEST_NAME
    with open(file, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{file}: unsupported manifest version {payload.get('version')}")
    manifest = DatasetManifest(
        version=payload["version"],
        sample_rate=payload["sample_rate"],
        k=payload["k"],
        labels=tuple(payload["labels"]),
        duration_s=payload["duration_s"],
        master_seed=payload["master_seed"],
        items=[
            ManifestItem(
                track_id=i["track_id"],
                split=i["split"],
                seed=i["seed"],
                stems=dict(i["stems"]),
            )
            for i in payload["items"]
        ],
        root=root,
    )
    return manifest


def load_sources(manifest: DatasetManifest, item: ManifestItem) -> SourceSet:
    """Read one track's stems in label order."""
    if manifest.root is None:
        raise ValueError("manifest has no root directory; load it from disk first")
    waves = []
    for label in manifest.labels:
        rel = item.stems[label]
        waves.append(read_wav(manifest.root / rel))
    return SourceSet(sources=tuple(waves), labels=manifest.labels)


# ---------------------------------------------------------------------------
# Dataset building and ingestion
# ---------------------------------------------------------------------------

MIX_PEAK_TARGET = 0.9


def build_dataset(
    k: int,
    n_items: dict[str, int],
    duration_s: float,
    seed: int,
    out_dir,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    bit_depth: int = 32,
) -> DatasetManifest:
    """Synthesize a dataset of K-stem tracks and write stems + manifest.

    One shared normalization factor per track scales the mixture peak to
    0.9 and every stem by the same amount, preserving mixture additivity
    exactly. Items whose stems fail the active-segment check on every
    one-second window are re-rendered with a follow-up seed.
    """
    out_dir = Path(out_dir)
    labels = labels_for_k(k)
    families = family_order(k)
    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        sample_rate=sample_rate,
        k=k,
        labels=labels,
        duration_s=duration_s,
        master_seed=seed,
        root=out_dir,
    )
    item_index = 0
    for split in ("train", "val", "test"):
        for i in range(n_items.get(split, 0)):
            track_id = f"{split}_{i:04d}"
            item_seed = splitmix64(seed ^ splitmix64(item_index))
            sources = _render_track(
                families, labels, duration_s, item_seed, sample_rate
            )
            track_dir = out_dir / split / track_id
            track_dir.mkdir(parents=True, exist_ok=True)
            stems = {}
            for label, w in zip(labels, sources.sources):
                rel = f"{split}/{track_id}/{label}.wav"
                write_wav(out_dir / rel, w, bit_depth=bit_depth)
                stems[label] = rel
            manifest.items.append(
                ManifestItem(track_id=track_id, split=split, seed=item_seed, stems=stems)
            )
            item_index += 1
    manifest.save(out_dir)
    return manifest


def _render_track(families, labels, duration_s, item_seed, sample_rate) -> SourceSet:
    """Render stems until at least one full one-second window is active."""
    attempt_seed = item_seed
    for _ in range(8):
        waves = []
        for j, family in enumerate(families):
            stem_seed = splitmix64(attempt_seed ^ splitmix64(j + 1))
            waves.append(
                synth_source(default_spec(family), duration_s, stem_seed, sample_rate)
            )
        sources = SourceSet(sources=tuple(waves), labels=tuple(labels))
        normalized = _normalize_track(sources)
        if _has_active_window(normalized):
            return normalized
        attempt_seed = splitmix64(attempt_seed)
    raise RuntimeError("could not render an active track in 8 attempts")


def _normalize_track(sources: SourceSet) -> SourceSet:
    mixture = mix(sources)
    peak = float(np.max(np.abs(mixture.samples)))
    if peak == 0.0:
        return sources
    factor = MIX_PEAK_TARGET / peak
    return SourceSet(
        sources=tuple(
            Waveform(w.samples * factor, w.sample_rate) for w in sources.sources
        ),
        labels=sources.labels,
    )


def _has_active_window(sources: SourceSet, window_s: float = 1.0) -> bool:
    windows = segment_sources(sources, window_s, window_s)
    return any(is_active_segment(w, ACTIVE_THRESHOLD_DB) for w in windows)


def segment_sources(sources: SourceSet, length_s: float, hop_s: float) -> list[SourceSet]:
    """Segment every stem identically, yielding aligned windowed SourceSets."""
    per_source = [segment(w, length_s, hop_s) for w in sources.sources]
    n_windows = min(len(s) for s in per_source)
    return [
        SourceSet(
            sources=tuple(per_source[k][i] for k in range(sources.k)),
            labels=sources.labels,
        )
        for i in range(n_windows)
    ]


def ingest_stems(directory, labels) -> tuple[DatasetManifest, list[dict]]:
    """Scan a stem directory tree into a manifest.

    Expects ``<root>/<split>/<track_id>/<label>.wav`` with splits named
    train/val/test. Tracks with missing stems, unequal lengths, mixed
    sample rates, or unreadable files are rejected, each with a reason in
    the returned report. Resampling is out of scope: every track must be
    internally consistent, and all tracks must agree with the first
    accepted track's rate.
    """
    root = Path(directory)
    labels = tuple(labels)
    if not root.is_dir():
        raise ValueError(f"{root} is not a directory")
    items: list[ManifestItem] = []
    rejected: list[dict] = []
    rate = None
    duration = 0.0
    for split in ("train", "val", "test"):
        split_dir = root / split
        if not split_dir.is_dir():
            continue
        for track_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
            track_id = track_dir.name
            stems = {}
            waves = []
            reason = None
            for label in labels:
                stem_path = track_dir / f"{label}.wav"
                if not stem_path.is_file():
                    reason = f"missing stem {label!r}"
                    break
                try:
                    waves.append(read_wav(stem_path))
                except WavFormatError as e:
                    reason = f"stem {label!r}: {e}"
                    break
                stems[label] = f"{split}/{track_id}/{label}.wav"
            if reason is None:
                lengths = {len(w) for w in waves}
                rates = {w.sample_rate for w in waves}
                if len(lengths) != 1:
                    reason = f"stem length mismatch {sorted(lengths)}"
                elif len(rates) != 1:
                    reason = f"stem sample-rate mismatch {sorted(rates)}"
                elif rate is not None and waves[0].sample_rate != rate:
                    reason = (
                        f"track rate {waves[0].sample_rate} differs from dataset rate {rate}"
                    )
            if reason is not None:
                rejected.append({"track_id": track_id, "split": split, "reason": reason})
                continue
            if rate is None:
                rate = waves[0].sample_rate
                duration = len(waves[0]) / rate
            items.append(
                ManifestItem(track_id=track_id, split=split, seed=0, stems=stems)
            )
    if rate is None:
        raise ValueError(f"no usable tracks found under {root}")
    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        sample_rate=rate,
        k=len(labels),
        labels=labels,
        duration_s=duration,
        master_seed=0,
        items=items,
        root=root,
    )
    return manifest, rejected
