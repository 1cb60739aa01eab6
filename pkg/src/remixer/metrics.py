"""Audio quality metrics: SNR/SDR family, projection-based decomposition,
and least-squares loudness analysis.

Conventions
-----------

All metrics run in 64-bit floating point on ``Waveform`` inputs.

Log-ratio metrics share one epsilon convention: the denominator energy is
floored by ``EPS_REL`` times the numerator energy, which caps every score at
``CAP_DB`` (+120 dB) instead of letting a perfect reconstruction blow up to
+inf. A score of exactly 120 dB therefore reads as "perfect to within the
floor". Zero-numerator cases return ``-inf`` as a documented sentinel, never
an exception, except where a precondition forbids them outright (an all-zero
reference is rejected).

The decomposition used by ``bss_decompose`` projects an estimate onto the
span of the ground-truth sources with a single time-invariant coefficient
per source (no distortion filters): estimate = alpha * s_k  +  sum_j beta_j
* s_j  +  artifact, with the artifact orthogonal to every source. SIR, SAR
and the separation SDR are energy ratios of those three parts.

``loudness_ls`` answers "which per-source scaling factors actually built
this remix?" by least squares, and reports the dB gap between the fitted
coefficients and the intended ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio import SourceSet, Waveform, GainVector

__all__ = [
    "BssDecomposition",
    "LoudnessReport",
    "DegenerateInputError",
    "snr",
    "si_sdr",
    "sd_sdr",
    "min_sdr",
    "bss_decompose",
    "sdr_sep",
    "sir",
    "sar",
    "loudness_ls",
    "EPS_REL",
    "CAP_DB",
]

# Relative denominator floor and the cap it implies: 10*log10(1/EPS_REL).
EPS_REL = 1e-12
CAP_DB = 120.0


class DegenerateInputError(ValueError):
    """Raised when the ground-truth sources are (numerically) linearly
    dependent and a projection is not well defined."""


def _check_pair(reference: Waveform, estimate: Waveform) -> tuple[np.ndarray, np.ndarray]:
    if len(reference) != len(estimate):
        raise ValueError(
            f"length mismatch: reference {len(reference)} vs estimate {len(estimate)}"
        )
    if reference.sample_rate != estimate.sample_rate:
        raise ValueError("sample rate mismatch between reference and estimate")
    return reference.samples, estimate.samples


def _log_ratio_db(num: float, den: float) -> float:
    """10*log10(num / (den + EPS_REL*num)), with -inf for a zero numerator."""
    if num == 0.0:
        return float("-inf")
    value = 10.0 * math.log10(num / (den + EPS_REL * num))
    return min(value, CAP_DB)


def snr(reference: Waveform, estimate: Waveform) -> float:
    """Scale-sensitive signal-to-noise ratio in dB.

    10*log10(||s||^2 / (||s_hat - s||^2 + eps)). The error is measured
    against the unscaled reference, so over- or under-scaled estimates are
    penalized. An all-zero reference is rejected.
    """
    s, y = _check_pair(reference, estimate)
    num = float(s @ s)
    if num == 0.0:
        raise ValueError("snr undefined for an all-zero reference")
    err = y - s
    return _log_ratio_db(num, float(err @ err))


def _projection_alpha(s: np.ndarray, y: np.ndarray) -> float:
    """Least-squares scale of the reference inside the estimate."""
    denom = float(s @ s)
    if denom == 0.0:
        raise ValueError("projection undefined for an all-zero reference")
    return float(y @ s) / denom


def si_sdr(reference: Waveform, estimate: Waveform) -> float:
    """Scale-invariant SDR in dB.

    Projects the estimate onto the reference (alpha = <y,s>/||s||^2) and
    scores 10*log10(||alpha*s||^2 / ||y - alpha*s||^2). Invariant under any
    nonzero scaling of the estimate. If the estimate is exactly orthogonal
    to the reference, returns the -inf sentinel.
    """
    s, y = _check_pair(reference, estimate)
    alpha = _projection_alpha(s, y)
    if alpha == 0.0:
        return float("-inf")
    target = alpha * s
    err = y - target
    return _log_ratio_db(float(target @ target), float(err @ err))


def sd_sdr(reference: Waveform, estimate: Waveform) -> float:
    """Scale-dependent SDR in dB.

    Same scaled-reference numerator as SI-SDR but the error is measured
    against the unscaled reference: 10*log10(||alpha*s||^2 / ||y - s||^2).
    Algebraically equals snr + 20*log10|alpha|, so any scale mismatch in
    the estimate pulls the score down (or up, for |alpha| > 1).
    """
    s, y = _check_pair(reference, estimate)
    if float(s @ s) == 0.0:
        raise ValueError("sd_sdr undefined for an all-zero reference")
    alpha = _projection_alpha(s, y)
    if alpha == 0.0:
        return float("-inf")
    target = alpha * s
    err = y - s
    return _log_ratio_db(float(target @ target), float(err @ err))


def min_sdr(reference: Waveform, estimate: Waveform) -> float:
    """min(snr, sd_sdr): the remix-quality score.

    Since sd_sdr = snr + 20*log10|alpha|, this equals sd_sdr whenever
    |alpha| <= 1 and snr otherwise; taking the minimum punishes both
    directions of scale error.
    """
    return min(snr(reference, estimate), sd_sdr(reference, estimate))


@dataclass(frozen=True)
class BssDecomposition:
    """Split of an estimate into target, interference and artifact parts.

    ``alpha`` scales the true source being estimated; ``beta`` holds the
    coefficients of the other sources in their original order (length K-1);
    ``artifact`` is the projection residual, orthogonal to every source.
    target + interference + artifact reconstructs the estimate exactly.
    """

    alpha: float
    beta: tuple[float, ...]
    target: Waveform
    interference: Waveform
    artifact: Waveform
    target_index: int


def _source_matrix(sources: SourceSet) -> np.ndarray:
    return np.stack([w.samples for w in sources.sources], axis=1)  # [T, K]


def _solve_projection(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Solve the normal equations (A^T A) c = A^T y for small dense K."""
    gram = a.T @ a
    # Guard against numerically dependent sources before solving.
    if not np.all(np.isfinite(gram)):
        raise DegenerateInputError("non-finite source energies")
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise DegenerateInputError(
            f"source matrix is rank deficient (Gram condition number {cond:.3g})"
        )
    return np.linalg.solve(gram, a.T @ y)


def bss_decompose(estimate: Waveform, sources: SourceSet, target_index: int) -> BssDecomposition:
    """Least-squares projection of an estimate onto the span of the sources.

    The coefficient on ``sources[target_index]`` becomes ``alpha``; the
    remaining coefficients become ``beta``; what the projection cannot
    explain is the artifact.
    """
    if not 0 <= target_index < sources.k:
        raise ValueError(f"target_index {target_index} out of range for K={sources.k}")
    if len(estimate) != sources.n_samples:
        raise ValueError("estimate length does not match sources")
    a = _source_matrix(sources)
    y = estimate.samples
    coef = _solve_projection(a, y)
    target = coef[target_index] * a[:, target_index]
    others = [j for j in range(sources.k) if j != target_index]
    interference = a[:, others] @ coef[others] if others else np.zeros_like(y)
    artifact = y - a @ coef
    sr = estimate.sample_rate
    return BssDecomposition(
        alpha=float(coef[target_index]),
        beta=tuple(float(coef[j]) for j in others),
        target=Waveform(target, sr),
        interference=Waveform(interference, sr),
        artifact=Waveform(artifact, sr),
        target_index=target_index,
    )


def sdr_sep(d: BssDecomposition) -> float:
    """Separation SDR: target energy over interference-plus-artifact energy."""
    t = d.target.samples
    rest = d.interference.samples + d.artifact.samples
    return _log_ratio_db(float(t @ t), float(rest @ rest))


def sir(d: BssDecomposition) -> float:
    """Signal-to-interference ratio: target energy over interference energy."""
    t = d.target.samples
    i = d.interference.samples
    return _log_ratio_db(float(t @ t), float(i @ i))


def sar(d: BssDecomposition) -> float:
    """Signal-to-artifact ratio: (target+interference) energy over artifact energy."""
    ti = d.target.samples + d.interference.samples
    e = d.artifact.samples
    return _log_ratio_db(float(ti @ ti), float(e @ e))


@dataclass(frozen=True)
class LoudnessReport:
    """Per-source loudness differences of a remix estimate.

    ``fitted`` holds the least-squares coefficients that best rebuild the
    estimate from the true sources; ``target`` the intended linear gains;
    ``ld_db[k]`` is |20*log10(fitted_k) - 20*log10(target_k)|. A fitted
    coefficient <= 0 has no dB reading: its LD is the +inf sentinel and its
    index appears in ``flagged``.
    """

    fitted: tuple[float, ...]
    target: tuple[float, ...]
    ld_db: tuple[float, ...]
    ld_mean: float
    flagged: tuple[int, ...]


def loudness_ls(estimate_remix: Waveform, sources: SourceSet, target: GainVector) -> LoudnessReport:
    """Fit per-source scaling factors to a remix estimate and report the dB
    gap to the intended gains."""
    if len(target) != sources.k:
        raise ValueError(f"gain vector length {len(target)} != K={sources.k}")
    if len(estimate_remix) != sources.n_samples:
        raise ValueError("estimate length does not match sources")
    a = _source_matrix(sources)
    coef = _solve_projection(a, estimate_remix.samples)
    ld = []
    flagged = []
    for k in range(sources.k):
        c = float(coef[k])
        if c <= 0.0:
            ld.append(float("inf"))
            flagged.append(k)
        else:
            ld.append(abs(20.0 * math.log10(c) - target.db[k]))
    return LoudnessReport(
        fitted=tuple(float(c) for c in coef),
        target=tuple(target.linear),
        ld_db=tuple(ld),
        ld_mean=float(np.mean(ld)),
        flagged=tuple(flagged),
    )
