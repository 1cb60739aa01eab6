"""Loss assembly, Adam, and the training loop.

Three objectives share one error function (negative SNR, in dB, averaged
over the batch):

- plain separation: sum of per-source errors, gains play no role;
- remix-regularized (output side): psi * remix error + lambda * sum of
  per-source errors, the remix built in-graph from the gain-scaled
  estimates;
- latent remix: estimates come from the gain-injected decoder path, the
  per-source term compares against the *scaled* targets gamma_k * s_k and
  the remix term against the gain-weighted mixture.

Setting psi=0 in the output-side objective reproduces the plain objective
exactly, value and gradients.

The loop samples fresh gains per item per step, keeps a frozen per-item
gain set for validation so early stopping compares like with like, tracks
the best validation loss, and stops after ``patience`` epochs without
improvement. Everything is deterministic given the seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .audio import GainVector, SourceSet, mix, remix_target, sample_training_gains
from .model import ModelConfig, ModelParams, build_graph, init_params

__all__ = [
    "LossWeights",
    "TrainConfig",
    "AdamState",
    "StepAbortError",
    "loss_baseline",
    "loss_model1",
    "loss_model2",
    "batch_loss",
    "adam_step",
    "train",
    "TrainResult",
    "EpochStats",
    "write_history_csv",
]


class StepAbortError(RuntimeError):
    """An optimizer step was aborted (non-finite gradient)."""


@dataclass(frozen=True)
class LossWeights:
    """Remix-term weight psi and source-term weight lambda."""

    psi: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if self.psi < 0 or self.lam < 0:
            raise ValueError("loss weights must be non-negative")
        if self.psi == 0 and self.lam == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "model1"
    weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 1e-3
    batch_size: int = 8
    segment_s: float = 1.0
    max_epochs: int = 200
    patience: int = 10
    gain_low_db: float = -12.0
    gain_high_db: float = 12.0
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("baseline", "model1", "model2"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _mean_of(nodes: list[ad.Tensor]) -> ad.Tensor:
    total = nodes[0]
    for n in nodes[1:]:
        total = ad.add(total, n)
    return ad.scale(total, 1.0 / len(nodes))


def _weighted(remix_term: ad.Tensor | None, source_term: ad.Tensor | None, w: LossWeights):
    parts = []
    if remix_term is not None and w.psi != 0.0:
        parts.append(ad.scale(remix_term, w.psi))
    if source_term is not None and w.lam != 0.0:
        parts.append(ad.scale(source_term, w.lam))
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    return total


def loss_baseline(params: ModelParams, batch: list[SourceSet]) -> ad.Tensor:
    """Mean over the batch of the summed per-source negative SNR."""
    if not batch:
        raise ValueError("empty batch")
    items = []
    for sources in batch:
        graph = build_graph(params, mix(sources).samples)
        terms = [
            ad.neg_snr_loss(ad.Tensor(w.samples.reshape(1, -1)), est)
            for w, est in zip(sources.sources, graph.estimates)
        ]
        item = terms[0]
        for t in terms[1:]:
            item = ad.add(item, t)
        items.append(item)
    return _mean_of(items)


def loss_model1(
    params: ModelParams,
    batch: list[SourceSet],
    gains: list[GainVector],
    weights: LossWeights = LossWeights(),
) -> ad.Tensor:
    """Output-side remix objective: psi * E(y||sum gamma_k s_hat_k) +
    lambda * sum_k E(s_k||s_hat_k), averaged over the batch.

    With psi=0 this equals ``loss_baseline`` exactly (same graph nodes for
    the source terms, same mean)."""
    _check_batch(batch, gains)
    items = []
    for sources, g in zip(batch, gains):
        graph = build_graph(params, mix(sources).samples)
        source_term = None
        if weights.lam != 0.0:
            terms = [
                ad.neg_snr_loss(ad.Tensor(w.samples.reshape(1, -1)), est)
                for w, est in zip(sources.sources, graph.estimates)
            ]
            source_term = terms[0]
            for t in terms[1:]:
                source_term = ad.add(source_term, t)
        remix_term = None
        if weights.psi != 0.0:
            remix_est = _sum_scaled(graph.estimates, g.linear)
            target = remix_target(sources, g)
            remix_term = ad.neg_snr_loss(
                ad.Tensor(target.samples.reshape(1, -1)), remix_est
            )
        items.append(_weighted(remix_term, source_term, weights))
    return _mean_of(items)


def loss_model2(
    params: ModelParams,
    batch: list[SourceSet],
    gains: list[GainVector],
    weights: LossWeights = LossWeights(),
) -> ad.Tensor:
    """Latent remix objective: estimates are decoded from gain-scaled
    latents; the source term targets gamma_k * s_k and the remix term the
    gain-weighted mixture."""
    _check_batch(batch, gains)
    items = []
    for sources, g in zip(batch, gains):
        graph = build_graph(params, mix(sources).samples, gains=g)
        source_term = None
        if weights.lam != 0.0:
            terms = [
                ad.neg_snr_loss(
                    ad.Tensor((gamma * w.samples).reshape(1, -1)), est
                )
                for gamma, w, est in zip(g.linear, sources.sources, graph.estimates)
            ]
            source_term = terms[0]
            for t in terms[1:]:
                source_term = ad.add(source_term, t)
        remix_term = None
        if weights.psi != 0.0:
            remix_est = _sum_scaled(graph.estimates, [1.0] * sources.k)
            target = remix_target(sources, g)
            remix_term = ad.neg_snr_loss(
                ad.Tensor(target.samples.reshape(1, -1)), remix_est
            )
        items.append(_weighted(remix_term, source_term, weights))
    return _mean_of(items)


def _sum_scaled(estimates: list[ad.Tensor], factors) -> ad.Tensor:
    total = None
    for est, c in zip(estimates, factors):
        term = ad.scale(est, c) if c != 1.0 else est
        total = term if total is None else ad.add(total, term)
    return total


def _check_batch(batch: list[SourceSet], gains: list[GainVector]) -> None:
    if not batch:
        raise ValueError("empty batch")
    if len(gains) != len(batch):
        raise ValueError(f"{len(gains)} gain vectors for {len(batch)} items")
    for sources, g in zip(batch, gains):
        if len(g) != sources.k:
            raise ValueError("gain vector length does not match source count")


def batch_loss(
    params: ModelParams,
    variant: str,
    batch: list[SourceSet],
    gains: list[GainVector],
    weights: LossWeights,
) -> ad.Tensor:
    if variant == "baseline":
        return loss_baseline(params, batch)
    if variant == "model1":
        return loss_model1(params, batch, gains, weights)
    if variant == "model2":
        return loss_model2(params, batch, gains, weights)
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.tensors.items()},
            v={name: np.zeros_like(t.data) for name, t in params.tensors.items()},
        )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Standard Adam update with bias correction, in place and deterministic.

    A non-finite gradient aborts the step before touching any parameter.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise StepAbortError(f"non-finite gradient for {name!r} at step {state.step + 1}")
        if params.tensors[name].data.shape != g.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        params.tensors[name].data -= lr * update


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    best: bool


@dataclass
class TrainResult:
    params: ModelParams
    variant: str
    history: list[EpochStats]
    best_epoch: int
    best_val_loss: float
    diverged: bool = False


def _param_grads(params: ModelParams, root: ad.Tensor) -> dict[str, np.ndarray]:
    grad_map = ad.backward(root)
    return {
        name: grad_map.get(t, np.zeros_like(t.data))
        for name, t in params.tensors.items()
    }


def train(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    train_set: list[SourceSet],
    val_set: list[SourceSet],
) -> TrainResult:
    """Full training run with early stopping.

    Per epoch: shuffle items, sample one gain vector per item, take Adam
    steps on mini-batches, then score the validation set under its frozen
    gain vectors. The best-validation parameters are kept and returned. A
    non-finite loss or gradient stops the run and returns the last good
    checkpoint with ``diverged=True``.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be nonempty")
    ad.tune_allocator()
    k = train_set[0].k
    rng = np.random.default_rng(cfg.seed)
    params = init_params(model_cfg, cfg.seed)
    state = AdamState.for_params(params)

    # Frozen validation gains: one vector per item for the whole run.
    val_gains = [
        sample_training_gains(k, rng, cfg.gain_low_db, cfg.gain_high_db)
        for _ in val_set
    ]

    best_val = float("inf")
    best_params = params.copy()
    best_epoch = -1
    bad_epochs = 0
    history: list[EpochStats] = []
    diverged = False

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_set))
        epoch_losses = []
        aborted = False
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            batch = [train_set[i] for i in batch_idx]
            gains = [
                sample_training_gains(k, rng, cfg.gain_low_db, cfg.gain_high_db)
                for _ in batch
            ]
            root = batch_loss(params, cfg.variant, batch, gains, cfg.weights)
            loss_value = float(root.data)
            if not np.isfinite(loss_value):
                aborted = True
                break
            try:
                adam_step(params, _param_grads(params, root), state, cfg.learning_rate)
            except StepAbortError:
                aborted = True
                break
            epoch_losses.append(loss_value)
        if aborted or not epoch_losses:
            diverged = True
            break

        val_loss = _validation_loss(params, cfg, val_set, val_gains)
        train_loss = float(np.mean(epoch_losses))
        improved = val_loss < best_val
        if improved:
            best_val = val_loss
            best_params = params.copy()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
        history.append(EpochStats(epoch, train_loss, val_loss, improved))
        if bad_epochs >= cfg.patience:
            break

    return TrainResult(
        params=best_params,
        variant=cfg.variant,
        history=history,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        diverged=diverged,
    )


def _validation_loss(
    params: ModelParams,
    cfg: TrainConfig,
    val_set: list[SourceSet],
    val_gains: list[GainVector],
) -> float:
    total = 0.0
    for sources, gains in zip(val_set, val_gains):
        node = batch_loss(params, cfg.variant, [sources], [gains], cfg.weights)
        total += float(node.data)
    return total / len(val_set)


def write_history_csv(path, history: list[EpochStats]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_loss", "best_flag"])
        for row in history:
            writer.writerow(
                [row.epoch, repr(row.train_loss), repr(row.val_loss), int(row.best)]
            )


def history_rows(history: list[EpochStats]) -> list[dict]:
    return [asdict(h) for h in history]
