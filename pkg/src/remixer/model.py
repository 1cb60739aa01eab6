"""The separation/remixing backbone.

A learned filterbank encoder (strided 1-D conv), a temporal convolutional
separator that emits K probabilistic masks (softmax across sources, so the
masked latents partition the bottleneck feature), and a transposed-conv
decoder. Three inference modes share the parameters:

- ``forward_separate``: plain separation, one estimate per source.
- output-side remixing: scale the estimates by linear gains and sum
  (``remix_from_estimates``) -- the path used by the plain and
  remix-regularized variants.
- ``forward_remix_latent``: scale each masked latent by its gain *before*
  decoding. With unity gains this is bit-identical to ``forward_separate``
  (the gain multiply is exact and the path is otherwise the same code).

Graph-building functions return autodiff tensors so the training losses can
backpropagate through any of the modes; the public forward functions run
the same graph and strip it to plain arrays.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from .audio import GainVector, Waveform

__all__ = [
    "ModelConfig",
    "ModelParams",
    "SeparationOutput",
    "init_params",
    "forward_separate",
    "forward_remix_latent",
    "remix_from_estimates",
    "decode_remix_from_cache",
    "build_graph",
    "save_checkpoint",
    "load_checkpoint",
    "Checkpoint",
    "VARIANTS",
]

VARIANTS = ("baseline", "model1", "model2")

CHECKPOINT_FORMAT = "remixer-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters, desk-scale by default."""

    k: int = 2                 # number of sources
    n_filters: int = 64        # encoder/decoder filterbank size
    kernel_len: int = 16       # encoder kernel length in samples
    stride: int = 8            # encoder hop
    bottleneck: int = 32       # separator bottleneck channels
    conv_channels: int = 64    # channels inside each separator block
    conv_kernel: int = 3       # depthwise kernel length
    blocks: int = 4            # blocks per repeat (dilations 1,2,4,...)
    repeats: int = 2
    sample_rate: int = 8000

    def __post_init__(self):
        for name in (
            "k",
            "n_filters",
            "kernel_len",
            "stride",
            "bottleneck",
            "conv_channels",
            "conv_kernel",
            "blocks",
            "repeats",
            "sample_rate",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.stride > self.kernel_len:
            raise ValueError("stride must not exceed the encoder kernel length")
        if self.k < 2:
            raise ValueError("the model needs at least two sources")
        if self.conv_kernel % 2 != 1:
            raise ValueError("conv_kernel must be odd (symmetric padding)")


@dataclass
class ModelParams:
    """All learnable tensors, keyed by a stable dotted name."""

    config: ModelConfig
    tensors: dict[str, ad.Tensor]

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            tensors={
                name: ad.Tensor(t.data.copy(), requires_grad=True)
                for name, t in self.tensors.items()
            },
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.tensors.values())


@dataclass(frozen=True)
class SeparationOutput:
    """Inference result: estimates plus the cached latent pieces that allow
    gain-only re-renders without re-running the encoder/separator."""

    estimates: tuple[Waveform, ...]
    masks: np.ndarray   # [K, N, frames]
    latent: np.ndarray  # [N, frames]
    input_length: int


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) for every weight tensor, in a fixed order.

    fan_in == 0 marks constant-initialized tensors (norm affines, PReLU
    slopes) rather than fan-in-scaled uniform ones.
    """
    n, b, h = cfg.n_filters, cfg.bottleneck, cfg.conv_channels
    p, l, k = cfg.conv_kernel, cfg.kernel_len, cfg.k
    shapes: list[tuple[str, tuple[int, ...], int]] = [
        ("encoder.w", (n, 1, l), l),
        ("sep.norm.gain", (n, 1), 0),
        ("sep.norm.bias", (n, 1), 0),
        ("sep.bottleneck.w", (b, n, 1), n),
    ]
    for r in range(cfg.repeats):
        for x in range(cfg.blocks):
            prefix = f"sep.block{r}_{x}"
            shapes += [
                (f"{prefix}.pw1.w", (h, b, 1), b),
                (f"{prefix}.prelu1.slope", (1,), 0),
                (f"{prefix}.norm1.gain", (h, 1), 0),
                (f"{prefix}.norm1.bias", (h, 1), 0),
                (f"{prefix}.dw.w", (h, p), p),
                (f"{prefix}.prelu2.slope", (1,), 0),
                (f"{prefix}.norm2.gain", (h, 1), 0),
                (f"{prefix}.norm2.bias", (h, 1), 0),
            ]
            # the final block's trunk output feeds nothing, so it carries
            # no residual head (its weights could never learn)
            if not (r == cfg.repeats - 1 and x == cfg.blocks - 1):
                shapes.append((f"{prefix}.res.w", (b, h, 1), h))
            shapes.append((f"{prefix}.skip.w", (b, h, 1), h))
    shapes += [
        ("sep.mask_prelu.slope", (1,), 0),
        ("sep.mask.w", (k * n, b, 1), b),
        ("decoder.w", (n, 1, l), n),
    ]
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initialization: weights uniform on +-sqrt(3/fan_in),
    norm gains 1, norm biases 0, PReLU slopes 0.25."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, ad.Tensor] = {}
    for name, shape, fan_in in _param_shapes(cfg):
        if fan_in == 0:
            if name.endswith(".gain"):
                data = np.ones(shape)
            elif name.endswith(".bias"):
                data = np.zeros(shape)
            else:  # PReLU slope
                data = np.full(shape, 0.25)
        else:
            bound = np.sqrt(3.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = ad.Tensor(data, requires_grad=True)
    return ModelParams(config=cfg, tensors=tensors)


def _padded_length(cfg: ModelConfig, t_in: int) -> int:
    """Smallest length >= t_in aligned to the encoder's frame grid."""
    if t_in < cfg.kernel_len:
        raise ValueError(
            f"input length {t_in} shorter than encoder kernel {cfg.kernel_len}"
        )
    overhang = (t_in - cfg.kernel_len) % cfg.stride
    return t_in if overhang == 0 else t_in + (cfg.stride - overhang)


def _tcn_block(params: ModelParams, prefix: str, x: ad.Tensor, dilation: int):
    """One separator block; returns (input + residual, skip)."""
    p = params.tensors
    block = {
        "pw1": p[f"{prefix}.pw1.w"],
        "prelu1": p[f"{prefix}.prelu1.slope"],
        "norm1_gain": p[f"{prefix}.norm1.gain"],
        "norm1_bias": p[f"{prefix}.norm1.bias"],
        "dw": p[f"{prefix}.dw.w"],
        "prelu2": p[f"{prefix}.prelu2.slope"],
        "norm2_gain": p[f"{prefix}.norm2.gain"],
        "norm2_bias": p[f"{prefix}.norm2.bias"],
        "skip": p[f"{prefix}.skip.w"],
    }
    if f"{prefix}.res.w" in p:
        block["res"] = p[f"{prefix}.res.w"]
    return ad.depthwise_separable_block(x, block, dilation=dilation)


@dataclass
class GraphOutput:
    """Autodiff view of one forward pass."""

    estimates: list[ad.Tensor]   # K tensors of shape [1, T_in]
    masks: ad.Tensor             # [K, N, frames]
    latent: ad.Tensor            # [N, frames]
    input_length: int


def build_graph(
    params: ModelParams,
    samples: np.ndarray,
    gains: GainVector | None = None,
) -> GraphOutput:
    """Run the full model on raw samples, returning graph tensors.

    With ``gains`` given, each masked latent is scaled by its linear gain
    before decoding (the latent remix path); with ``gains=None`` the plain
    separation path runs. Unity gains take the scaled path but multiply by
    exactly 1.0, which leaves every buffer bit-identical.
    """
    cfg = params.config
    p = params.tensors
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError(f"model input must be 1-D samples, got shape {samples.shape}")
    t_in = samples.shape[0]
    t_pad = _padded_length(cfg, t_in)
    padded = np.zeros(t_pad) if t_pad != t_in else None
    if padded is not None:
        padded[:t_in] = samples
    x = ad.Tensor((padded if padded is not None else samples).reshape(1, -1))

    latent = ad.conv1d(x, p["encoder.w"], stride=cfg.stride)  # [N, F]
    frames = latent.shape[1]

    y = ad.global_layer_norm(latent, p["sep.norm.gain"], p["sep.norm.bias"])
    y = ad.conv1d(y, p["sep.bottleneck.w"])
    skip_sum = None
    for r in range(cfg.repeats):
        for blk in range(cfg.blocks):
            y, skip = _tcn_block(params, f"sep.block{r}_{blk}", y, dilation=2**blk)
            skip_sum = skip if skip_sum is None else ad.add(skip_sum, skip)
    m = ad.prelu(skip_sum, p["sep.mask_prelu.slope"])
    m = ad.conv1d(m, p["sep.mask.w"])  # [K*N, F]
    m = ad.reshape(m, (cfg.k, cfg.n_filters, frames))
    masks = ad.softmax_over_sources(m)

    if gains is not None and len(gains) != cfg.k:
        raise ValueError(f"gain vector length {len(gains)} != K={cfg.k}")

    estimates = []
    for k in range(cfg.k):
        mask_k = _select_source(masks, k)  # [N, F]
        h_k = ad.hadamard(mask_k, latent)
        if gains is not None:
            h_k = ad.scale(h_k, gains.linear[k])
        decoded = ad.conv1d_transpose(h_k, p["decoder.w"], stride=cfg.stride)  # [1, T_pad]
        estimates.append(ad.time_slice(decoded, 0, t_in))

    return GraphOutput(estimates=estimates, masks=masks, latent=latent, input_length=t_in)


def _select_source(masks: ad.Tensor, k: int) -> ad.Tensor:
    """Pick mask k from [K, N, F]; gradient scatters back into the stack."""
    kd = masks.data[k]

    def backward_fn(gout: np.ndarray):
        g = np.zeros_like(masks.data)
        g[k] = gout
        return (g,)

    return ad.Tensor(kd, op="select_source", parents=(masks,), backward_fn=backward_fn)


def _to_output(graph: GraphOutput, sample_rate: int) -> SeparationOutput:
    return SeparationOutput(
        estimates=tuple(
            Waveform(e.data.reshape(-1), sample_rate) for e in graph.estimates
        ),
        masks=graph.masks.data.copy(),
        latent=graph.latent.data.copy(),
        input_length=graph.input_length,
    )


def forward_separate(params: ModelParams, x: Waveform) -> SeparationOutput:
    """Separate a mixture into K estimates (plain path, no gain injection)."""
    _check_rate(params, x)
    graph = build_graph(params, x.samples, gains=None)
    return _to_output(graph, x.sample_rate)


def forward_remix_latent(params: ModelParams, x: Waveform, gains: GainVector) -> SeparationOutput:
    """Separate with gains injected on the masked latents before decoding."""
    _check_rate(params, x)
    graph = build_graph(params, x.samples, gains=gains)
    return _to_output(graph, x.sample_rate)


def _check_rate(params: ModelParams, x: Waveform) -> None:
    if x.sample_rate != params.config.sample_rate:
        raise ValueError(
            f"waveform rate {x.sample_rate} != model rate {params.config.sample_rate}"
        )


def remix_from_estimates(out: SeparationOutput, gains: GainVector) -> Waveform:
    """Output-side remix: sum of gain-scaled estimates."""
    if len(gains) != len(out.estimates):
        raise ValueError(f"gain vector length {len(gains)} != K={len(out.estimates)}")
    sr = out.estimates[0].sample_rate
    total = np.zeros(len(out.estimates[0]), dtype=np.float64)
    for g, w in zip(gains.linear, out.estimates):
        total += g * w.samples
    return Waveform(total, sr)


def decode_remix_from_cache(
    params: ModelParams, out: SeparationOutput, gains: GainVector
) -> Waveform:
    """Latent remix re-render from a cached separation: re-runs only the
    decoder, once per source, with the gains applied to the masked latents."""
    cfg = params.config
    if len(gains) != cfg.k:
        raise ValueError(f"gain vector length {len(gains)} != K={cfg.k}")
    dec = params.tensors["decoder.w"]
    total = np.zeros(out.input_length, dtype=np.float64)
    for k in range(cfg.k):
        h_k = ad.Tensor(gains.linear[k] * (out.masks[k] * out.latent))
        decoded = ad.conv1d_transpose(h_k, dec, stride=cfg.stride)
        total += decoded.data[0, : out.input_length]
    sr = out.estimates[0].sample_rate if out.estimates else cfg.sample_rate
    return Waveform(total, sr)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Everything needed to reload a trained model bit-exactly."""

    params: ModelParams
    variant: str
    metadata: dict = field(default_factory=dict)


def _encode_array(a: np.ndarray) -> dict:
    data = np.ascontiguousarray(a, dtype="<f8")
    return {
        "shape": list(a.shape),
        "dtype": "float64",
        "data_b64": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def _decode_array(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data_b64"])
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    return a.copy()


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    """Write a JSON container: config, variant, metadata, and every tensor
    as shape + base64 little-endian float64 bytes (bit-exact round trip)."""
    if checkpoint.variant not in VARIANTS:
        raise ValueError(f"unknown variant {checkpoint.variant!r}")
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": checkpoint.variant,
        "config": asdict(checkpoint.params.config),
        "metadata": checkpoint.metadata,
        "params": {
            name: _encode_array(t.data)
            for name, t in checkpoint.params.tensors.items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a remixer checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    cfg = ModelConfig(**payload["config"])
    expected = {name for name, _, _ in _param_shapes(cfg)}
    got = set(payload["params"])
    if expected != got:
        missing = expected - got
        extra = got - expected
        raise ValueError(f"{path}: parameter set mismatch (missing {missing}, extra {extra})")
    tensors = {
        name: ad.Tensor(_decode_array(entry), requires_grad=True)
        for name, entry in payload["params"].items()
    }
    return Checkpoint(
        params=ModelParams(config=cfg, tensors=tensors),
        variant=payload["variant"],
        metadata=payload.get("metadata", {}),
    )


def checkpoint_digest(path) -> str:
    """SHA-256 of the checkpoint file, as served by the inference service."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
