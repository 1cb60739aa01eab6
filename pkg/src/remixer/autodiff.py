"""Minimal reverse-mode differentiation over numpy arrays.

Exactly the operators the remixing model and its losses need, nothing more:
strided 1-D convolution and its transpose (encoder/decoder), a dilated
depthwise convolution (separator blocks), PReLU, global layer norm, softmax
across the source axis, elementwise arithmetic, and a negative-SNR loss.

A ``Tensor`` is a graph node: float64 data, a gradient slot filled by
``backward``, and a closure mapping the output gradient to parent
gradients. Graphs are built eagerly; ``backward`` topo-sorts once, clears
every accumulator, then runs adjoints in reverse order, so repeated passes
over the same graph are bit-identical. Subgraphs that cannot reach a
differentiable leaf (targets, probes, constants) are never visited, and
adjoints skip gradient work for constant parents.

``gradient_check`` verifies any scalar-valued graph against central finite
differences; every operator here is covered by it in the test suite.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "backward",
    "conv1d",
    "conv1d_transpose",
    "depthwise_conv1d",
    "depthwise_separable_block",
    "prelu",
    "global_layer_norm",
    "softmax_over_sources",
    "scale",
    "add",
    "sub",
    "hadamard",
    "reshape",
    "time_slice",
    "sum_all",
    "neg_snr_loss",
    "gradient_check",
    "graph_tensors",
    "assert_finite_graph",
    "tune_allocator",
    "LOSS_EPS_REL",
]

# Shared with the metrics module so loss values and metric values agree.
LOSS_EPS_REL = 1e-12

_LOG10 = math.log(10.0)

_allocator_tuned = False


def tune_allocator() -> bool:
    """Keep freed graph buffers on the heap instead of returning them to
    the OS (glibc only; a no-op elsewhere).

    Each training step allocates hundreds of megabytes of short-lived
    activation and gradient buffers. With default glibc settings those come
    from fresh mmap regions, so every step pays first-touch page faults for
    the whole graph; steering large blocks to the heap and disabling trim
    lets steps reuse hot pages. Roughly halves step time on Linux.
    """
    global _allocator_tuned
    if _allocator_tuned:
        return True
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        m_trim_threshold, m_mmap_max = -1, -4
        ok = libc.mallopt(m_mmap_max, 0) == 1 and libc.mallopt(m_trim_threshold, -1) == 1
    except (OSError, AttributeError):
        ok = False
    _allocator_tuned = ok
    return ok


class Tensor:
    """One node of the computation graph: value, gradient slot, adjoint."""

    __slots__ = ("data", "grad", "requires_grad", "needs_grad", "op", "parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        op: str = "leaf",
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        # True iff some differentiable leaf is reachable below this node.
        self.needs_grad = requires_grad or any(p.needs_grad for p in parents)
        self.op = op
        self.parents = parents
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"


def _result(data, op, parents, backward_fn) -> Tensor:
    return Tensor(data, requires_grad=False, op=op, parents=parents, backward_fn=backward_fn)


def _topo_order(root: Tensor, differentiable_only: bool = False) -> list[Tensor]:
    """Iterative post-order DFS; deterministic for a fixed graph."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) in seen:
                continue
            if differentiable_only and not parent.needs_grad:
                continue
            stack.append((parent, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode pass from a scalar root.

    Clears every accumulator in the differentiable part of the graph, seeds
    the root with 1, visits each node exactly once in reverse topological
    order, and returns a map from each differentiable leaf to its gradient.
    Accumulators start at None (meaning zero); the first contribution is
    stored as-is and later ones allocate fresh sums, so gradient buffers
    are never mutated in place.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topo_order(root, differentiable_only=True)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        parent_grads = node._backward(node.grad)
        for parent, g in zip(node.parents, parent_grads):
            if g is None or not parent.needs_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    out = {}
    for node in order:
        if node.requires_grad and not node.parents:
            out[node] = node.grad if node.grad is not None else np.zeros_like(node.data)
            node.grad = out[node]
    return out


def graph_tensors(root: Tensor) -> list[Tensor]:
    """All tensors reachable from the root, in topological order."""
    return _topo_order(root)


def assert_finite_graph(root: Tensor, include_grads: bool = False) -> None:
    """Scan every buffer in the graph for NaN/Inf; raise on the first hit."""
    for node in _topo_order(root):
        if not np.all(np.isfinite(node.data)):
            raise FloatingPointError(f"non-finite values in forward buffer of {node!r}")
        if include_grads and node.grad is not None and not np.all(np.isfinite(node.grad)):
            raise FloatingPointError(f"non-finite values in gradient of {node!r}")


def _check_2d(x: Tensor, name: str) -> None:
    if x.data.ndim != 2:
        raise ValueError(f"{name} expects a [channels, time] tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


def _frame(x: np.ndarray, length: int, stride: int) -> np.ndarray:
    """Sliding windows of the last axis: [C, T] -> [C, frames, length]."""
    return np.lib.stride_tricks.sliding_window_view(x, length, axis=-1)[:, ::stride, :]


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Strided valid cross-correlation: [C_in, T] * [C_out, C_in, L] -> [C_out, T'],
    T' = floor((T - L)/stride) + 1."""
    _check_2d(x, "conv1d input")
    if kernels.data.ndim != 3:
        raise ValueError(f"conv1d kernels must be [C_out, C_in, L], got {kernels.shape}")
    c_in, t = x.shape
    c_out, kc_in, length = kernels.shape
    if kc_in != c_in:
        raise ValueError(f"kernel C_in {kc_in} != input channels {c_in}")
    if stride < 1:
        raise ValueError("stride must be a positive integer")
    if t < length:
        raise ValueError(f"input length {t} shorter than kernel {length}")

    xd, wd = x.data, kernels.data
    if length == 1 and stride == 1:
        out = wd[:, :, 0] @ xd
    else:
        frames = _frame(xd, length, stride)  # [C_in, T', L]
        tp = frames.shape[1]
        out = wd.reshape(c_out, c_in * length) @ frames.transpose(0, 2, 1).reshape(
            c_in * length, tp
        )
    tp = out.shape[1]

    def backward_fn(gout: np.ndarray):
        gx = gw = None
        if length == 1 and stride == 1:
            if x.needs_grad:
                gx = wd[:, :, 0].T @ gout
            if kernels.needs_grad:
                gw = (gout @ xd.T)[:, :, None]
        else:
            if x.needs_grad:
                gx = np.zeros_like(xd)
                for l in range(length):
                    gx[:, l : l + (tp - 1) * stride + 1 : stride] += wd[:, :, l].T @ gout
            if kernels.needs_grad:
                frames = _frame(xd, length, stride)
                gw = (gout @ frames.transpose(1, 0, 2).reshape(tp, c_in * length)).reshape(
                    c_out, c_in, length
                )
        return (gx, gw)

    return _result(out, "conv1d", (x, kernels), backward_fn)


def conv1d_transpose(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Transposed strided convolution: [C, T] * [C, C_out, L] -> [C_out, T''],
    T'' = (T - 1)*stride + L.

    With a kernel tensor shared with ``conv1d`` this is exactly conv1d's
    input-gradient map (on frame-aligned lengths), which makes the
    encoder/decoder pair adjoint.
    """
    _check_2d(x, "conv1d_transpose input")
    if kernels.data.ndim != 3:
        raise ValueError(f"transpose kernels must be [C, C_out, L], got {kernels.shape}")
    c, t = x.shape
    kc, c_out, length = kernels.shape
    if kc != c:
        raise ValueError(f"kernel channel count {kc} != input channels {c}")
    if stride < 1:
        raise ValueError("stride must be a positive integer")

    xd, wd = x.data, kernels.data
    t_out = (t - 1) * stride + length
    out = np.zeros((c_out, t_out), dtype=np.float64)
    for l in range(length):
        out[:, l : l + (t - 1) * stride + 1 : stride] += wd[:, :, l].T @ xd

    def backward_fn(gout: np.ndarray):
        gx = np.zeros_like(xd) if x.needs_grad else None
        gw = np.zeros_like(wd) if kernels.needs_grad else None
        for l in range(length):
            g_slice = gout[:, l : l + (t - 1) * stride + 1 : stride]  # [C_out, T]
            if gx is not None:
                gx += wd[:, :, l] @ g_slice
            if gw is not None:
                gw[:, :, l] = xd @ g_slice.T
        return (gx, gw)

    return _result(out, "conv1d_transpose", (x, kernels), backward_fn)


def depthwise_conv1d(x: Tensor, kernels: Tensor, dilation: int = 1) -> Tensor:
    """Per-channel dilated convolution with symmetric zero padding, so the
    time length is preserved: [C, T] * [C, P] -> [C, T]. P must be odd."""
    _check_2d(x, "depthwise_conv1d input")
    if kernels.data.ndim != 2:
        raise ValueError(f"depthwise kernels must be [C, P], got {kernels.shape}")
    c, t = x.shape
    kc, p = kernels.shape
    if kc != c:
        raise ValueError(f"kernel channel count {kc} != input channels {c}")
    if p % 2 != 1:
        raise ValueError(f"depthwise kernel length must be odd, got {p}")
    if dilation < 1:
        raise ValueError("dilation must be a positive integer")

    pad = dilation * (p - 1) // 2
    xd, wd = x.data, kernels.data
    xp = np.pad(xd, ((0, 0), (pad, pad)))
    out = np.zeros_like(xd)
    for tap in range(p):
        out += wd[:, tap : tap + 1] * xp[:, tap * dilation : tap * dilation + t]

    def backward_fn(gout: np.ndarray):
        gx = gw = None
        if x.needs_grad:
            gxp = np.zeros_like(xp)
            for tap in range(p):
                gxp[:, tap * dilation : tap * dilation + t] += wd[:, tap : tap + 1] * gout
            gx = gxp[:, pad : pad + t] if pad else gxp
        if kernels.needs_grad:
            gw = np.empty_like(wd)
            for tap in range(p):
                gw[:, tap] = np.einsum(
                    "ct,ct->c", xp[:, tap * dilation : tap * dilation + t], gout
                )
        return (gx, gw)

    return _result(out, "depthwise_conv1d", (x, kernels), backward_fn)


_BLOCK_PARAM_KEYS = (
    "pw1",
    "prelu1",
    "norm1_gain",
    "norm1_bias",
    "dw",
    "prelu2",
    "norm2_gain",
    "norm2_bias",
    "skip",
)


def depthwise_separable_block(
    x: Tensor, params: dict[str, Tensor], dilation: int
) -> tuple[Tensor, Tensor]:
    """One temporal conv block: pointwise conv, PReLU, global layer norm,
    dilated depthwise conv, PReLU, global layer norm, then pointwise
    residual and skip heads. Returns (input + residual, skip); time length
    is preserved.

    ``params`` carries the keys in ``_BLOCK_PARAM_KEYS`` plus an optional
    "res". A trailing block whose trunk output feeds nothing omits "res"
    (its weights could never receive gradient); the first output is then
    the unchanged input. With all-zero weights the residual head
    contributes nothing, so the first output equals the input either way.
    """
    missing = [k for k in _BLOCK_PARAM_KEYS if k not in params]
    if missing:
        raise ValueError(f"block params missing {missing}")
    y = conv1d(x, params["pw1"])
    y = prelu(y, params["prelu1"])
    y = global_layer_norm(y, params["norm1_gain"], params["norm1_bias"])
    y = depthwise_conv1d(y, params["dw"], dilation=dilation)
    y = prelu(y, params["prelu2"])
    y = global_layer_norm(y, params["norm2_gain"], params["norm2_bias"])
    skip = conv1d(y, params["skip"])
    if "res" in params:
        trunk = add(x, conv1d(y, params["res"]))
    else:
        trunk = x
    return trunk, skip


# ---------------------------------------------------------------------------
# Nonlinearities and normalization
# ---------------------------------------------------------------------------


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Parametric ReLU with a single learned negative slope."""
    if slope.data.size != 1:
        raise ValueError(f"prelu slope must be a scalar tensor, got shape {slope.shape}")
    xd = x.data
    a = float(slope.data.reshape(-1)[0])
    neg = np.minimum(xd, 0.0)
    out = np.maximum(xd, 0.0)
    out += a * neg

    def backward_fn(gout: np.ndarray):
        gx = ga = None
        if x.needs_grad:
            # derivative is 1 on the positive side, a on the negative side
            mask = xd < 0.0
            gx = gout + (a - 1.0) * (gout * mask)
        if slope.needs_grad:
            ga = np.array(np.vdot(gout, neg)).reshape(slope.data.shape)
        return (gx, ga)

    return _result(out, "prelu", (x, slope), backward_fn)


def global_layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize over all channels and time jointly, then apply a per-channel
    affine: gain * (x - mean)/sqrt(var + eps) + bias. gain/bias are [C, 1]."""
    _check_2d(x, "global_layer_norm input")
    c = x.shape[0]
    if gain.shape != (c, 1) or bias.shape != (c, 1):
        raise ValueError(f"gain/bias must be [{c}, 1], got {gain.shape} and {bias.shape}")
    xd = x.data
    n = xd.size
    mean = xd.mean()
    xhat = xd - mean
    var = np.vdot(xhat, xhat) / n
    inv_std = 1.0 / math.sqrt(var + eps)
    xhat *= inv_std
    out = gain.data * xhat
    out += bias.data

    def backward_fn(gout: np.ndarray):
        ggain = gbias = gx = None
        if gain.needs_grad:
            ggain = np.einsum("ct,ct->c", gout, xhat)[:, None]
        if bias.needs_grad:
            gbias = gout.sum(axis=1, keepdims=True)
        if x.needs_grad:
            gy = gout * gain.data
            m1 = gy.mean()
            m2 = np.vdot(gy, xhat) / n
            gx = gy
            gx -= m1
            gx -= m2 * xhat
            gx *= inv_std
        return (gx, ggain, gbias)

    return _result(out, "global_layer_norm", (x, gain, bias), backward_fn)


def softmax_over_sources(x: Tensor) -> Tensor:
    """Softmax along axis 0 (the source axis); output sums to one at every
    remaining position."""
    xd = x.data
    if xd.ndim < 2:
        raise ValueError(f"softmax_over_sources needs at least 2 dims, got {xd.shape}")
    shifted = xd - xd.max(axis=0, keepdims=True)
    y = np.exp(shifted, out=shifted)
    y /= y.sum(axis=0, keepdims=True)

    def backward_fn(gout: np.ndarray):
        if not x.needs_grad:
            return (None,)
        gy = gout * y
        gy -= y * gy.sum(axis=0, keepdims=True)
        return (gy,)

    return _result(y, "softmax_over_sources", (x,), backward_fn)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a plain scalar constant (not a graph node)."""
    c = float(c)
    return _result(
        x.data * c,
        "scale",
        (x,),
        lambda gout: (gout * c if x.needs_grad else None,),
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _result(a.data + b.data, "add", (a, b), lambda gout: (gout, gout))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _result(
        a.data - b.data,
        "sub",
        (a, b),
        lambda gout: (gout, -gout if b.needs_grad else None),
    )


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shaped tensors."""
    _check_same_shape(a, b, "hadamard")
    ad_, bd = a.data, b.data

    def backward_fn(gout: np.ndarray):
        return (
            gout * bd if a.needs_grad else None,
            gout * ad_ if b.needs_grad else None,
        )

    return _result(ad_ * bd, "hadamard", (a, b), backward_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    xd = x.data
    out = xd.reshape(shape)
    return _result(out, "reshape", (x,), lambda gout: (gout.reshape(xd.shape),))


def time_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice the last axis; the gradient zero-pads back to the input length."""
    t = x.shape[-1]
    if not (0 <= start < stop <= t):
        raise ValueError(f"bad slice [{start}:{stop}] for time length {t}")

    def backward_fn(gout: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = gout
        return (gx,)

    return _result(x.data[..., start:stop], "time_slice", (x,), backward_fn)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar node."""

    def backward_fn(gout: np.ndarray):
        return (np.full_like(x.data, float(gout)),)

    return _result(np.array(x.data.sum()), "sum_all", (x,), backward_fn)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def neg_snr_loss(reference: Tensor, estimate: Tensor) -> Tensor:
    """Negative SNR in dB: -10*log10(||s||^2 / (||e - s||^2 + eps)).

    The epsilon floor (LOSS_EPS_REL * ||s||^2) caps the value at -120 for a
    perfect estimate, matching the metrics module exactly. Differentiable
    w.r.t. the estimate only; the reference must be a constant.
    """
    _check_same_shape(reference, estimate, "neg_snr_loss")
    if reference.needs_grad:
        raise ValueError("neg_snr_loss reference must not require gradients")
    s = reference.data
    num = float(np.vdot(s, s))
    if num == 0.0:
        raise ValueError("neg_snr_loss undefined for an all-zero reference")
    err = estimate.data - s
    den = float(np.vdot(err, err)) + LOSS_EPS_REL * num
    value = -10.0 * math.log10(num / den)

    def backward_fn(gout: np.ndarray):
        g_est = (float(gout) * 20.0 / (_LOG10 * den)) * err
        return (None, g_est)

    return _result(np.array(value), "neg_snr_loss", (reference, estimate), backward_fn)


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


def gradient_check(
    fn: Callable[..., Tensor],
    tensors: Sequence[Tensor],
    perturbation: float = 1e-5,
    max_checks_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``fn`` maps the given tensors to a scalar Tensor. Every tensor with
    ``requires_grad`` is perturbed elementwise (optionally a random subset
    of ``max_checks_per_tensor`` elements) and the worst relative error is
    returned. Relative error uses max(|analytic|, |numeric|, 1e-3) as the
    denominator so near-zero gradients are compared absolutely.
    """
    root = fn(*tensors)
    grads = backward(root)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        if not t.requires_grad:
            continue
        analytic = grads[t]
        flat = t.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_checks_per_tensor is not None and flat.size > max_checks_per_tensor:
            indices = rng.choice(flat.size, size=max_checks_per_tensor, replace=False)
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + perturbation
            f_plus = float(fn(*tensors).data)
            flat[idx] = original - perturbation
            f_minus = float(fn(*tensors).data)
            flat[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * perturbation)
            a = float(analytic.reshape(-1)[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, err)
    return worst
