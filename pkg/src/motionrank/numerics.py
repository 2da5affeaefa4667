"""Dense layer primitives with explicit forward/backward passes, Adam, and a
finite-difference gradient checker.

Tensors are plain ``numpy.ndarray`` objects in float64. Every convolution
accepts either a single image ``(C, H, W)`` or a batch ``(N, C, H, W)``; the
output keeps the same rank as the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError, InvalidShapeError, NumericError

Params = Dict[str, np.ndarray]

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "linear")


@dataclass
class LayerGrad:
    input_grad: np.ndarray
    param_grads: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step_count: int = 0


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# --------------------------------------------------------------------------
# convolution helpers


def _batched(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = as_tensor(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise InvalidShapeError(f"expected CxHxW or NxCxHxW input, got shape {x.shape}")


def _unbatch(x: np.ndarray, single: bool) -> np.ndarray:
    return x[0] if single else x


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def transpose_output_size(size: int, k: int, stride: int, pad: int, out_adjust: int) -> int:
    return stride * (size - 1) + k - 2 * pad + out_adjust


def _check_conv_args(k: int, stride: int, pad: int) -> None:
    if stride < 1:
        raise InvalidArgumentError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise InvalidArgumentError(f"pad must be >= 0, got {pad}")
    if k < 1:
        raise InvalidShapeError(f"kernel size must be >= 1, got {k}")


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Rows are output positions (n, i, j), columns are (c, ki, kj)."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def _col2im(cols: np.ndarray, shape: Tuple[int, int, int, int], k: int, stride: int,
            ho: int, wo: int) -> np.ndarray:
    """Scatter-add the inverse of ``_im2col`` into a zero buffer of ``shape``."""
    n, c = shape[:2]
    cols = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(shape)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + hspan:stride, j:j + wspan:stride] += cols[:, :, i, j]
    return out


def _rows_to_nchw(rows: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    return rows.reshape(n, h, w, -1).transpose(0, 3, 1, 2)


def _nchw_to_rows(x: np.ndarray) -> np.ndarray:
    return x.transpose(0, 2, 3, 1).reshape(-1, x.shape[1])


# --------------------------------------------------------------------------
# convolution


def conv2d_forward(input, kernels, bias, stride: int = 1, pad: int = 0) -> np.ndarray:
    x, single = _batched(input)
    kernels = as_tensor(kernels)
    bias = as_tensor(bias)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise InvalidShapeError(f"kernels must be FxCxKxK, got {kernels.shape}")
    f, c, k, _ = kernels.shape
    _check_conv_args(k, stride, pad)
    n, cx, h, w = x.shape
    if cx != c:
        raise InvalidShapeError(f"input has {cx} channels but kernels expect {c}")
    if bias.shape != (f,):
        raise InvalidShapeError(f"bias shape {bias.shape} != ({f},)")
    if k > h + 2 * pad or k > w + 2 * pad:
        raise InvalidShapeError(f"kernel {k} larger than padded input {h}x{w} (pad {pad})")
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, k, stride, ho, wo)
    rows = cols @ kernels.reshape(f, -1).T + bias
    return _unbatch(_rows_to_nchw(rows, n, ho, wo), single)


def conv2d_backward(input, kernels, stride: int, pad: int, upstream_grad) -> LayerGrad:
    """Gradients of a convolution w.r.t. input, ``kernels`` and ``bias``."""
    x, single = _batched(input)
    kernels = as_tensor(kernels)
    g, g_single = _batched(upstream_grad)
    f, c, k, _ = kernels.shape
    n, cx, h, w = x.shape
    if cx != c:
        raise InvalidShapeError(f"input has {cx} channels but kernels expect {c}")
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(w, k, stride, pad)
    if g.shape != (n, f, ho, wo) or g_single != single:
        raise InvalidShapeError(f"upstream grad shape {np.shape(upstream_grad)} does not match "
                                f"conv output {(n, f, ho, wo)}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, k, stride, ho, wo)
    grows = _nchw_to_rows(g)
    dkernels = (grows.T @ cols).reshape(kernels.shape)
    dbias = g.sum(axis=(0, 2, 3))
    dxp = _col2im(grows @ kernels.reshape(f, -1), xp.shape, k, stride, ho, wo)
    dx = dxp[:, :, pad:pad + h, pad:pad + w]
    return LayerGrad(_unbatch(dx, single), {"kernels": dkernels, "bias": dbias})


def conv2d_transpose_forward(input, kernels, bias, stride: int = 1, pad: int = 0,
                             out_adjust: int = 0) -> np.ndarray:
    """Transposed convolution with kernels laid out ``(C_in, C_out, K, K)``.

    This is the adjoint of ``conv2d_forward`` with the same kernel array, so
    ``kernels`` of a convolution mapping C -> F can be reused directly.
    """
    x, single = _batched(input)
    kernels = as_tensor(kernels)
    bias = as_tensor(bias)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise InvalidShapeError(f"kernels must be CinxCoutxKxK, got {kernels.shape}")
    cin, cout, k, _ = kernels.shape
    _check_conv_args(k, stride, pad)
    if not 0 <= out_adjust < stride:
        raise InvalidArgumentError(f"out_adjust must be in [0, stride), got {out_adjust}")
    n, cx, h, w = x.shape
    if cx != cin:
        raise InvalidShapeError(f"input has {cx} channels but kernels expect {cin}")
    if bias.shape != (cout,):
        raise InvalidShapeError(f"bias shape {bias.shape} != ({cout},)")
    ho = transpose_output_size(h, k, stride, pad, out_adjust)
    wo = transpose_output_size(w, k, stride, pad, out_adjust)
    if ho < 1 or wo < 1:
        raise InvalidShapeError(f"transposed conv output would be {ho}x{wo}")
    cols = _nchw_to_rows(x) @ kernels.reshape(cin, -1)
    full = (n, cout, ho + 2 * pad, wo + 2 * pad)
    buf = _col2im(cols, full, k, stride, h, w)
    out = buf[:, :, pad:pad + ho, pad:pad + wo] + bias[None, :, None, None]
    return _unbatch(out, single)


def conv2d_transpose_backward(input, kernels, stride: int, pad: int, out_adjust: int,
                              upstream_grad) -> LayerGrad:
    x, single = _batched(input)
    kernels = as_tensor(kernels)
    g, g_single = _batched(upstream_grad)
    cin, cout, k, _ = kernels.shape
    n, cx, h, w = x.shape
    if cx != cin:
        raise InvalidShapeError(f"input has {cx} channels but kernels expect {cin}")
    if not 0 <= out_adjust < stride:
        raise InvalidArgumentError(f"out_adjust must be in [0, stride), got {out_adjust}")
    ho = transpose_output_size(h, k, stride, pad, out_adjust)
    wo = transpose_output_size(w, k, stride, pad, out_adjust)
    if g.shape != (n, cout, ho, wo) or g_single != single:
        raise InvalidShapeError(f"upstream grad shape {np.shape(upstream_grad)} does not match "
                                f"transposed conv output {(n, cout, ho, wo)}")
    gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    gcols = _im2col(gp, k, stride, h, w)
    km = kernels.reshape(cin, -1)
    xrows = _nchw_to_rows(x)
    dx = _rows_to_nchw(gcols @ km.T, n, h, w)
    dkernels = (xrows.T @ gcols).reshape(kernels.shape)
    dbias = g.sum(axis=(0, 2, 3))
    return LayerGrad(_unbatch(dx, single), {"kernels": dkernels, "bias": dbias})


# --------------------------------------------------------------------------
# elementwise / dense


def _check_activation(kind: str, slope: float) -> None:
    if kind not in ACTIVATIONS:
        raise InvalidArgumentError(f"unknown activation {kind!r}")
    if kind == "leaky_relu" and not 0.0 < slope < 1.0:
        raise InvalidArgumentError(f"leaky_relu slope must be in (0, 1), got {slope}")


def activation_forward(x, kind: str, slope: float = 0.2) -> np.ndarray:
    _check_activation(kind, slope)
    x = as_tensor(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, slope * x)
    if kind == "tanh":
        return np.tanh(x)
    return x.copy()


def activation_backward(x, kind: str, upstream, slope: float = 0.2) -> np.ndarray:
    _check_activation(kind, slope)
    x = as_tensor(x)
    upstream = as_tensor(upstream)
    if kind == "relu":
        return upstream * (x > 0)
    if kind == "leaky_relu":
        return upstream * np.where(x > 0, 1.0, slope)
    if kind == "tanh":
        return upstream * (1.0 - np.tanh(x) ** 2)
    return upstream.copy()


def dense_forward(x, W, b) -> np.ndarray:
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise InvalidShapeError(f"dense shapes x{x.shape} W{W.shape} b{b.shape} do not agree")
    return x @ W.T + b


def dense_backward(x, W, upstream) -> LayerGrad:
    x, W, g = as_tensor(x), as_tensor(W), as_tensor(upstream)
    if g.shape[-1] != W.shape[0] or x.shape[-1] != W.shape[1]:
        raise InvalidShapeError(f"dense backward shapes x{x.shape} W{W.shape} g{g.shape}")
    if x.ndim == 1:
        dW = np.outer(g, x)
        db = g.copy()
    else:
        dW = g.T @ x
        db = g.sum(axis=0)
    return LayerGrad(g @ W, {"W": dW, "b": db})


def softmax(logits) -> np.ndarray:
    z = as_tensor(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label) -> Tuple[float, np.ndarray]:
    """Cross-entropy of ``softmax(logits)`` against integer labels.

    A 1-D ``logits`` takes a scalar label. A 2-D batch takes one label per
    row; the loss is the batch mean and the gradient is scaled to match.
    """
    z = as_tensor(logits)
    labels = np.atleast_1d(np.asarray(label))
    if z.ndim not in (1, 2):
        raise InvalidShapeError(f"logits must be 1-D or 2-D, got {z.shape}")
    n_cls = z.shape[-1]
    if not np.issubdtype(labels.dtype, np.integer) or np.any(labels < 0) or np.any(labels >= n_cls):
        raise InvalidArgumentError(f"label {label} out of range for {n_cls} classes")
    zb = z[None] if z.ndim == 1 else z
    if labels.shape[0] != zb.shape[0]:
        raise InvalidShapeError(f"{labels.shape[0]} labels for {zb.shape[0]} logit rows")
    shifted = zb - zb.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(zb.shape[0])
    losses = log_z - shifted[rows, labels]
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, labels] -= 1.0
    grad /= zb.shape[0]
    if z.ndim == 1:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad


# --------------------------------------------------------------------------
# optimisation


def adam_init(params: Mapping[str, np.ndarray]) -> AdamState:
    return AdamState(m={k: np.zeros_like(v) for k, v in params.items()},
                     v={k: np.zeros_like(v) for k, v in params.items()},
                     step_count=0)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float = 1e-4, beta1: float = 0.5,
              beta2: float = 0.999, eps: float = 0.1) -> Tuple[Params, AdamState]:
    """One bias-corrected Adam update; ``eps`` is added to sqrt(v_hat).

    Returns fresh dictionaries; the inputs are left untouched.
    """
    step = state.step_count + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name], new_m[name], new_v[name] = p, state.m[name], state.v[name]
            continue
        if np.shape(g) != np.shape(p):
            raise InvalidShapeError(f"grad {name} has shape {np.shape(g)}, param {np.shape(p)}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, step)


# --------------------------------------------------------------------------
# verification


def gradcheck(loss_fn: Callable[[Params], Tuple[float, Mapping[str, np.ndarray]]],
              params: Mapping[str, np.ndarray], eps: float = 1e-3,
              n_samples: Optional[int] = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)``. When ``n_samples`` is
    given, that many coordinates per tensor are drawn at random; otherwise
    every coordinate is checked.
    """
    if eps <= 0:
        raise InvalidArgumentError("eps must be positive")
    base = {k: as_tensor(v).copy() for k, v in params.items()}
    loss, grads = loss_fn(base)
    if not np.isfinite(loss):
        raise NumericError(f"loss is not finite: {loss}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in base.items():
        analytic = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if n_samples is not None and n_samples < flat.size:
            idx = rng.choice(flat.size, size=n_samples, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up, _ = loss_fn(base)
            flat[i] = orig - eps
            down, _ = loss_fn(base)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * eps)
            a = analytic[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
