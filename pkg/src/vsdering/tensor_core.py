"""Small deterministic neural-network kernels on 4-axis ``(n, c, h, w)`` arrays.

Plain numpy arrays play the role of tensors; gradients for learnable
parameters live next to the values on the parameter containers.  Convolutions
are stride 1 with zero "same" padding and odd kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# im2col buffers above this size are split along the output rows
_COL_BYTES_LIMIT = 256 * 2**20


class ShapeError(ValueError):
    """Raised when array dimensions do not satisfy an operation's contract."""


def _check_4d(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}")


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass
class ConvParams:
    kernels: np.ndarray  # (c_out, c_in, k_h, k_w)
    biases: np.ndarray  # (c_out,)
    kernel_grad: np.ndarray = field(default=None, repr=False)
    bias_grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kernels.ndim != 4:
            raise ShapeError(f"kernels must be 4-D, got shape {self.kernels.shape}")
        c_out, _, kh, kw = self.kernels.shape
        if c_out < 1:
            raise ShapeError("conv needs at least one output channel")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel dims must be odd for same padding, got {kh}x{kw}")
        if self.biases.shape != (c_out,):
            raise ShapeError(
                f"biases shape {self.biases.shape} does not match c_out={c_out}"
            )
        if self.kernel_grad is None:
            self.kernel_grad = np.zeros_like(self.kernels)
        if self.bias_grad is None:
            self.bias_grad = np.zeros_like(self.biases)

    @property
    def c_out(self) -> int:
        return self.kernels.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernels.shape[1]

    def parameters(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        yield "kernels", self.kernels, self.kernel_grad
        yield "biases", self.biases, self.bias_grad

    def zero_grad(self) -> None:
        self.kernel_grad[...] = 0
        self.bias_grad[...] = 0


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.9
    mode: str = "train"
    gamma_grad: np.ndarray = field(default=None, repr=False)
    beta_grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        c = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != (c,):
                raise ShapeError(f"{name} must have length {c}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        if np.any(self.running_var < 0):
            raise ValueError("running_var must be non-negative")
        if self.mode not in ("train", "infer"):
            raise ValueError(f"unknown batchnorm mode {self.mode!r}")
        if self.gamma_grad is None:
            self.gamma_grad = np.zeros_like(self.gamma)
        if self.beta_grad is None:
            self.beta_grad = np.zeros_like(self.beta)

    @classmethod
    def identity(cls, channels: int, dtype=np.float32, **kwargs) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            **kwargs,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def parameters(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        yield "gamma", self.gamma, self.gamma_grad
        yield "beta", self.beta, self.beta_grad

    def zero_grad(self) -> None:
        self.gamma_grad[...] = 0
        self.beta_grad[...] = 0


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, rows: slice, w: int) -> np.ndarray:
    """Rows of patches ``(n*r*w, kh*kw*c)`` from padded channels-last ``xp``."""
    n, c = xp.shape[0], xp.shape[3]
    band = xp[:, rows.start : rows.stop + kh - 1]
    win = sliding_window_view(band, (kh, kw), axis=(1, 2))  # (n, r, w, c, kh, kw)
    r = rows.stop - rows.start
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * r * w, kh * kw * c)


def _row_chunks(n: int, k: int, h: int, w: int, itemsize: int) -> list[slice]:
    per_row = n * k * w * itemsize
    step = max(1, min(h, _COL_BYTES_LIMIT // max(per_row, 1)))
    return [slice(y, min(y + step, h)) for y in range(0, h, step)]


def _correlate_nhwc(x: np.ndarray, kmat: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Same-size correlation of channels-last ``x`` with ``kmat`` (kh*kw*c_in, c_out)."""
    n, h, w, c = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.empty((n, h, w, kmat.shape[1]), dtype=np.result_type(x, kmat))
    for rows in _row_chunks(n, kh * kw * c, h, w, x.itemsize):
        cols = _im2col(xp, kh, kw, rows, w)
        out[:, rows] = (cols @ kmat).reshape(n, -1, w, kmat.shape[1])
    return out


def _check_conv(x: np.ndarray, params: ConvParams) -> None:
    _check_4d(x)
    if x.shape[1] != params.c_in:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[1]} channels but kernels "
            f"shape {params.kernels.shape} expect {params.c_in}"
        )


def conv2d_forward(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """Same-size 2-D cross-correlation plus per-channel bias.

    ``out[n, co, y, x] = b[co] + sum k[co, ci, dy, dx] * xpad[n, ci, y + dy, x + dx]``
    """
    _check_conv(x, params)
    c_out, c_in, kh, kw = params.kernels.shape
    # (kh, kw, c_in, c_out) flattened to match the im2col column order
    kmat = params.kernels.transpose(2, 3, 1, 0).reshape(kh * kw * c_in, c_out)
    out = _correlate_nhwc(x.transpose(0, 2, 3, 1), kmat, kh, kw)
    out += params.biases
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(
    x: np.ndarray, params: ConvParams, upstream: np.ndarray
) -> np.ndarray:
    """Return d(loss)/d(x) and accumulate kernel and bias gradients."""
    _check_conv(x, params)
    n, _, h, w = x.shape
    c_out, c_in, kh, kw = params.kernels.shape
    if upstream.shape != (n, c_out, h, w):
        raise ShapeError(
            f"upstream grad shape {upstream.shape} != forward output shape "
            f"{(n, c_out, h, w)}"
        )
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x.transpose(0, 2, 3, 1), ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    up = upstream.transpose(0, 2, 3, 1)
    dk = np.zeros((kh * kw * c_in, c_out), dtype=np.result_type(x, upstream))
    for rows in _row_chunks(n, kh * kw * c_in, h, w, x.itemsize):
        cols = _im2col(xp, kh, kw, rows, w)
        dk += cols.T @ up[:, rows].reshape(-1, c_out)
    params.kernel_grad += dk.reshape(kh, kw, c_in, c_out).transpose(3, 2, 0, 1)
    params.bias_grad += upstream.sum(axis=(0, 2, 3), dtype=np.float64).astype(
        params.bias_grad.dtype
    )
    # input grad: correlate upstream with the spatially flipped, channel-swapped kernels
    flipped = params.kernels[:, :, ::-1, ::-1]
    kmat = flipped.transpose(2, 3, 0, 1).reshape(kh * kw * c_out, c_in)
    dx = _correlate_nhwc(up, kmat, kh, kw)
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2))


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormCache:
    params: BatchNormParams
    xhat: np.ndarray
    inv_std: np.ndarray
    mode: str
    used: bool = False


def batchnorm_forward(
    x: np.ndarray, params: BatchNormParams
) -> tuple[np.ndarray, BatchNormCache]:
    """Per-channel normalization over ``(n, h, w)``.

    Train mode uses batch moments and updates the running statistics
    (``running = momentum * running + (1 - momentum) * batch``, unbiased
    variance); infer mode uses the running statistics as they are.
    """
    _check_4d(x)
    c = x.shape[1]
    if c != params.channels:
        raise ShapeError(
            f"input shape {x.shape} has {c} channels, batchnorm has {params.channels}"
        )
    shape = (1, c, 1, 1)
    if params.mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ShapeError(
                f"train-mode batchnorm needs n*h*w >= 2, got {m} for shape {x.shape}"
            )
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        mom = params.momentum
        params.running_mean[...] = mom * params.running_mean + (1 - mom) * mean
        params.running_var[...] = mom * params.running_var + (1 - mom) * var * (
            m / (m - 1)
        )
    else:
        mean = params.running_mean
        var = params.running_var
    inv_std = (1.0 / np.sqrt(var + params.eps)).astype(x.dtype)
    xhat = (x - mean.astype(x.dtype).reshape(shape)) * inv_std.reshape(shape)
    out = params.gamma.reshape(shape) * xhat + params.beta.reshape(shape)
    return out.astype(x.dtype, copy=False), BatchNormCache(
        params, xhat, inv_std, params.mode
    )


def batchnorm_backward(cache: BatchNormCache | None, upstream: np.ndarray) -> np.ndarray:
    """Input gradient of :func:`batchnorm_forward`; accumulates gamma/beta grads.

    In train mode the batch mean and variance are differentiated as
    functions of the input.
    """
    if cache is None:
        raise RuntimeError("batchnorm_backward called without a cached forward pass")
    if cache.used:
        raise RuntimeError("batchnorm forward cache was already consumed by a backward")
    if upstream.shape != cache.xhat.shape:
        raise ShapeError(
            f"upstream grad shape {upstream.shape} != forward shape {cache.xhat.shape}"
        )
    cache.used = True
    p = cache.params
    xhat = cache.xhat
    shape = (1, -1, 1, 1)
    p.beta_grad += upstream.sum(axis=(0, 2, 3)).astype(p.beta_grad.dtype)
    p.gamma_grad += (upstream * xhat).sum(axis=(0, 2, 3)).astype(p.gamma_grad.dtype)
    dxhat = upstream * p.gamma.reshape(shape)
    if cache.mode == "infer":
        return (dxhat * cache.inv_std.reshape(shape)).astype(upstream.dtype, copy=False)
    mean_d = dxhat.mean(axis=(0, 2, 3)).reshape(shape)
    mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3)).reshape(shape)
    dx = (dxhat - mean_d - xhat * mean_dx) * cache.inv_std.reshape(shape)
    return dx.astype(upstream.dtype, copy=False)


# ---------------------------------------------------------------------------
# activations and loss
# ---------------------------------------------------------------------------

ACTIVATIONS = ("relu", "tanh")


def activation_forward(x: np.ndarray, mode: str) -> np.ndarray:
    if mode == "relu":
        return np.maximum(x, 0)
    if mode == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {mode!r}")


def activation_backward(x: np.ndarray, mode: str, upstream: np.ndarray) -> np.ndarray:
    """Gradient through the activation, given the forward *input* ``x``."""
    if upstream.shape != x.shape:
        raise ShapeError(f"upstream grad shape {upstream.shape} != input shape {x.shape}")
    if mode == "relu":
        return upstream * (x > 0)
    if mode == "tanh":
        t = np.tanh(x)
        return upstream * (1 - t * t)
    raise ValueError(f"unknown activation {mode!r}")


def activation(
    x: np.ndarray, mode: str, upstream: np.ndarray | None = None
) -> np.ndarray:
    """Forward when ``upstream`` is None, otherwise backward at input ``x``."""
    if upstream is None:
        return activation_forward(x, mode)
    return activation_backward(x, mode, upstream)


def mse_loss(output: np.ndarray, label: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient w.r.t. ``output``."""
    if output.shape != label.shape:
        raise ShapeError(f"output shape {output.shape} != label shape {label.shape}")
    diff = output - label
    n = diff.size
    loss = float(np.sum(np.square(diff, dtype=np.float64)) / n)
    grad = (2.0 / n) * diff
    return loss, grad.astype(output.dtype, copy=False)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.eps_opt > 0:
            raise ValueError("eps_opt must be positive")


def adam_step(params_with_grads, state: AdamState) -> None:
    """One bias-corrected Adam update, in place.

    ``params_with_grads`` is a sequence of ``(value, grad)`` array pairs whose
    order must stay the same across steps.  Gradients are left untouched;
    zeroing them is the caller's job.
    """
    pairs = list(params_with_grads)
    for i, (value, grad) in enumerate(pairs):
        if grad is None:
            raise ValueError(f"parameter {i} has no accumulated gradient")
        if grad.shape != value.shape:
            raise ShapeError(f"gradient {i} shape {grad.shape} != value shape {value.shape}")
    if not state.m:
        state.m = [np.zeros_like(v) for v, _ in pairs]
        state.v = [np.zeros_like(v) for v, _ in pairs]
    elif len(state.m) != len(pairs):
        raise ValueError(
            f"Adam state tracks {len(state.m)} parameters, step got {len(pairs)}"
        )
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for (value, grad), m, v in zip(pairs, state.m, state.v):
        m *= b1
        m += (1 - b1) * grad
        v *= b2
        v += (1 - b2) * (grad * grad)
        update = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps_opt)
        value -= update.astype(value.dtype, copy=False)
