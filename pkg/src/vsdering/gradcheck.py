"""Central finite-difference checks of every analytic gradient.

Each check builds a scalar probe loss ``sum(out * R)`` with a fixed random
``R`` so that arbitrary upstream gradients are exercised.  The error of a
parameter group is ``max|analytic - numeric| / max(max|analytic|,
max|numeric|, floor)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import model as net
from .tensor_core import (
    BatchNormParams,
    ConvParams,
    activation_backward,
    activation_forward,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    mse_loss,
)

SCALE_FLOOR = 1e-6


@dataclass
class GradcheckReport:
    name: str
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    failure: str | None = None
    skipped: int = 0  # entries dropped because the step crossed a ReLU kink

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.failure is None and self.max_error <= self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = self.failure or f"max rel err {self.max_error:.3e} (tol {self.tolerance:g})"
        return f"[{status}] {self.name}: {detail}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(a).max(initial=0), np.abs(n).max(initial=0), SCALE_FLOOR)
    return float(np.abs(a - n).max(initial=0) / scale)


def numeric_grad(
    loss: Callable[[], float | tuple[float, bytes]], array: np.ndarray, indices, h: float
) -> np.ndarray:
    """Central differences of ``loss`` w.r.t. the flat ``indices`` of ``array``.

    ``loss`` may return ``(value, key)`` where ``key`` fingerprints the active
    ReLU pattern; entries whose two evaluations disagree on it straddle a kink
    and come back as NaN.
    """
    flat = array.reshape(-1)
    out = np.empty(len(indices))
    for i, idx in enumerate(indices):
        old = flat[idx]
        flat[idx] = old + h
        fp = loss()
        flat[idx] = old - h
        fm = loss()
        flat[idx] = old
        if isinstance(fp, tuple):
            (fp, kp), (fm, km) = fp, fm
            if kp != km:
                out[i] = np.nan
                continue
        out[i] = (fp - fm) / (2 * h)
    return out


def _pick(rng, size: int, samples: int | None):
    if samples is None or size <= samples:
        return np.arange(size)
    return np.sort(rng.choice(size, samples, replace=False))


def _compare(report, name, analytic, array, loss, rng, h, samples=None):
    idx = _pick(rng, array.size, samples)
    if not np.all(np.isfinite(analytic)):
        report.failure = f"non-finite values encountered in {name}"
        return
    num = numeric_grad(loss, array, idx, h)
    if np.any(np.isinf(num)):
        report.failure = f"non-finite values encountered in {name}"
        return
    kinked = np.isnan(num)
    report.skipped += int(kinked.sum())
    if kinked.all():
        return
    report.errors[name] = relative_error(analytic.reshape(-1)[idx][~kinked], num[~kinked])


def check_conv(
    shape=(1, 1, 4, 4), c_out: int = 2, k: int = 3, tol: float = 1e-3,
    h: float = 1e-3, seed: int = 0, dtype=np.float64,
) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape).astype(dtype)
    p = ConvParams(
        rng.standard_normal((c_out, shape[1], k, k)).astype(dtype),
        rng.standard_normal(c_out).astype(dtype),
    )
    probe = rng.standard_normal((shape[0], c_out) + tuple(shape[2:]))

    def loss():
        return float(np.sum(conv2d_forward(x, p) * probe))

    report = GradcheckReport(f"conv2d {shape}->{c_out}ch", tol)
    dx = conv2d_backward(x, p, probe.astype(dtype))
    _compare(report, "input", dx, x, loss, rng, h)
    _compare(report, "kernels", p.kernel_grad, p.kernels, loss, rng, h)
    _compare(report, "biases", p.bias_grad, p.biases, loss, rng, h)
    return report


def check_batchnorm(
    shape=(2, 3, 4, 4), zero_gamma: bool = False, tol: float = 1e-3,
    h: float = 1e-3, seed: int = 1, dtype=np.float64,
) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    c = shape[1]
    x = rng.standard_normal(shape).astype(dtype)
    gamma = np.zeros(c) if zero_gamma else rng.uniform(0.5, 2.0, c)
    p = BatchNormParams(
        gamma.astype(dtype),
        rng.standard_normal(c).astype(dtype),
        np.zeros(c, dtype),
        np.ones(c, dtype),
    )
    probe = rng.standard_normal(shape)

    def loss():
        return float(np.sum(batchnorm_forward(x, p)[0] * probe))

    name = "batchnorm (gamma=0)" if zero_gamma else "batchnorm"
    report = GradcheckReport(f"{name} {shape}", tol)
    _, cache = batchnorm_forward(x, p)
    dx = batchnorm_backward(cache, probe.astype(dtype))
    _compare(report, "input", dx, x, loss, rng, h)
    _compare(report, "gamma", p.gamma_grad, p.gamma, loss, rng, h)
    _compare(report, "beta", p.beta_grad, p.beta, loss, rng, h)
    return report


def check_activation(
    mode: str, shape=(1, 2, 4, 4), tol: float = 1e-3, h: float = 1e-3,
    seed: int = 2, dtype=np.float64,
) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    # keep clear of the relu kink so differences do not straddle it
    x = (np.sign(x) * (np.abs(x) + 0.1)).astype(dtype)
    probe = rng.standard_normal(shape)

    def loss():
        return float(np.sum(activation_forward(x, mode) * probe))

    report = GradcheckReport(f"{mode} {shape}", tol)
    dx = activation_backward(x, mode, probe.astype(dtype))
    _compare(report, "input", dx, x, loss, rng, h)
    return report


def check_mse(
    shape=(2, 1, 4, 4), tol: float = 1e-3, h: float = 1e-3, seed: int = 3,
    dtype=np.float64,
) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    out = rng.standard_normal(shape).astype(dtype)
    label = rng.standard_normal(shape).astype(dtype)
    report = GradcheckReport(f"mse {shape}", tol)
    _, grad = mse_loss(out, label)
    _compare(report, "output", grad, out, lambda: mse_loss(out, label)[0], rng, h)
    return report


def check_model(
    shape=(1, 1, 16, 16), tol: float = 1e-2, h: float = 1e-4, seed: int = 4,
    samples: int = 6, dtype=np.float64, zero_gamma_layer: int | None = None,
) -> GradcheckReport:
    """Sampled check of the assembled network in train mode.

    ``samples`` entries are probed per parameter group to keep the run short.
    """
    rng = np.random.default_rng(seed)
    spec, params = net.build_model(seed)
    params = params.astype(dtype)
    for bn in params.norms:
        # non-trivial affine parameters exercise every path
        if bn is not None:
            bn.gamma[...] = rng.uniform(0.5, 1.5, bn.channels)
            bn.beta[...] = rng.uniform(-0.2, 0.2, bn.channels)
    if zero_gamma_layer is not None:
        params.norms[zero_gamma_layer - 1].gamma[...] = 0
    for conv in params.convs:
        conv.biases[...] = rng.uniform(-0.1, 0.1, conv.c_out)
    x = rng.standard_normal(shape).astype(dtype)
    probe = rng.standard_normal(shape)

    relu_layers = [i for i, a in enumerate(spec.activations) if a == "relu"]

    def loss():
        out, c = net.forward(spec, params, x, mode="train", keep_cache=True)
        value = float(np.sum(out * probe))
        if not np.isfinite(value):
            return value
        signs = np.concatenate([(c.layers[i].act_in > 0).ravel() for i in relu_layers])
        return value, np.packbits(signs).tobytes()

    name = f"9-layer model {shape}"
    if zero_gamma_layer is not None:
        name += f" (layer {zero_gamma_layer} gamma=0)"
    report = GradcheckReport(name, tol)
    out, cache = net.forward(spec, params, x, mode="train")
    if not np.all(np.isfinite(out)):
        report.failure = "non-finite values in model output"
        return report
    dx = net.backward(spec, params, cache, probe.astype(dtype))
    _compare(report, "input", dx, x, loss, rng, h, samples)
    for pname, value, grad in params.parameters():
        if report.failure:
            break
        _compare(report, pname, grad, value, loss, rng, h, samples)
    return report


def run_gradcheck_suite(layer_tol: float = 1e-3, model_tol: float = 1e-2) -> list[GradcheckReport]:
    return [
        check_conv((1, 1, 4, 4), c_out=1, tol=layer_tol),
        check_conv((2, 3, 5, 5), c_out=4, tol=layer_tol),
        check_batchnorm(tol=layer_tol),
        check_batchnorm(zero_gamma=True, tol=layer_tol),
        check_activation("relu", tol=layer_tol),
        check_activation("tanh", tol=layer_tol),
        check_mse(tol=layer_tol),
        check_model(tol=model_tol),
        check_model(tol=model_tol, zero_gamma_layer=3, seed=5),
    ]
