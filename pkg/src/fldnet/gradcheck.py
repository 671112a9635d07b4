"""Central-difference gradient checks for single ops and the whole model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import functional as F
from . import tensor as T
from .losses import total_loss
from .model import FLDNet, ModelConfig
from .nn import Parameter
from .tensor import Tensor, get_dtype, no_grad, precision

# |analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)
REL_FLOOR = 1e-6


@dataclass
class ParamCheck:
    name: str
    coords: int
    max_rel_err: float


@dataclass
class GradCheckReport:
    label: str
    tol: float
    entries: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.label}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.0e})"


def sample_coords(size: int, max_coords: int) -> np.ndarray:
    if size <= max_coords:
        return np.arange(size)
    return np.sort(np.random.default_rng(0).choice(size, max_coords, replace=False))


def grad_check(build: Callable[[], Tensor], params: list[Parameter], step: float = 1e-4,
               tol: float = 1e-5, max_coords: int = 64, label: str = "graph") -> GradCheckReport:
    """Compare tape gradients of ``build()`` against central differences.

    ``build`` must recompute the scalar loss from the current parameter
    values each time it is called.
    """
    if get_dtype() != np.float64:
        raise RuntimeError("grad_check requires 64-bit precision mode")
    for p in params:
        p.zero_grad()
    T.reset_tape()
    loss = build()
    loss.backward()
    analytic = {id(p): p.grad.copy() for p in params}

    report = GradCheckReport(label, tol)
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            ga = analytic[id(p)].reshape(-1)
            worst = 0.0
            idx = sample_coords(flat.size, max_coords)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                fp = build().item()
                flat[i] = orig - step
                fm = build().item()
                flat[i] = orig
                num = (fp - fm) / (2 * step)
                err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), REL_FLOOR)
                worst = max(worst, err)
            report.entries.append(ParamCheck(p.name, len(idx), worst))
    for p in params:
        p.zero_grad()
    return report


# ------------------------------------------------------------------ op suite

def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.sum(out * Tensor(weights))


def _leaves(rng, **shapes):
    return {k: Parameter(rng.normal(size=s), name=k) for k, s in shapes.items()}


def op_graphs(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Parameter]]]:
    """Small random graphs, one per differentiable op (64-bit mode)."""
    rng = np.random.default_rng(seed)
    graphs = {}

    def add(name, leaves, fn, out_shape):
        w = rng.normal(size=out_shape)
        graphs[name] = (lambda: _weighted_sum(fn(**leaves), w), list(leaves.values()))

    lv = _leaves(rng, x=(2, 3, 7, 6), k=(4, 3, 3, 3), b=(4,))
    add("conv2d", lv, lambda x, k, b: F.conv2d(x, k, b, stride=1, padding=1), (2, 4, 7, 6))
    lv = _leaves(rng, x=(1, 2, 9, 8), k=(3, 2, 3, 2), b=(3,))
    add("conv2d_strided", lv, lambda x, k, b: F.conv2d(x, k, b, stride=2, padding=1), (1, 3, 5, 5))
    lv = _leaves(rng, x=(1, 2, 9, 9), k=(2, 2, 3, 3), b=(2,))
    add("conv2d_dilated", lv, lambda x, k, b: F.conv2d(x, k, b, padding=4, dilation=4), (1, 2, 9, 9))
    lv = _leaves(rng, x=(2, 2, 3, 4))
    add("bilinear_upsample", lv, lambda x: F.bilinear_upsample(x, 7, 9), (2, 2, 7, 9))
    lv = _leaves(rng, x=(1, 2, 6, 5))
    add("avg_pool", lv, lambda x: F.avg_pool(x, 3, stride=1, padding=1), (1, 2, 6, 5))
    lv = _leaves(rng, a=(2, 3, 4, 4), b=(2, 1, 4, 4))
    add("elementwise_add", lv, lambda a, b: a + b, (2, 3, 4, 4))
    lv = _leaves(rng, a=(2, 3, 4, 4), b=(1, 1, 1, 1))
    add("elementwise_sub", lv, lambda a, b: a - b, (2, 3, 4, 4))
    lv = _leaves(rng, a=(2, 3, 4, 4), b=(2, 1, 4, 4))
    add("elementwise_mul", lv, lambda a, b: a * b, (2, 3, 4, 4))
    lv = _leaves(rng, a=(1, 2, 3, 3), b=(1, 2, 3, 3))
    lv["b"].data = np.abs(lv["b"].data) + 1.0
    add("elementwise_div", lv, lambda a, b: a / b, (1, 2, 3, 3))
    lv = _leaves(rng, a=(1, 2, 3, 3), b=(1, 3, 3, 3))
    add("concat_channels", lv, lambda a, b: T.concat_channels([a, b]), (1, 5, 3, 3))
    lv = _leaves(rng, x=(1, 5, 3, 3))
    add("slice_channels", lv, lambda x: T.slice_channels(x, 1, 4), (1, 3, 3, 3))
    lv = _leaves(rng, x=(2, 3, 4, 4))
    add("sigmoid", lv, lambda x: T.sigmoid(x), (2, 3, 4, 4))
    lv = _leaves(rng, x=(2, 3, 4, 4))
    add("softplus", lv, lambda x: T.softplus(x), (2, 3, 4, 4))
    lv = _leaves(rng, x=(2, 3, 4, 4))
    add("gelu", lv, lambda x: T.gelu(x), (2, 3, 4, 4))
    lv = _leaves(rng, a=(2, 3, 4), b=(2, 4, 5))
    add("matmul_batched", lv, lambda a, b: F.matmul_batched(a, b), (2, 3, 5))
    lv = _leaves(rng, x=(2, 3, 6))
    add("softmax_lastdim", lv, lambda x: F.softmax_lastdim(x), (2, 3, 6))
    lv = _leaves(rng, x=(2, 3, 6), g=(6,), o=(6,))
    add("layer_norm", lv, lambda x, g, o: F.layer_norm(x, g, o), (2, 3, 6))
    lv = _leaves(rng, x=(2, 3, 4), w=(5, 4), b=(5,))
    add("linear", lv, lambda x, w, b: F.linear(x, w, b), (2, 3, 5))
    lv = _leaves(rng, x=(2, 3, 4))
    add("reshape_transpose", lv, lambda x: T.transpose(T.reshape(x, (3, 2, 4)), (2, 0, 1)), (4, 3, 2))
    lv = _leaves(rng, x=(2, 3, 4))
    graphs["sum_mean"] = (lambda x=lv["x"]: T.mean(T.sum(x * x, axis=1)), [lv["x"]])
    return graphs


def check_ops(step=1e-4, tol=1e-5, seed=0) -> list[GradCheckReport]:
    with precision(64):
        return [grad_check(build, params, step, tol, label=name)
                for name, (build, params) in op_graphs(seed).items()]


def check_model(image_size: int = 32, step=1e-4, tol=1e-4, max_coords: int = 64,
                seed: int = 0, config: ModelConfig | None = None) -> GradCheckReport:
    """Full network + total loss on a single random image and mask."""
    with precision(64):
        rng = np.random.default_rng(seed)
        model = FLDNet(config or ModelConfig(), rng)
        # non-zero alpha/beta so the refine gates are exercised
        model.fam.alpha.data[...] = 0.3
        model.fam.beta.data[...] = -0.2
        image = Tensor(rng.uniform(size=(1, 3, image_size, image_size)))
        yy, xx = np.mgrid[0:image_size, 0:image_size]
        c = image_size / 2
        mask = ((yy - c) ** 2 + (xx - c * 0.8) ** 2 <= (image_size / 4) ** 2).astype(np.float64)
        gt = Tensor(mask[None, None])

        def build():
            s3, s4 = model(image)
            return total_loss(gt, s3, s4)

        return grad_check(build, model.parameters(), step, tol, max_coords, label="full model")
