"""Gradient verification suite shared by the CLI and the test suite.

Unit checks pair each differentiable operation with a random linear
readout so every gradient is generically nonzero; the full-model check
probes a seeded subsample of coordinates of every parameter. The model
check uses a larger step: in flat directions the truncation term is tiny,
and a bigger step lifts the difference quotient above the float64
evaluation noise.
"""

from __future__ import annotations

import numpy as np

from .decoder import DecoderConfig
from .encoder import encoder_config
from .gradcheck import grad_check
from .model import MTLSegFormer
from .nn import MixFFN
from .tensor import (
    Tensor,
    bilinear_upsample,
    conv2d,
    depthwise_conv3x3,
    gelu,
    layer_norm,
    log_softmax_lastdim,
    matmul,
    softmax_lastdim,
    using_dtype,
)
from .train import mtl_loss

UNIT_BOUND = 1e-6
MODEL_BOUND = 1e-4


def _readout(rng, shape):
    return Tensor(rng.normal(size=shape))


def unit_checks(seed: int) -> list[tuple[str, float]]:
    """One grad check per differentiable op, inputs drawn from `seed`."""
    results = []
    with using_dtype(np.float64):
        rng = np.random.default_rng(seed)

        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        wm = _readout(rng, (3, 2))
        results.append(("matmul", grad_check(lambda: (matmul(a, b) * wm).sum(), [a, b])))

        x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        w = _readout(rng, (4, 5))
        results.append(("softmax_lastdim", grad_check(lambda: (softmax_lastdim(x) * w).sum(), [x])))
        results.append(("log_softmax_lastdim", grad_check(lambda: (log_softmax_lastdim(x) * w).sum(), [x])))

        g = Tensor(rng.normal(size=(11,)), requires_grad=True)
        wg = _readout(rng, (11,))
        results.append(("gelu", grad_check(lambda: (gelu(g) * wg).sum(), [g])))

        xs = Tensor(rng.normal(size=(6, 7)), requires_grad=True)
        gain = Tensor(rng.normal(size=(7,)), requires_grad=True)
        bias = Tensor(rng.normal(size=(7,)), requires_grad=True)
        wn = _readout(rng, (6, 7))
        results.append(("layer_norm", grad_check(lambda: (layer_norm(xs, gain, bias) * wn).sum(), [xs, gain, bias])))

        xc = Tensor(rng.normal(size=(5, 5, 2)), requires_grad=True)
        wc = Tensor(rng.normal(size=(3, 3, 2, 3)), requires_grad=True)
        bc = Tensor(rng.normal(size=(3,)), requires_grad=True)
        wr = _readout(rng, (3, 3, 3))
        results.append(("conv2d", grad_check(lambda: (conv2d(xc, wc, bc, 2, 1) * wr).sum(), [xc, wc, bc])))

        xd = Tensor(rng.normal(size=(4, 4, 3)), requires_grad=True)
        wd = Tensor(rng.normal(size=(3, 3, 3)), requires_grad=True)
        bd = Tensor(rng.normal(size=(3,)), requires_grad=True)
        wdr = _readout(rng, (4, 4, 3))
        results.append(
            ("depthwise_conv3x3", grad_check(lambda: (depthwise_conv3x3(xd, wd, bd) * wdr).sum(), [xd, wd, bd]))
        )

        xu = Tensor(rng.normal(size=(3, 3, 2)), requires_grad=True)
        wu = _readout(rng, (6, 6, 2))
        results.append(("bilinear_upsample", grad_check(lambda: (bilinear_upsample(xu, 2) * wu).sum(), [xu])))

        ffn = MixFFN(6, 2, rng)
        xt = Tensor(rng.normal(size=(12, 6)), requires_grad=True)
        wt = _readout(rng, (12, 6))
        ffn_params = [xt] + [p for _, p in ffn.named_parameters()]
        results.append(
            ("mix_ffn", grad_check(lambda: (ffn(xt, (3, 4)) * wt).sum(), ffn_params, eps=1e-5))
        )
    return results


def full_model_check(seed: int, side: int = 32, coords_per_param: int = 6) -> float:
    """Loss-through-everything check on a toy sample."""
    with using_dtype(np.float64):
        rng = np.random.default_rng(seed)
        model = MTLSegFormer(encoder_config("T0"), DecoderConfig(channels=16, tasks=2, heads=2), seed=seed)
        image = Tensor(rng.normal(size=(side, side, 3)))
        labels = [rng.integers(0, 2, size=(side, side)).astype(np.uint8) for _ in range(2)]
        params = [p for _, p in model.named_parameters()]

        def f():
            loss, _ = mtl_loss(model(image), labels)
            return loss

        return grad_check(f, params, eps=1e-3, max_coords_per_param=coords_per_param, seed=seed)


def run_gradient_suite(seed: int = 0, seeds: int = 3) -> list[tuple[str, float, float]]:
    """(name, max relative error, bound) rows over `seeds` base seeds."""
    rows = []
    for s in range(seed, seed + seeds):
        for name, err in unit_checks(s):
            rows.append((f"{name}[seed {s}]", err, UNIT_BOUND))
    rows.append(("full_model[32x32 T0]", full_model_check(seed), MODEL_BOUND))
    return rows
