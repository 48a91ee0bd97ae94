"""Finite-difference checks of every primitive and of the composed model graphs."""

from __future__ import annotations

import numpy as np

from .autograd import OPS, GradcheckReport, constant, gradcheck, ops
from .bundle import ModelBundle
from .config import load_config
from .losses import LossWeights, PerceptualFeatures, loss_total
from .text_diffusion import CharState

# Small enough that every finite difference runs in milliseconds.
TINY_MODEL = {
    "model.K": 6, "model.max_len": 4, "model.height": 16, "model.width": 32, "model.patch": 4,
    "model.base_channels": 8, "model.levels": 2, "model.attn_resolution": 8, "model.d": 8, "model.heads": 2,
    "model.mom_layers": 1, "model.tau_layers": 1, "model.ocr_hidden": 8, "schedule.T": 4,
}


def tiny_bundle(seed: int = 0) -> ModelBundle:
    return ModelBundle.build(load_config(None, {**TINY_MODEL, "model.init_seed": seed}))


def _primitive_fragment(a, b, c, d):
    """Touches the primitives the model graphs leave out, on small tensors."""
    x = ops.sub(ops.mul(a, b), ops.scale(ops.square(a), 0.3))
    x = ops.add(ops.abs_(x), ops.silu(b))
    img = ops.reshape(x, (1, 2, 2, 3))
    up = ops.upsample(img, 2)
    conv = ops.conv2d(up, c, stride=2, pad=1)
    gn = ops.group_norm(conv, constant(np.ones(2)), constant(np.zeros(2)), groups=1)
    flat = ops.transpose(ops.reshape(gn, (1, 2, 6)), (0, 2, 1))
    att = ops.attention(flat, flat, ops.matmul(flat, d))
    parts = ops.concat([ops.slice_(att, 1, 0, 3), ops.slice_(att, 1, 3, 6)], axis=2)
    sm = ops.softmax(parts, axis=-1)
    ls = ops.log_softmax(ops.add_bias(parts, ops.mean(parts, axis=2), axis=1), axis=-1)
    return ops.add(ops.sum_(ops.mul(sm, ls)), ops.mean(ops.mul(parts, parts)))


def gradcheck_suite(seed: int = 0, tol: float = 1e-4) -> dict[str, GradcheckReport]:
    """Named reports for the primitive mix and the f_theta, tau, MoM-lite and loss graphs."""
    rng = np.random.default_rng(seed)
    b = tiny_bundle(seed)
    for p in b.parameters():
        if not np.any(p.value):  # zero-initialised output layers would hide everything upstream
            p.value = 0.1 * rng.standard_normal(p.value.shape)
    mc = b.config.model
    lat = (2,) + b.codec.latent_shape((1, mc.height, mc.width))
    n, m, K, d = 2, mc.max_len, mc.K, mc.d
    t = np.array([1, b.shift.T])
    zy, zt = rng.standard_normal(lat), rng.standard_normal(lat)
    feat = rng.uniform(0.0, 1.0, (n, m, K))
    probs = rng.dirichlet(np.ones(K), (n, m))
    conf = rng.uniform(0.2, 1.0, (n, m))
    c_cond = rng.standard_normal((n, m, d))
    i_cond = rng.standard_normal((n, m, d))
    x0 = rng.uniform(0.0, 1.0, (n, 1, mc.height, mc.width))
    x0_hat = rng.uniform(0.0, 1.0, (n, 1, mc.height, mc.width))
    c0 = CharState.from_indices(rng.integers(0, K, (n, m)), K)
    phi = PerceptualFeatures(channels=1, seed=seed)
    weights = LossWeights(l1=1.0, perceptual=1.0, ce=0.5)

    def mom_fragment(zy_, zt_, feat_):
        cond = b.mom(zy_, zt_, feat_, t)
        return ops.concat([cond.i_cond, cond.c_cond], axis=2)

    cases = {
        "primitives": (_primitive_fragment,
                       [rng.standard_normal((3, 4)), rng.standard_normal((3, 4)),
                        rng.standard_normal((2, 2, 3, 3)), rng.standard_normal((2, 2))], ()),
        "f_theta": (lambda zt_, zy_, cc: b.unet(zt_, zy_, t, cc), [zt, zy, c_cond], b.unet.parameters()),
        "tau": (lambda ic: b.tau(CharState(probs, conf), ic, t), [i_cond], b.tau.parameters()),
        "mom": (mom_fragment, [zy, zt, feat], b.mom.parameters()),
        "loss": (lambda xh: loss_total(x0, xh, c0, b.ocr(xh), weights, phi), [x0_hat], b.ocr.parameters()),
    }
    return {name: gradcheck(fn, inputs, params, tol=tol, seed=seed) for name, (fn, inputs, params) in cases.items()}


def op_coverage(reports: dict[str, GradcheckReport]) -> list[str]:
    """Registered primitives that no report exercised."""
    seen = set().union(*(r.per_op for r in reports.values()))
    return sorted(set(OPS) - seen)
