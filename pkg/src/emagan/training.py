"""Adversarial training loop with gradient penalty.

One training step is a full cycle: ``n_critic`` critic updates followed by
one generator update. The critic scores real recordings against waveforms
synthesized from generated articulator trajectories; its loss carries a
gradient penalty that keeps the input-gradient norm near 1. Everything is
driven by a single seeded RNG, so runs with equal seeds produce identical
metrics and checkpoints byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ContractViolation, Tensor, no_grad
from .models import (
    ModelParams,
    critic_forward,
    generator_forward,
    init_critic_params,
    init_generator_params,
    sample_latent,
    PHASE_SHUFFLE_N,
)
from .physics import make_physical, physical_forward

METRICS_HEADER = "step,critic_loss,gen_loss,gp,wasserstein_gap,grad_norm_g,grad_norm_d"
METRICS_FIELDS = METRICS_HEADER.split(",")

GP_NORM_EPS = 1e-24


class TrainingDiverged(RuntimeError):
    """A loss or gradient became non-finite; training cannot continue."""


@dataclass
class TrainConfig:
    batch_size: int = 8
    n_critic: int = 5
    gp_lambda: float = 10.0
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    total_steps: int = 2000
    checkpoint_every: int = 500
    seed: int = 0
    physical_kind: str = "source_filter"
    physical_seed: int = 0
    shuffle_n: int = PHASE_SHUFFLE_N

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ContractViolation(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_critic < 1:
            raise ContractViolation(f"n_critic must be >= 1, got {self.n_critic}")
        if self.total_steps < 0:
            raise ContractViolation(
                f"total_steps must be >= 0, got {self.total_steps}"
            )
        if self.gp_lambda < 0:
            raise ContractViolation(f"gp_lambda must be >= 0, got {self.gp_lambda}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractViolation(
                f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})"
            )
        if self.lr <= 0:
            raise ContractViolation(f"lr must be positive, got {self.lr}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates per parameter name, plus a step count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    # reusable per-parameter work buffer; never serialized
    _scratch: dict = field(default_factory=dict, repr=False, compare=False)


def adam_step(
    params: ModelParams,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float = 1e-8,
) -> None:
    """Apply one bias-corrected Adam update in place.

    ``grads`` maps parameter name -> gradient array; names absent from it are
    treated as zero gradient. Only trainable parameters are updated. All
    arithmetic runs through per-parameter scratch buffers: the update touches
    tens of millions of values per step, so avoiding fresh temporaries is
    what keeps the optimizer off the profile.
    """
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, tensor in params.trainable_items():
        g = grads.get(name)
        if g is not None:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != tensor.data.shape:
                raise ContractViolation(
                    f"adam_step: gradient shape {g.shape} != parameter shape "
                    f"{tensor.data.shape} for {name!r}"
                )
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m = state.m[name]
        v = state.v[name]
        tmp = state._scratch.get(name)
        if tmp is None or tmp.shape != tensor.data.shape:
            tmp = np.empty_like(tensor.data)
            state._scratch[name] = tmp
        np.multiply(m, beta1, out=m)
        np.multiply(v, beta2, out=v)
        if g is not None:
            np.multiply(g, 1.0 - beta1, out=tmp)
            m += tmp
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - beta2
            v += tmp
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr / c1
        tensor.data -= tmp


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _default_critic_fn(params: ModelParams, x: Tensor) -> Tensor:
    return critic_forward(params, x, shuffle_n=0)


def gp_loss(
    critic_params: ModelParams,
    real: np.ndarray,
    fake: np.ndarray,
    eps,
    critic_fn=None,
) -> Tensor:
    """Unweighted gradient penalty: mean over the batch of (|grad| - 1)^2.

    The critic is evaluated at per-sample interpolates eps*real + (1-eps)*fake
    and differentiated with respect to that input; the result stays on the
    graph so the penalty can itself be differentiated with respect to the
    critic parameters. Phase shuffling is disabled on this path so the
    penalized function is the deterministic critic.
    """
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise ContractViolation(
            f"gp_loss: real shape {real.shape} != fake shape {fake.shape}"
        )
    if real.ndim < 1 or real.shape[0] < 1:
        raise ContractViolation(f"gp_loss: bad batch shape {real.shape}")
    batch = real.shape[0]
    e = np.asarray(eps, dtype=np.float64)
    if e.ndim == 0:
        e = np.full(batch, float(e))
    if e.shape != (batch,):
        raise ContractViolation(
            f"gp_loss: eps must be scalar or shape ({batch},), got {e.shape}"
        )
    if np.any(e < 0) or np.any(e > 1):
        raise ContractViolation("gp_loss: eps values must lie in [0, 1]")
    e_full = e.reshape((batch,) + (1,) * (real.ndim - 1))
    xhat = Tensor(e_full * real + (1.0 - e_full) * fake, requires_grad=True)
    if critic_fn is None:
        critic_fn = _default_critic_fn
    scores = critic_fn(critic_params, xhat)
    total = ad.sum_all(scores)
    g = ad.grad_as_node(total, xhat)
    sq = ad.mul(g, g)
    while sq.data.ndim > 1:
        sq = ad.sum_axis(sq, sq.data.ndim - 1)
    norm = ad.sqrt(ad.shift(sq, GP_NORM_EPS))
    dev = ad.shift(norm, -1.0)
    return ad.mean_all(ad.mul(dev, dev))


def _named_grads(params: ModelParams, grad_map: dict) -> dict:
    out = {}
    for name, tensor in params.trainable_items():
        g = grad_map.get(tensor)
        if g is not None:
            out[name] = g.data if isinstance(g, Tensor) else np.asarray(g)
    return out


def _global_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        flat = np.ascontiguousarray(g).ravel()
        total += float(np.dot(flat, flat))
    return float(np.sqrt(total))


def _make_fake(gen_params: ModelParams, physical, z: Tensor) -> Tensor:
    ema = generator_forward(gen_params, z)
    return physical_forward(physical, ema)


def critic_step(
    critic_params: ModelParams,
    gen_params: ModelParams,
    physical,
    real: np.ndarray,
    config: TrainConfig,
    state: AdamState,
    rng: np.random.Generator,
) -> dict:
    """One critic update on a real batch against freshly generated fakes."""
    real = np.asarray(real, dtype=np.float64)
    batch = real.shape[0]
    with no_grad():
        z = sample_latent(rng, batch)
        fake = _make_fake(gen_params, physical, z).data
    score_real = critic_forward(
        critic_params, Tensor(real), shuffle_n=config.shuffle_n, rng=rng
    )
    score_fake = critic_forward(
        critic_params, Tensor(fake), shuffle_n=config.shuffle_n, rng=rng
    )
    eps = rng.uniform(0.0, 1.0, size=batch)
    gp = gp_loss(critic_params, real, fake, eps)
    mean_real = ad.mean_all(score_real)
    mean_fake = ad.mean_all(score_fake)
    loss = ad.add(ad.sub(mean_fake, mean_real), ad.scale(gp, config.gp_lambda))
    grad_map = ad.backward(loss)
    grads = _named_grads(critic_params, grad_map)
    grad_norm = _global_norm(grads)
    adam_step(
        critic_params, grads, state, config.lr, config.beta1, config.beta2,
        config.adam_eps,
    )
    return {
        "critic_loss": loss.item(),
        "gp": gp.item(),
        "wasserstein_gap": mean_real.item() - mean_fake.item(),
        "grad_norm_d": grad_norm,
    }


def generator_step(
    gen_params: ModelParams,
    critic_params: ModelParams,
    physical,
    config: TrainConfig,
    state: AdamState,
    rng: np.random.Generator,
) -> dict:
    """One generator update: raise the critic's score of synthesized audio."""
    z = sample_latent(rng, config.batch_size)
    audio = _make_fake(gen_params, physical, z)
    frozen_critic = critic_params.detached_view()
    scores = critic_forward(
        frozen_critic, audio, shuffle_n=config.shuffle_n, rng=rng
    )
    loss = ad.scale(ad.mean_all(scores), -1.0)
    grad_map = ad.backward(loss)
    grads = _named_grads(gen_params, grad_map)
    grad_norm = _global_norm(grads)
    adam_step(
        gen_params, grads, state, config.lr, config.beta1, config.beta2,
        config.adam_eps,
    )
    return {"gen_loss": loss.item(), "grad_norm_g": grad_norm}


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _format_row(row: dict) -> str:
    cells = [str(row["step"])]
    cells += [repr(float(row[k])) for k in METRICS_FIELDS[1:]]
    return ",".join(cells)


def _check_finite(step: int, row: dict) -> None:
    for key in METRICS_FIELDS[1:]:
        value = float(row[key])
        if not np.isfinite(value):
            raise TrainingDiverged(
                f"step {step}: {key} is non-finite ({value}); aborting"
            )


def train(
    dataset,
    config: TrainConfig,
    out_dir,
    physical=None,
    progress=None,
) -> list:
    """Run the full loop; write metrics.csv and checkpoints under out_dir.

    ``dataset`` is a Dataset or an (N, 1, L) array of real audio. Returns the
    list of per-step metric dicts. Raises TrainingDiverged on non-finite
    metrics. ``progress``, if given, is called with each metrics row.
    """
    from .dataio import checkpoint_save

    config.validate()
    real_all = dataset.stack() if hasattr(dataset, "stack") else np.asarray(dataset)
    real_all = real_all.astype(np.float64)
    if real_all.ndim != 3 or real_all.shape[1] != 1:
        raise ContractViolation(
            f"train: dataset must stack to (N, 1, L), got {real_all.shape}"
        )
    n_real = real_all.shape[0]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(config.seed)
    gen_ss, critic_ss, run_ss = root.spawn(3)
    gen_params = init_generator_params(int(gen_ss.generate_state(1)[0]))
    critic_params = init_critic_params(int(critic_ss.generate_state(1)[0]))
    if physical is None:
        physical = make_physical(config.physical_kind, config.physical_seed)
    rng = np.random.default_rng(run_ss)

    gen_state = AdamState()
    critic_state = AdamState()
    cfg_dict = asdict(config)

    def save(step: int, name: str) -> None:
        checkpoint_save(
            out_dir / name,
            {
                "generator": gen_params,
                "critic": critic_params,
                "physical": physical.params,
            },
            {"generator": gen_state, "critic": critic_state},
            cfg_dict,
            step,
        )

    rows = []
    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as metrics:
        metrics.write(METRICS_HEADER + "\n")
        metrics.flush()
        for step in range(1, config.total_steps + 1):
            critic_metrics = None
            for _ in range(config.n_critic):
                idx = rng.integers(0, n_real, size=config.batch_size)
                real = real_all[idx]
                critic_metrics = critic_step(
                    critic_params, gen_params, physical, real, config,
                    critic_state, rng,
                )
            gen_metrics = generator_step(
                gen_params, critic_params, physical, config, gen_state, rng
            )
            row = {"step": step}
            row.update(critic_metrics)
            row.update(gen_metrics)
            _check_finite(step, row)
            metrics.write(_format_row(row) + "\n")
            metrics.flush()
            rows.append(row)
            if progress is not None:
                progress(row)
            if config.checkpoint_every > 0 and step % config.checkpoint_every == 0:
                save(step, f"checkpoint_{step:06d}.ckpt")
        save(config.total_steps, "checkpoint_final.ckpt")
    return rows
