"""Optimization: Adam, progressive network training, and per-pair solves.

Training proceeds in phases, one per pyramid level. During phase p only
levels 1..p run; the loss is the level-p similarity pyramid plus the
weighted smoothness of the level-p velocity. When a phase beyond the
first starts, all previously trained levels are frozen (no parameter or
optimizer-state updates) for `freeze_steps` steps, then released.

Direct registration reuses the same coarse-to-fine data flow with free
velocity grids instead of network outputs: the effective velocity at
level p is v_p plus the upsampled effective velocity from level p-1.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import crn
from . import diffeo
from . import metrics
from . import pyramid
from . import similarity
from .errors import NumericalError, ShapeError

DESK_FREEZE_STEPS = 100
PAPER_FREEZE_STEPS = 2000


def default_lambda(mode: str) -> float:
    return 4.0 if mode == diffeo.DIFFEO else 1.0


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    freeze_steps: int = DESK_FREEZE_STEPS
    steps_per_level: int | tuple[int, ...] = 300
    batch: int = 1
    seed: int = 0
    mode: str = diffeo.DIFFEO
    levels: int = 3
    lam: float | None = None  # None resolves to 4 (diffeo) / 1 (displacement)
    channels: int = 16
    blocks: int = crn.DEFAULT_BLOCKS
    vel_scale: float = crn.DEFAULT_VEL_SCALE
    timesteps: int = diffeo.DEFAULT_TIMESTEPS
    epsilon: float = 1e-5
    divergence_factor: float = 10.0
    divergence_patience: int = 50

    def __post_init__(self):
        if self.lr <= 0:
            raise ShapeError(f"TrainConfig: lr must be > 0, got {self.lr}")
        if self.freeze_steps < 0:
            raise ShapeError(f"TrainConfig: freeze_steps must be >= 0, got {self.freeze_steps}")
        if self.batch < 1:
            raise ShapeError(f"TrainConfig: batch must be >= 1, got {self.batch}")
        if self.mode not in (diffeo.DIFFEO, diffeo.DISPLACEMENT):
            raise ShapeError(f"TrainConfig: unknown mode {self.mode!r}")
        if self.lam is None:
            self.lam = default_lambda(self.mode)

    def steps_for(self, level: int) -> int:
        if isinstance(self.steps_per_level, int):
            return self.steps_per_level
        seq = tuple(self.steps_per_level)
        if len(seq) != self.levels:
            raise ShapeError(
                f"TrainConfig: steps_per_level has {len(seq)} entries for {self.levels} levels"
            )
        return seq[level - 1]

    def loss_config(self) -> similarity.LossConfig:
        return similarity.LossConfig(levels=self.levels, lam=self.lam, epsilon=self.epsilon)

    def to_dict(self) -> dict:
        out = {}
        for key, value in vars(self).items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out[key] = value
        return out


class Adam:
    """Standard Adam with bias correction; per-parameter step counters so
    frozen parameters resume cleanly."""

    def __init__(self, named_tensors, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_tensors)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {name: np.zeros_like(node.value) for name, node in self.params}
        self.v = {name: np.zeros_like(node.value) for name, node in self.params}
        self.t = {name: 0 for name, _ in self.params}

    def zero_grad(self):
        for _, node in self.params:
            node.zero_grad()

    def step(self):
        for name, node in self.params:
            if not node.requires_grad or node.grad is None:
                continue
            g = node.grad
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {name}")
            self.t[name] += 1
            t = self.t[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            node.value -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(node.value.dtype)


@dataclass
class LogRow:
    step: int
    phase: int
    loss: float
    similarity: float
    regularizer: float
    frozen_levels: str
    ms: float


def write_train_log(path, rows: list[LogRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "phase", "loss", "similarity", "regularizer", "frozen_levels", "ms"])
        for r in rows:
            writer.writerow(
                [r.step, r.phase, repr(r.loss), repr(r.similarity), repr(r.regularizer),
                 r.frozen_levels, f"{r.ms:.3f}"]
            )


class TrainingDiverged(NumericalError):
    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


class _PairSampler:
    """Cycles through pairs in freshly shuffled order each epoch."""

    def __init__(self, count, rng):
        self.count = count
        self.rng = rng
        self.queue = []

    def __next__(self):
        if not self.queue:
            self.queue = list(self.rng.permutation(self.count))
        return self.queue.pop(0)


class _DivergenceGuard:
    def __init__(self, factor, patience):
        self.factor = factor
        self.patience = patience
        self.reference = None
        self.streak = 0

    def reset(self):
        self.reference = None
        self.streak = 0

    def update(self, loss, log):
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became non-finite ({loss})", log)
        if self.reference is None:
            self.reference = max(abs(loss), 1e-6)
            return
        if loss > self.factor * self.reference:
            self.streak += 1
            if self.streak >= self.patience:
                raise TrainingDiverged(
                    f"loss {loss:.4g} stayed above {self.factor:.0f}x its phase-initial "
                    f"magnitude for {self.patience} steps",
                    log,
                )
        else:
            self.streak = 0


def train_coarse_to_fine(pairs, cfg: TrainConfig, step_callback=None):
    """Progressively train the pyramid network on (fixed, moving) pairs.

    Returns (params, log rows). Deterministic in cfg.seed: same seed and
    config reproduce parameters bit-exactly. `step_callback(params, row)`
    runs after each optimizer step (used by tests to observe freezing).
    """
    if not pairs:
        raise ShapeError("train_coarse_to_fine: no training pairs")
    rank = pairs[0][0].ndim - 1
    rng = np.random.default_rng(cfg.seed)
    params = crn.init_lapirn(
        rng, rank, cfg.levels, cfg.channels, cfg.blocks, cfg.vel_scale, cfg.mode
    )
    opt = Adam(list(params.named_tensors()), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    lcfg = cfg.loss_config()
    sampler = _PairSampler(len(pairs), rng)
    guard = _DivergenceGuard(cfg.divergence_factor, cfg.divergence_patience)
    rows: list[LogRow] = []
    step = 0
    for phase in range(1, cfg.levels + 1):
        frozen = list(range(1, phase)) if cfg.freeze_steps > 0 else []
        for lvl in frozen:
            params.levels[lvl - 1].set_trainable(False)
        guard.reset()
        for s in range(cfg.steps_for(phase)):
            if frozen and s == cfg.freeze_steps:
                for lvl in frozen:
                    params.levels[lvl - 1].set_trainable(True)
                frozen = []
            t0 = time.perf_counter()
            opt.zero_grad()
            loss_v = sim_v = reg_v = 0.0
            for _ in range(cfg.batch):
                fixed, moving = pairs[next(sampler)]
                result = crn.lapirn_forward(
                    params, fixed, moving, cfg.timesteps, active_levels=phase
                )[phase - 1]
                total, sim, reg = similarity.level_loss(
                    result.fixed, result.warped, result.velocity, phase, lcfg, with_parts=True
                )
                contrib = ad.scale(total, 1.0 / cfg.batch) if cfg.batch > 1 else total
                ad.backward(contrib)
                loss_v += ad.scalar(total) / cfg.batch
                sim_v += ad.scalar(sim) / cfg.batch
                reg_v += ad.scalar(reg) / cfg.batch
            guard.update(loss_v, rows)
            opt.step()
            row = LogRow(
                step=step,
                phase=phase,
                loss=loss_v,
                similarity=sim_v,
                regularizer=reg_v,
                frozen_levels=";".join(str(l) for l in frozen),
                ms=(time.perf_counter() - t0) * 1000.0,
            )
            rows.append(row)
            if step_callback is not None:
                step_callback(params, row)
            step += 1
        for lvl in range(1, phase):
            params.levels[lvl - 1].set_trainable(True)
    return params, rows


def _effective_velocity(v_leaves, level):
    v_eff = v_leaves[0]
    for i in range(1, level):
        v_eff = ad.add(v_leaves[i], pyramid.upsample_disp(v_eff))
    return v_eff


def register_direct(
    fixed,
    moving,
    cfg: TrainConfig,
    seg_fixed=None,
    seg_moving=None,
    pair_id: str = "pair",
):
    """Instance-wise registration: optimize free velocity grids directly.

    Velocities start at zero and are fit coarse to fine with the same
    upsample-add-warp flow and per-level losses as the network. Returns
    (Transform, MetricsReport).
    """
    if fixed.shape != moving.shape:
        raise ShapeError(f"register_direct: shapes {fixed.shape} and {moving.shape} differ")
    div = 2**cfg.levels
    if any(e % div for e in fixed.shape[1:]):
        raise ShapeError(
            f"register_direct: extents {fixed.shape[1:]} must be divisible by {div}"
        )
    rank = fixed.ndim - 1
    lcfg = cfg.loss_config()
    t_start = time.perf_counter()
    pf = pyramid.build_pyramid(ad.leaf(np.ascontiguousarray(fixed)), cfg.levels)
    pm = pyramid.build_pyramid(ad.leaf(np.ascontiguousarray(moving)), cfg.levels)
    v_leaves = [
        ad.leaf(np.zeros((rank,) + tuple(p.value.shape[1:]), dtype=np.float32), requires_grad=True)
        for p in pf
    ]
    opt = Adam(
        [(f"velocity_l{i + 1}", v) for i, v in enumerate(v_leaves)],
        cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
    )
    guard = _DivergenceGuard(cfg.divergence_factor, cfg.divergence_patience)
    for phase in range(1, cfg.levels + 1):
        guard.reset()
        for _ in range(cfg.steps_for(phase)):
            opt.zero_grad()
            v_eff = _effective_velocity(v_leaves, phase)
            if cfg.mode == diffeo.DIFFEO:
                phi = diffeo.integrate(v_eff, cfg.timesteps)
            else:
                phi = diffeo.Transform(disp=v_eff, kind=diffeo.DISPLACEMENT, source=v_eff)
            warped = pyramid.warp(pm[phase - 1], phi.disp)
            total = similarity.level_loss(pf[phase - 1], warped, v_eff, phase, lcfg)
            ad.backward(total)
            guard.update(ad.scalar(total), [])
            opt.step()
    v_final = _effective_velocity(v_leaves, cfg.levels)
    if cfg.mode == diffeo.DIFFEO:
        result = diffeo.Transform(
            disp=diffeo.integrate(v_final, cfg.timesteps).disp.value,
            kind=diffeo.DIFFEO,
            source=v_final.value,
        )
    else:
        result = diffeo.Transform(
            disp=v_final.value, kind=diffeo.DISPLACEMENT, source=v_final.value
        )
    seconds = time.perf_counter() - t_start
    report = metrics.evaluate_transform(
        result, seconds, pair_id=pair_id, seg_fixed=seg_fixed, seg_moving=seg_moving
    )
    return result, report
