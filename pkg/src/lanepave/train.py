"""Mini-batch training against the summed per-lane MSE.

The loss is L = L_1 + ... + L_N with L_n the batch MSE of lane n's
predictions. Targets (and the input series, which are the same indices)
are divided by 100 before training; predictions are rescaled on the way
out, which leaves MAPE untouched.

Optimizers update tensors in place. Everything is deterministic given the
config seed: batch shuffling, weight init, and the update order all derive
from it.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from . import nn
from .errors import ConfigError, DivergenceError
from .seeding import derive_seed

INDEX_SCALE = 100.0  # performance indices live in [0, 100]


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 200
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    clip_norm: float | None = None  # gradient-norm clip, off by default

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive when set")


def total_loss(batch_output, targets: np.ndarray):
    """Summed per-lane MSE: returns (L, [L_1..L_N]).

    batch_output may be a BatchOutput or a raw (batch, num_lanes) array.
    """
    preds = getattr(batch_output, "preds", batch_output)
    preds = np.asarray(preds, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if preds.shape != targets.shape:
        raise ConfigError(
            f"targets for all lanes required: preds {preds.shape} vs "
            f"targets {targets.shape}")
    per_lane = [nn.mse(preds[:, n], targets[:, n]) for n in range(preds.shape[1])]
    return float(sum(per_lane)), per_lane


@dataclass
class OptimizerState:
    """Adam moment buffers, aligned with the parameter tensors.

    For arena-backed params the buffers are single flat vectors; for
    hand-built params there is one buffer per named tensor. ``scratch``
    avoids per-step temporaries on large models.
    """

    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    scratch: list = field(default_factory=list)


def _update_pairs(params, grads):
    """Aligned (param, grad) arrays: the flat arenas when both have one."""
    if params.flat is not None and grads.flat is not None \
            and params.flat.size == grads.flat.size:
        return [(params.flat, grads.flat)]
    return [(p, g) for (_, p), (_, g) in
            zip(model_mod.named_tensors(params), model_mod.named_tensors(grads))]


def make_opt_state(params: model_mod.ModelParams, config: TrainConfig) -> OptimizerState:
    state = OptimizerState()
    for p, _ in _update_pairs(params, params):
        state.scratch.append(np.empty_like(p))
        if config.optimizer == "adam":
            state.m.append(np.zeros_like(p))
            state.v.append(np.zeros_like(p))
    return state


def optimizer_step(params: model_mod.ModelParams, grads: model_mod.ModelParams,
                   state: OptimizerState, config: TrainConfig) -> OptimizerState:
    """One in-place update. Rejects non-finite gradients."""
    pairs = _update_pairs(params, grads)
    for _, g in pairs:
        if not np.isfinite(g).all():
            raise DivergenceError("non-finite gradient entries")
    while len(state.scratch) < len(pairs):
        state.scratch.append(np.empty_like(pairs[len(state.scratch)][0]))

    scale = 1.0
    if config.clip_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for _, g in pairs))
        if norm > config.clip_norm:
            scale = config.clip_norm / norm

    lr = config.learning_rate
    if config.optimizer == "sgd":
        for i, (p, g) in enumerate(pairs):
            sc = state.scratch[i]
            np.multiply(g, lr * scale, out=sc)
            p -= sc
        return state

    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(pairs):
        m, v, sc = state.m[i], state.v[i], state.scratch[i]
        np.multiply(g, g, out=sc)
        sc *= (1.0 - b2) * scale * scale
        v *= b2
        v += sc
        np.multiply(g, (1.0 - b1) * scale, out=sc)
        m *= b1
        m += sc
        # p -= lr * (m / bc1) / (sqrt(v / bc2) + eps), computed in scratch
        np.divide(v, bc2, out=sc)
        np.sqrt(sc, out=sc)
        sc += config.adam_eps
        np.divide(m, sc, out=sc)
        sc *= lr / bc1
        p -= sc
    return state


@dataclass
class EpochEntry:
    epoch: int
    loss: float
    lane_losses: list
    val_mape: float | None = None


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)

    def to_table(self) -> str:
        """Delimited text: epoch, L, L_1..L_N (and val MAPE when tracked)."""
        if not self.entries:
            return ""
        n = len(self.entries[0].lane_losses)
        has_val = self.entries[0].val_mape is not None
        cols = ["epoch", "loss"] + [f"loss_lane{i+1}" for i in range(n)]
        if has_val:
            cols.append("val_mape")
        lines = [",".join(cols)]
        for e in self.entries:
            row = [str(e.epoch), repr(e.loss)] + [repr(x) for x in e.lane_losses]
            if has_val:
                row.append(repr(e.val_mape))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


@dataclass
class FitResult:
    params: model_mod.ModelParams
    log: TrainLog
    best_params: model_mod.ModelParams | None = None
    best_epoch: int | None = None
    best_val_mape: float | None = None


def _stack_batch(samples):
    series = np.stack([s.series for s in samples]).astype(float)
    aux = np.stack([s.aux for s in samples]).astype(float)
    targets = np.stack([s.targets for s in samples]).astype(float)
    return series, aux, targets


def fit(train_samples, val_samples, arch: model_mod.ArchConfig,
        config: TrainConfig) -> FitResult:
    """Train a fresh model on the samples.

    Runs epochs x ceil(M/batch) steps with a seeded shuffle per epoch; the
    last short batch is kept. The logged per-epoch loss is recomputed with
    a full forward pass at the epoch's final parameters. Divergence raises
    DivergenceError carrying the partial log.
    """
    if not train_samples:
        raise ConfigError("training set is empty")
    series, aux, targets = _stack_batch(train_samples)
    series = series / INDEX_SCALE
    targets = targets / INDEX_SCALE
    if val_samples:
        v_series, v_aux, v_targets = _stack_batch(val_samples)
        v_series = v_series / INDEX_SCALE

    params = model_mod.init_params(arch, derive_seed(config.seed, "init"))
    state = make_opt_state(params, config)
    grads_buf = model_mod.params_structure(arch)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    M = series.shape[0]
    log = TrainLog()
    best_params = None
    best_epoch = None
    best_val = None

    for epoch in range(1, config.epochs + 1):
        order = np.arange(M)
        if config.shuffle:
            shuffle_rng.shuffle(order)
        try:
            for start in range(0, M, config.batch_size):
                idx = order[start : start + config.batch_size]
                out, cache = model_mod.forward(series[idx], aux[idx], params, arch)
                d_preds = np.empty_like(out.preds)
                for n in range(arch.num_lanes):
                    d_preds[:, n] = nn.mse_grad(out.preds[:, n], targets[idx, n])
                grads = model_mod.backward(d_preds, cache, params, arch,
                                           out=grads_buf)
                state = optimizer_step(params, grads, state, config)

            out, _ = model_mod.forward(series, aux, params, arch)
            loss, lane_losses = total_loss(out, targets)
        except DivergenceError as err:
            raise DivergenceError(str(err), log=log) from err
        if not np.isfinite(loss):
            raise DivergenceError(f"loss diverged at epoch {epoch}", log=log)

        val_mape = None
        if val_samples:
            from . import evaluate  # local import: evaluate imports this module

            v_out, _ = model_mod.forward(v_series, v_aux, params, arch)
            v_preds = v_out.preds * INDEX_SCALE
            val_mape = evaluate.mape_overall(
                [evaluate.mape_lane(v_preds[:, n], v_targets[:, n])
                 for n in range(arch.num_lanes)])
            if best_val is None or val_mape < best_val:
                best_val = val_mape
                best_epoch = epoch
                best_params = copy.deepcopy(params)
        log.entries.append(EpochEntry(epoch=epoch, loss=loss,
                                      lane_losses=lane_losses, val_mape=val_mape))

    return FitResult(params=params, log=log, best_params=best_params,
                     best_epoch=best_epoch, best_val_mape=best_val)
