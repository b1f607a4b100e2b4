"""Nadam optimiser and the mini-batch training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import forcenet as fn

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass
class OptState:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be > 0")

    @classmethod
    def for_arrays(cls, arrays, **hyper):
        return cls(
            m=[np.zeros_like(a, dtype=float) for a in arrays],
            v=[np.zeros_like(a, dtype=float) for a in arrays],
            **hyper,
        )

    def diagnostics(self, grads):
        """Bias-corrected first moment m_hat = m_tilde / (1 - beta1^t) for the last step."""
        b1 = self.beta1
        return [(b1 * m + (1 - b1) * g) / (1 - b1**self.t) for m, g in zip(self.m, grads)]


def nadam_step(state: OptState, params, grads, names=None):
    """One Nadam update.

    `params` and `grads` are parallel lists of arrays (or NetParams). Returns
    (new_state, new_params) without touching the inputs. The parameter update
    follows the Nesterov-corrected form

        theta -= lr / (sqrt(v_hat) + eps) * (beta1 * m_tilde + (1 - beta1) * g / (1 - beta1^t))
    """
    is_net = isinstance(params, fn.NetParams)
    p_arr = params.arrays() if is_net else list(params)
    g_arr = grads.arrays() if isinstance(grads, fn.NetParams) else list(grads)
    if len(p_arr) != len(g_arr):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state = OptState.for_arrays(p_arr, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    for i, g in enumerate(g_arr):
        if np.shape(g) != np.shape(p_arr[i]) or np.shape(g) != np.shape(state.m[i]):
            raise ValueError(f"shape mismatch at array {i}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names else _layer_name(i)
            raise FloatingPointError(f"non-finite gradient in {label}")

    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(p_arr, g_arr, state.m, state.v):
        g = np.asarray(g, dtype=float)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_tilde = b1 * m + (1 - b1) * g
        v_hat = v / (1 - b2**t)
        step = (b1 * m_tilde + (1 - b1) * g / (1 - b1**t)) / (np.sqrt(v_hat) + state.eps)
        new_p.append(p - state.lr * step)
        new_m.append(m)
        new_v.append(v)
    new_state = OptState(state.lr, b1, b2, state.eps, t, new_m, new_v)
    if is_net:
        return new_state, params.with_arrays(new_p)
    return new_state, new_p


def _layer_name(i):
    return f"layer {i // 2} {'weight' if i % 2 == 0 else 'bias'}"


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0


@dataclass
class History:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("epoch,train_mse,val_mse\n")
            for i, tr in enumerate(self.train_mse):
                va = self.val_mse[i] if i < len(self.val_mse) else float("nan")
                f.write(f"{i + 1},{tr:.10g},{va:.10g}\n")


def train(
    net_config: fn.NetConfig,
    clouds,
    targets,
    cfg: TrainConfig,
    val=None,
    params: fn.NetParams | None = None,
    progress=None,
):
    """Shuffled mini-batch Nadam on the MSE loss.

    `clouds` is (S, n_points, 3) of normalised clouds. `val` is an optional
    (clouds, targets) pair evaluated after every epoch in eval mode. Train MSE
    is the mean of the per-batch losses. Returns (params, History).
    """
    x = np.asarray(clouds, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    if len(x) == 0 or len(x) != len(y):
        raise ValueError("dataset must be non-empty with one target per cloud")
    if params is None:
        params = fn.init_params(net_config)
    state = OptState.for_arrays(
        params.arrays(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps
    )
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        losses, weights = [], []
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            drop_seed = int(rng.integers(2**63))
            grads, loss = fn.backward(params, x[idx], y[idx], dropout_seed=drop_seed)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            try:
                state, params = nadam_step(state, params, grads)
            except FloatingPointError as exc:
                raise DivergenceError(epoch, loss) from exc
            losses.append(loss)
            weights.append(len(idx))
        tr = float(np.average(losses, weights=weights))
        hist.train_mse.append(tr)
        if val is not None:
            pred = fn.predict(params, val[0])
            hist.val_mse.append(fn.mse_loss(pred, val[1]))
        log.info("epoch %d train_mse %.6g val_mse %s", epoch, tr, hist.val_mse[-1] if val else "-")
        if progress is not None:
            progress(epoch, hist)
    return params, hist
