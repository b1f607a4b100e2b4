"""PointNet-style force regressor with hand-written backpropagation.

Shared per-point affine layers (1x1 convolutions) with ELU, a coordinate-wise
max over points, then a fully connected head with ELU and inverted dropout and
a linear scalar output. Everything is float64 numpy.

Weights are (out, in) matrices applied as ``x @ W.T + b``. Canonical layer
order: input T-Net point layers, T-Net head layers (only when enabled), point
MLP layers, head layers.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numba
import numpy as np

INIT_SEED = 20240601
CHECKPOINT_MAGIC = b"IFN1"
TNET_POINT_WIDTHS = (64, 128, 1024)
TNET_HEAD_WIDTHS = (512, 256, 9)


@dataclass
class NetConfig:
    n_points: int = 256
    point_mlp_widths: tuple[int, ...] = (64, 64, 64, 128, 1024)
    head_widths: tuple[int, ...] = (512, 256, 1)
    elu_alpha: float = 1.0
    dropout_rate: float = 0.3
    use_input_tnet: bool = False
    tnet_point_widths: tuple[int, ...] = TNET_POINT_WIDTHS
    tnet_head_widths: tuple[int, ...] = TNET_HEAD_WIDTHS

    def __post_init__(self):
        self.point_mlp_widths = tuple(int(w) for w in self.point_mlp_widths)
        self.head_widths = tuple(int(w) for w in self.head_widths)
        self.tnet_point_widths = tuple(int(w) for w in self.tnet_point_widths)
        self.tnet_head_widths = tuple(int(w) for w in self.tnet_head_widths)
        if not self.point_mlp_widths or not self.head_widths:
            raise ValueError("point_mlp_widths and head_widths must be non-empty")
        if self.head_widths[-1] != 1:
            raise ValueError("last head width must be 1 (scalar force)")
        if min(self.point_mlp_widths + self.head_widths) < 1:
            raise ValueError("all widths must be >= 1")
        if self.use_input_tnet and self.tnet_head_widths[-1] != 9:
            raise ValueError("T-Net head must end in 9 outputs")
        if self.elu_alpha <= 0:
            raise ValueError("elu_alpha must be > 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")

    def layer_shapes(self):
        """(out, in) of every affine layer in canonical order."""
        shapes = []
        if self.use_input_tnet:
            shapes += _chain(3, self.tnet_point_widths)
            shapes += _chain(self.tnet_point_widths[-1], self.tnet_head_widths)
        shapes += _chain(3, self.point_mlp_widths)
        shapes += _chain(self.point_mlp_widths[-1], self.head_widths)
        return shapes


def _chain(fan_in, widths):
    out = []
    for w in widths:
        out.append((w, fan_in))
        fan_in = w
    return out


@dataclass
class NetParams:
    config: NetConfig
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def arrays(self):
        """Flat list [W0, b0, W1, b1, ...] in canonical order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays):
        return NetParams(self.config, list(arrays[0::2]), list(arrays[1::2]))

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])

    def _split(self):
        """Group layers: (tnet_point, tnet_head, point, head) lists of (W, b)."""
        layers = list(zip(self.weights, self.biases))
        c = self.config
        groups = []
        if c.use_input_tnet:
            for n in (len(c.tnet_point_widths), len(c.tnet_head_widths)):
                groups.append(layers[:n])
                layers = layers[n:]
        else:
            groups += [[], []]
        n = len(c.point_mlp_widths)
        groups += [layers[:n], layers[n:]]
        return groups


def init_params(config: NetConfig, seed: int = INIT_SEED) -> NetParams:
    """LeCun-uniform weights (limit sqrt(3 / fan_in)), zero biases.

    The T-Net output layer starts at zero so the initial transform is identity.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    shapes = config.layer_shapes()
    tnet_last = len(config.tnet_point_widths) + len(config.tnet_head_widths) - 1
    for i, (n_out, n_in) in enumerate(shapes):
        lim = np.sqrt(3.0 / n_in)
        w = rng.uniform(-lim, lim, size=(n_out, n_in))
        if config.use_input_tnet and i == tnet_last:
            w[:] = 0.0
        weights.append(w)
        biases.append(np.zeros(n_out))
    return NetParams(config, weights, biases)


def zeros_like(params: NetParams) -> NetParams:
    return params.with_arrays([np.zeros_like(a) for a in params.arrays()])


def elu(x, alpha=1.0):
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))
    return float(out) if out.ndim == 0 else out


def elu_grad(x, alpha=1.0):
    """1 for x >= 0, alpha*exp(x) below (the kink at 0 takes the right-hand slope)."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, 1.0, alpha * np.exp(np.minimum(x, 0.0)))


@numba.njit(cache=True)
def _elu_with_slope(z, alpha):
    """In place: z becomes ELU(z); returns the slope array."""
    flat = z.reshape(-1)
    slope = np.empty_like(flat)
    for i in range(flat.size):
        v = flat[i]
        if v >= 0.0:
            slope[i] = 1.0
        else:
            e = np.exp(v)
            slope[i] = alpha * e
            flat[i] = alpha * (e - 1.0)
    return slope.reshape(z.shape)


def _shared_mlp(h, layers, alpha, cache):
    """Per-point layers; caches (ELU slope, activation) per layer."""
    for w, b in layers:
        a = h @ w.T + b
        slope = _elu_with_slope(a, alpha)
        cache.append((slope, a))
        h = a
    return h


def _maxpool(h):
    idx = np.argmax(h, axis=1)  # first maximum, i.e. lowest point index on ties
    return np.take_along_axis(h, idx[:, None, :], axis=1)[:, 0, :], idx


def forward_batch(params: NetParams, clouds, train=False, dropout_seed=None):
    """Forces for a (B, N, 3) batch; returns (forces (B,), cache)."""
    x = np.asarray(clouds, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected (B, N, 3) clouds, got {x.shape}")
    if x.shape[1] != params.config.n_points:
        raise ValueError(f"expected {params.config.n_points} points, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite coordinates in input cloud")
    cfg = params.config
    alpha = cfg.elu_alpha
    tp, th, pl, hl = params._split()
    cache = {"x": x}

    if cfg.use_input_tnet:
        tcache = []
        h = _shared_mlp(x, tp, alpha, tcache)
        g, tidx = _maxpool(h)
        hcache = []
        for w, b in th[:-1]:
            z = g @ w.T + b
            g = elu(z, alpha)
            hcache.append((z, g))
        w, b = th[-1]
        t = (g @ w.T + b).reshape(-1, 3, 3) + np.eye(3)
        cache.update(tnet_point=tcache, tnet_idx=tidx, tnet_head=hcache, tnet_g=g, transform=t)
        xt = x @ t
    else:
        xt = x
    cache["xt"] = xt

    pcache = []
    h = _shared_mlp(xt, pl, alpha, pcache)
    g, idx = _maxpool(h)
    cache.update(point=pcache, idx=idx, global_feat=g)

    rate = cfg.dropout_rate if train else 0.0
    rng = np.random.default_rng(dropout_seed) if rate > 0 else None
    hcache = []
    a = g
    for w, b in hl[:-1]:
        z = a @ w.T + b
        a = elu(z, alpha)
        mask = None
        if rng is not None:
            mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
            a = a * mask
        hcache.append((z, a, mask))
    w, b = hl[-1]
    y = (a @ w.T + b)[:, 0]
    cache.update(head=hcache, head_in=a)
    return y, cache


def forward(params: NetParams, cloud, mode="eval", dropout_seed=None):
    """Force estimate (newtons) for one (n_points, 3) cloud, plus the activation cache."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    y, cache = forward_batch(params, np.asarray(cloud)[None], mode == "train", dropout_seed)
    return float(y[0]), cache


def mse_loss(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("empty batch")
    if p.shape != t.shape:
        raise ValueError("predictions and targets differ in length")
    return float(np.mean((p - t) ** 2))


def _shared_mlp_backward(dh, inp, layers, lcache, alpha, grads_w, grads_b):
    """Backprop through per-point layers; returns gradient w.r.t. their input."""
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        slope, _ = lcache[li]
        dz = dh * slope
        prev = lcache[li - 1][1] if li > 0 else inp
        dz2 = dz.reshape(-1, dz.shape[-1])
        grads_w[li] = dz2.T @ prev.reshape(-1, prev.shape[-1])
        grads_b[li] = dz2.sum(axis=0)
        dh = dz @ w
    return dh


def _unpool(dg, idx, n_points):
    b, c = dg.shape
    dh = np.zeros((b, n_points, c))
    np.put_along_axis(dh, idx[:, None, :], dg[:, None, :], axis=1)
    return dh


def backward(params: NetParams, clouds, targets, dropout_seed=None, train=None):
    """Analytic gradient of the batch MSE; returns (grads as NetParams, loss).

    Dropout is active when the config rate is non-zero (pass train=False to
    differentiate the eval-mode network instead).
    """
    x = np.asarray(clouds, dtype=float)
    t = np.asarray(targets, dtype=float).ravel()
    if x.ndim == 2:
        x = x[None]
    if len(x) != len(t) or len(t) == 0:
        raise ValueError("batch needs equal, non-zero numbers of clouds and targets")
    cfg = params.config
    if train is None:
        train = cfg.dropout_rate > 0
    y, cache = forward_batch(params, x, train=train, dropout_seed=dropout_seed)
    alpha = cfg.elu_alpha
    bsz, n_pts = x.shape[0], x.shape[1]
    loss = float(np.mean((y - t) ** 2))
    dy = (2.0 / bsz) * (y - t)

    tp, th, pl, hl = params._split()
    g_tp_w, g_tp_b = [None] * len(tp), [None] * len(tp)
    g_th_w, g_th_b = [None] * len(th), [None] * len(th)
    g_pl_w, g_pl_b = [None] * len(pl), [None] * len(pl)
    g_hl_w, g_hl_b = [None] * len(hl), [None] * len(hl)

    # head
    w, _ = hl[-1]
    a = cache["head_in"]
    g_hl_w[-1] = dy[None, :] @ a
    g_hl_b[-1] = np.array([dy.sum()])
    da = dy[:, None] @ w
    hcache = cache["head"]
    for li in range(len(hl) - 2, -1, -1):
        z, _, mask = hcache[li]
        if mask is not None:
            da = da * mask
        dz = da * elu_grad(z, alpha)
        prev = hcache[li - 1][1] if li > 0 else cache["global_feat"]
        g_hl_w[li] = dz.T @ prev
        g_hl_b[li] = dz.sum(axis=0)
        da = dz @ hl[li][0]

    # max pool + point MLP
    dh = _unpool(da, cache["idx"], n_pts)
    dxt = _shared_mlp_backward(dh, cache["xt"], pl, cache["point"], alpha, g_pl_w, g_pl_b)

    if cfg.use_input_tnet:
        # xt = x @ T  ->  dT = x^T dxt
        dtr = np.einsum("bni,bnj->bij", x, dxt).reshape(bsz, 9)
        hc = cache["tnet_head"]
        g_th_w[-1] = dtr.T @ cache["tnet_g"]
        g_th_b[-1] = dtr.sum(axis=0)
        da = dtr @ th[-1][0]
        for li in range(len(th) - 2, -1, -1):
            z, _ = hc[li]
            dz = da * elu_grad(z, alpha)
            prev = hc[li - 1][1] if li > 0 else _maxpool(cache["tnet_point"][-1][1])[0]
            g_th_w[li] = dz.T @ prev
            g_th_b[li] = dz.sum(axis=0)
            da = dz @ th[li][0]
        dh = _unpool(da, cache["tnet_idx"], n_pts)
        _shared_mlp_backward(dh, x, tp, cache["tnet_point"], alpha, g_tp_w, g_tp_b)

    gw = g_tp_w + g_th_w + g_pl_w + g_hl_w
    gb = g_tp_b + g_th_b + g_pl_b + g_hl_b
    return NetParams(cfg, gw, gb), loss


def predict(params: NetParams, clouds, batch_size=64):
    """Eval-mode forces for a stack of clouds, processed in chunks."""
    x = np.asarray(clouds, dtype=float)
    out = [forward_batch(params, x[i : i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


# checkpoint -----------------------------------------------------------------
# layout (little-endian): magic "IFN1"; u32 n_points, use_tnet, n_point, n_head,
# n_tnet_point, n_tnet_head; f64 elu_alpha, dropout_rate; u32 widths for the four
# groups in that order; u32 layer_count; per layer u32 (out, in); then every W
# and b as f64 in canonical order.


def save_checkpoint(path, params: NetParams):
    c = params.config
    tpw = c.tnet_point_widths if c.use_input_tnet else ()
    thw = c.tnet_head_widths if c.use_input_tnet else ()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(
            struct.pack(
                "<6I",
                c.n_points,
                int(c.use_input_tnet),
                len(c.point_mlp_widths),
                len(c.head_widths),
                len(tpw),
                len(thw),
            )
        )
        f.write(struct.pack("<2d", c.elu_alpha, c.dropout_rate))
        widths = c.point_mlp_widths + c.head_widths + tuple(tpw) + tuple(thw)
        f.write(struct.pack(f"<{len(widths)}I", *widths))
        shapes = c.layer_shapes()
        f.write(struct.pack("<I", len(shapes)))
        for o, i in shapes:
            f.write(struct.pack("<2I", o, i))
        for a in params.arrays():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> NetParams:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {data[:4]!r}")
    off = 4
    n_points, use_tnet, n_p, n_h, n_tp, n_th = struct.unpack_from("<6I", data, off)
    off += 24
    alpha, rate = struct.unpack_from("<2d", data, off)
    off += 16
    nw = n_p + n_h + n_tp + n_th
    widths = struct.unpack_from(f"<{nw}I", data, off)
    off += 4 * nw
    kw = dict(
        n_points=n_points,
        point_mlp_widths=widths[:n_p],
        head_widths=widths[n_p : n_p + n_h],
        elu_alpha=alpha,
        dropout_rate=rate,
        use_input_tnet=bool(use_tnet),
    )
    if use_tnet:
        kw["tnet_point_widths"] = widths[n_p + n_h : n_p + n_h + n_tp]
        kw["tnet_head_widths"] = widths[n_p + n_h + n_tp :]
    config = NetConfig(**kw)
    (n_layers,) = struct.unpack_from("<I", data, off)
    off += 4
    shapes = [struct.unpack_from("<2I", data, off + 8 * k) for k in range(n_layers)]
    off += 8 * n_layers
    if [tuple(s) for s in shapes] != config.layer_shapes():
        raise ValueError(f"{path}: layer shapes disagree with header config")
    arrays = []
    for o, i in shapes:
        for shape in ((o, i), (o,)):
            n = int(np.prod(shape))
            arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).copy())
            off += 8 * n
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return NetParams(config, arrays[0::2], arrays[1::2])
