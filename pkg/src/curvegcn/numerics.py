"""Dense-tensor primitives with hand-written backward passes.

Everything is plain numpy: forward functions return arrays (and, where a
backward exists, enough is recomputable from the inputs), backward functions
take the upstream gradient and return gradients for each differentiable
input.  No graph is built; callers wire the chain by hand.

Arrays are float64 by default.  Production runs may switch to float32 via
``set_default_dtype``; gradient checks always run at float64.
"""

from __future__ import annotations

import numpy as np

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


def assert_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Raise if any entry is NaN or infinite."""
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w + b with x (B,I), w (I,O), b (O,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"linear shape mismatch: x{x.shape} w{w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"linear bias shape {b.shape} != ({w.shape[1]},)")
    return x @ w + b


def linear_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients (dx, dw, db) of linear() given upstream dy (B,O)."""
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# elementwise activations
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # gradient at exactly 0 is defined as 0
    return dy * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.result_type(x, np.float64) if x.dtype == np.float64 else x.dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backward through sigmoid given its output y."""
    return dy * y * (1.0 - y)


def tanh_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backward through tanh given its output y."""
    return dy * (1.0 - y * y)


# ---------------------------------------------------------------------------
# bilinear sampling on the pixel-center grid
# ---------------------------------------------------------------------------
#
# Unit coordinates: (0,0) is the top-left corner of the map, 1 is the full
# extent, and the center of texel (row r, col c) sits at
# ((c + 0.5) / W, (r + 0.5) / H).  Coordinates outside [0,1] are clamped to
# the border, and border cells replicate the edge texel.

def _sample_prep(fmap: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    c, h, w = fmap.shape
    xin = np.clip(xs, 0.0, 1.0)
    yin = np.clip(ys, 0.0, 1.0)
    gx = xin * w - 0.5
    gy = yin * h - 0.5
    x0 = np.floor(gx)
    y0 = np.floor(gy)
    u = gx - x0
    v = gy - y0
    x0c = np.clip(x0, 0, w - 1).astype(np.intp)
    x1c = np.clip(x0 + 1, 0, w - 1).astype(np.intp)
    y0c = np.clip(y0, 0, h - 1).astype(np.intp)
    y1c = np.clip(y0 + 1, 0, h - 1).astype(np.intp)
    return u, v, x0c, x1c, y0c, y1c


def sample_grid(fmap: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear-sample fmap (C,H,W) at P unit-coordinate points -> (P,C)."""
    if fmap.ndim != 3 or fmap.size == 0:
        raise ValueError("feature map must be a nonempty (C,H,W) array")
    u, v, x0, x1, y0, y1 = _sample_prep(fmap, xs, ys)
    f00 = fmap[:, y0, x0]  # (C,P)
    f01 = fmap[:, y0, x1]
    f10 = fmap[:, y1, x0]
    f11 = fmap[:, y1, x1]
    top = f00 + u * (f01 - f00)
    bot = f10 + u * (f11 - f10)
    out = top + v * (bot - top)
    return out.T


def sample_grid_backward(fmap: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                         dout: np.ndarray):
    """Gradients (dfmap, dxs, dys) of sample_grid given dout (P,C).

    dfmap scatters the four corner weights; dxs/dys are zero where the
    input coordinate was clamped outside [0,1].
    """
    c, h, w = fmap.shape
    u, v, x0, x1, y0, y1 = _sample_prep(fmap, xs, ys)
    g = dout.T  # (C,P)

    w00 = (1 - u) * (1 - v)
    w01 = u * (1 - v)
    w10 = (1 - u) * v
    w11 = u * v
    dfmap = np.zeros_like(fmap)
    flat = dfmap.reshape(c, h * w)
    np.add.at(flat.T, y0 * w + x0, (g * w00).T)
    np.add.at(flat.T, y0 * w + x1, (g * w01).T)
    np.add.at(flat.T, y1 * w + x0, (g * w10).T)
    np.add.at(flat.T, y1 * w + x1, (g * w11).T)

    f00 = fmap[:, y0, x0]
    f01 = fmap[:, y0, x1]
    f10 = fmap[:, y1, x0]
    f11 = fmap[:, y1, x1]
    # d/du and d/dv of the blend, contracted with the upstream gradient
    ddu = ((1 - v) * (f01 - f00) + v * (f11 - f10)) * g
    ddv = ((1 - u) * (f10 - f00) + u * (f11 - f01)) * g
    inside_x = (xs > 0.0) & (xs < 1.0)
    inside_y = (ys > 0.0) & (ys < 1.0)
    dxs = ddu.sum(axis=0) * w * inside_x
    dys = ddv.sum(axis=0) * h * inside_y
    return dfmap, dxs, dys


def bilinear_sample(fmap: np.ndarray, x: float, y: float) -> np.ndarray:
    """Sample one point; returns the (C,) interpolated feature vector."""
    return sample_grid(fmap, np.array([x]), np.array([y]))[0]


def bilinear_sample_backward(fmap: np.ndarray, x: float, y: float,
                             dout: np.ndarray) -> np.ndarray:
    """Gradient of bilinear_sample w.r.t. the feature map."""
    dfmap, _, _ = sample_grid_backward(fmap, np.array([x]), np.array([y]),
                                       dout.reshape(1, -1))
    return dfmap


# ---------------------------------------------------------------------------
# conv2d (cross-correlation)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]            # (C, Ho, Wo, k, k)
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    return cols, ho, wo


def conv2d(x: np.ndarray, kernels: np.ndarray, stride: int = 1,
           padding: int = 0) -> np.ndarray:
    """Cross-correlate x (C,H,W) with kernels (O,C,k,k) -> (O,H',W')."""
    o, ck, k, k2 = kernels.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be odd and square, got {k}x{k2}")
    if x.ndim != 3 or x.shape[0] != ck:
        raise ValueError(f"conv2d shape mismatch: x{x.shape} kernels{kernels.shape}")
    cols, ho, wo = _im2col(x, k, stride, padding)
    y = kernels.reshape(o, ck * k * k) @ cols
    return y.reshape(o, ho, wo)


def conv2d_backward(x: np.ndarray, kernels: np.ndarray, dy: np.ndarray,
                    stride: int = 1, padding: int = 0):
    """Gradients (dx, dkernels) of conv2d given dy (O,H',W')."""
    o, c, k, _ = kernels.shape
    _, h, w = x.shape
    ho, wo = dy.shape[1], dy.shape[2]
    cols, _, _ = _im2col(x, k, stride, padding)
    dy_mat = dy.reshape(o, ho * wo)
    dkernels = (dy_mat @ cols.T).reshape(o, c, k, k)

    dcols = kernels.reshape(o, c * k * k).T @ dy_mat        # (C*k*k, Ho*Wo)
    dcols = dcols.reshape(c, k, k, ho, wo)
    dxp = np.zeros((c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki:ki + stride * ho:stride,
                kj:kj + stride * wo:stride] += dcols[:, ki, kj]
    if padding:
        return dxp[:, padding:-padding, padding:-padding], dkernels
    return dxp, dkernels


# ---------------------------------------------------------------------------
# binary cross entropy
# ---------------------------------------------------------------------------

BCE_EPS = 1e-7


def bce(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean binary cross entropy; pred is clamped to [eps, 1-eps]."""
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("bce target must contain only 0 and 1")
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    return float(loss.mean())


def bce_backward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of bce() w.r.t. pred (zero where the clamp was active)."""
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    g = (-target / p + (1.0 - target) / (1.0 - p)) / pred.size
    active = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    return g * active


# ---------------------------------------------------------------------------
# parameters and Adam
# ---------------------------------------------------------------------------

class ParamStore:
    """Named parameters with matching gradient slots and Adam state.

    Insertion order is preserved everywhere, which keeps training and
    serialization deterministic.
    """

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.values:
            raise ValueError(f"duplicate parameter {name!r}")
        value = np.asarray(value, dtype=default_dtype())
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        self._m[name] = np.zeros_like(value)
        self._v[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self):
        return list(self.values.keys())

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        g = self.grads[name]
        if g.shape != np.shape(grad):
            raise ValueError(f"gradient shape {np.shape(grad)} != {g.shape} for {name!r}")
        g += grad

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def scale_grads(self, factor: float) -> None:
        for g in self.grads.values():
            g *= factor


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update over every parameter; gradients are zeroed after."""
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name!r}")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in store.values.items():
        g = store.grads[name]
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    store.zero_grads()


def decayed_lr(base_lr: float, epoch: int, factor: float = 0.1,
               every: int = 7) -> float:
    """Step-decay schedule: base_lr * factor**(epoch // every)."""
    if every <= 0:
        return base_lr
    return base_lr * factor ** (epoch // every)
