"""Reverse-mode automatic differentiation over numpy arrays.

The op set is exactly what the bundled convolutional classifier needs: 3x3
same-padded convolution, batch normalization, relu, 2x2 max pooling, global
average pooling, an affine head, a fused softmax cross entropy, and a few
elementwise glue ops.  Each op records a closure; ``backward`` replays them in
reverse topological order.

Arrays keep the dtype they came in with (float32 in training, float64 in the
gradient checks), so numerical behaviour is controlled by the caller.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "backward",
    "add",
    "mul",
    "scale",
    "relu",
    "conv2d",
    "batch_norm",
    "maxpool2",
    "global_avg_pool",
    "linear",
    "softmax_cross_entropy",
]

# Per-thread so concurrent clients can mix recorded and unrecorded passes.
_grad_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class no_grad:
    """Context manager that suppresses graph recording on this thread."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _grad_state.enabled = False
        return self

    def __exit__(self, *exc):
        _grad_state.enabled = self._prev
        return False


class Tensor:
    """A numpy array plus an optional gradient and backprop closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor, params=None) -> None:
    """Backpropagate from a scalar loss.

    ``params`` (an iterable of Tensors) is optional; any member the graph does
    not reach gets an explicit zero gradient so optimizer steps stay uniform.
    """
    if loss._backward is None and not loss._parents:
        raise RuntimeError(
            "backward called on a tensor with no recorded computation graph"
        )
    if loss.data.ndim != 0:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            # leaves carry no closure; their grads accumulate directly
            if id(parent) not in seen and parent._backward is not None:
                stack.append((parent, False))

    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)

    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# elementwise glue


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out_data = a.data + b.data

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return _result(out_data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
    out_data = a.data * b.data

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(out_data, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out_data = a.data * np.asarray(s, dtype=a.data.dtype)

    def back(g):
        _accum(a, g * np.asarray(s, dtype=a.data.dtype))

    return _result(out_data, (a,), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out_data = np.where(mask, x.data, np.asarray(0, dtype=x.data.dtype))

    def back(g):
        _accum(x, g * mask)

    return _result(out_data, (x,), back)


# ---------------------------------------------------------------------------
# convolution (3x3, stride 1, zero padding 1, NHWC layout)

_conv_index_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _conv_indices(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    key = (height, width)
    cached = _conv_index_cache.get(key)
    if cached is not None:
        return cached
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    dys, dxs = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    # padded-source row/col for every (output pixel, kernel tap)
    ii = (ys.reshape(-1, 1) + dys.reshape(1, -1)).reshape(-1)
    jj = (xs.reshape(-1, 1) + dxs.reshape(1, -1)).reshape(-1)
    _conv_index_cache[key] = (ii, jj)
    return ii, jj


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Same-size 3x3 convolution.

    ``x`` is (N, H, W, C_in); ``w`` is (3, 3, C_in, C_out).  Implemented as an
    index gather into the zero-padded input followed by one matmul, which is
    where nearly all training time goes.
    """
    n, height, width, c_in = x.data.shape
    if w.data.shape[:3] != (3, 3, c_in):
        raise ValueError(
            f"conv2d: weight shape {w.data.shape} incompatible with input "
            f"channels {c_in}"
        )
    c_out = w.data.shape[3]

    padded = np.zeros((n, height + 2, width + 2, c_in), dtype=x.data.dtype)
    padded[:, 1:-1, 1:-1, :] = x.data
    ii, jj = _conv_indices(height, width)
    # (N, H*W*9, C_in) -> rows ordered (pixel, tap)
    col = padded[:, ii, jj, :].reshape(n * height * width, 9 * c_in)
    w_flat = w.data.reshape(9 * c_in, c_out)
    out_data = (col @ w_flat).reshape(n, height, width, c_out)

    def back(g):
        g_flat = g.reshape(n * height * width, c_out)
        if w.requires_grad:
            _accum(w, (col.T @ g_flat).reshape(3, 3, c_in, c_out))
        if x.requires_grad:
            g_col = (g_flat @ w_flat.T).reshape(n, height, width, 9, c_in)
            g_pad = np.zeros_like(padded)
            for tap in range(9):
                dy, dx = divmod(tap, 3)
                g_pad[:, dy : dy + height, dx : dx + width, :] += g_col[:, :, :, tap, :]
            _accum(x, g_pad[:, 1:-1, 1:-1, :])

    return _result(out_data, (x, w), back)


# ---------------------------------------------------------------------------
# batch normalization (per channel over N, H, W)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize per channel; updates the running buffers in train mode."""
    axes = tuple(range(x.data.ndim - 1))
    if train:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    x_hat = (x.data - mean) * inv_std
    out_data = x_hat * gamma.data + beta.data

    m = int(np.prod([x.data.shape[a] for a in axes]))

    def back(g):
        if gamma.requires_grad:
            _accum(gamma, (g * x_hat).sum(axis=axes))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            g_hat = g * gamma.data
            if train:
                # batch statistics depend on x, so the full coupling applies
                term = (
                    m * g_hat
                    - g_hat.sum(axis=axes)
                    - x_hat * (g_hat * x_hat).sum(axis=axes)
                )
                _accum(x, term * inv_std / m)
            else:
                _accum(x, g_hat * inv_std)

    return _result(out_data, (x, gamma, beta), back)


# ---------------------------------------------------------------------------
# pooling


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; spatial dims must be even."""
    n, height, width, c = x.data.shape
    if height % 2 or width % 2:
        raise ValueError(f"maxpool2: spatial size ({height}, {width}) not even")
    h2, w2 = height // 2, width // 2
    windows = (
        x.data.reshape(n, h2, 2, w2, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, h2, w2, 4, c)
    )
    arg = windows.argmax(axis=3)
    out_data = np.take_along_axis(windows, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def back(g):
        g_windows = np.zeros_like(windows)
        np.put_along_axis(g_windows, arg[:, :, :, None, :], g[:, :, :, None, :], axis=3)
        g_x = (
            g_windows.reshape(n, h2, w2, 2, 2, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(n, height, width, c)
        )
        _accum(x, g_x)

    return _result(out_data, (x,), back)


def global_avg_pool(x: Tensor) -> Tensor:
    n, height, width, c = x.data.shape
    out_data = x.data.mean(axis=(1, 2))

    def back(g):
        _accum(
            x,
            np.broadcast_to(
                g[:, None, None, :] / np.asarray(height * width, dtype=g.dtype),
                x.data.shape,
            ),
        )

    return _result(out_data, (x,), back)


# ---------------------------------------------------------------------------
# affine head


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.data.shape[1] != w.data.shape[0]:
        raise ValueError(
            f"linear: input width {x.data.shape[1]} != weight rows {w.data.shape[0]}"
        )
    out_data = x.data @ w.data + b.data

    def back(g):
        if w.requires_grad:
            _accum(w, x.data.T @ g)
        if b.requires_grad:
            _accum(b, g.sum(axis=0))
        if x.requires_grad:
            _accum(x, g @ w.data.T)

    return _result(out_data, (x, w, b), back)


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
    denom: float | None = None,
) -> Tensor:
    """Weighted mean of per-row negative log likelihoods.

    Row weights default to 1.  ``denom`` overrides the divisor (default: the
    number of rows), which lets a caller average a masked sum over the full
    batch size rather than the surviving rows.  Stabilized by max subtraction.
    """
    n, c = logits.data.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} does not match {n} rows")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ValueError(f"targets must lie in [0, {c})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    exp_z = np.exp(z)
    sum_exp = exp_z.sum(axis=1, keepdims=True)
    log_probs = z - np.log(sum_exp)
    nll = -log_probs[np.arange(n), targets]

    if weights is None:
        w = np.ones(n, dtype=logits.data.dtype)
    else:
        w = np.asarray(weights, dtype=logits.data.dtype)
        if w.shape != (n,):
            raise ValueError(f"weights shape {w.shape} does not match {n} rows")
    d = float(n) if denom is None else float(denom)
    if d <= 0:
        raise ValueError("denom must be positive")
    out_data = np.asarray((nll * w).sum() / d, dtype=logits.data.dtype)

    def back(g):
        probs = exp_z / sum_exp
        grad = probs * w[:, None]
        grad[np.arange(n), targets] -= w
        _accum(logits, grad * (g / np.asarray(d, dtype=grad.dtype)))

    return _result(out_data, (logits,), back)
