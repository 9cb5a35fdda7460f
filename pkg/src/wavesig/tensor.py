"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery for a small convolutional embedding network: no
broadcasting beyond scalars, no GPU, no layer types the network does not
use. Tensors are immutable once created except for gradient population.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "conv2d",
    "relu",
    "maxpool2d",
    "dense",
    "l2_normalize",
    "backward",
    "grad_check",
]

_FLOAT_DTYPES = (np.float32, np.float64)

# Guard for sqrt-at-zero in backward passes; keeps gradients finite when an
# upstream mask has already zeroed them.
_SQRT_EPS = 1e-12


class Tensor:
    """N-dimensional float array node in a computation graph.

    `data` is row-major (innermost axis last). `grad` is populated by
    `backward` and has the same shape and dtype as `data`.
    """

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if arr.size == 0:
            raise ValueError("zero-extent tensors are not supported")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = lambda: None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{req})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    @staticmethod
    def _wire(out: "Tensor", parents: tuple["Tensor", ...], fn) -> "Tensor":
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = fn
        return out

    # -- arithmetic (same-shape elementwise, or python scalar) --

    @staticmethod
    def _check_same_shape(a: "Tensor", b: "Tensor") -> None:
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape} (no broadcasting)")

    def __add__(self, other):
        if isinstance(other, Tensor):
            self._check_same_shape(self, other)
            out = Tensor(self.data + other.data)

            def bw():
                if self.requires_grad:
                    self._accum(out.grad)
                if other.requires_grad:
                    other._accum(out.grad)

            return self._wire(out, (self, other), bw)
        out = Tensor(self.data + float(other))

        def bw_s():
            if self.requires_grad:
                self._accum(out.grad)

        return self._wire(out, (self,), bw_s)

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data)

        def bw():
            if self.requires_grad:
                self._accum(-out.grad)

        return self._wire(out, (self,), bw)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            self._check_same_shape(self, other)
            out = Tensor(self.data - other.data)

            def bw():
                if self.requires_grad:
                    self._accum(out.grad)
                if other.requires_grad:
                    other._accum(-out.grad)

            return self._wire(out, (self, other), bw)
        return self + (-float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            self._check_same_shape(self, other)
            out = Tensor(self.data * other.data)

            def bw():
                if self.requires_grad:
                    self._accum(out.grad * other.data)
                if other.requires_grad:
                    other._accum(out.grad * self.data)

            return self._wire(out, (self, other), bw)
        c = float(other)
        out = Tensor(self.data * c)

        def bw_s():
            if self.requires_grad:
                self._accum(out.grad * c)

        return self._wire(out, (self,), bw_s)

    __rmul__ = __mul__

    def square(self) -> "Tensor":
        out = Tensor(self.data * self.data)

        def bw():
            if self.requires_grad:
                self._accum(out.grad * 2.0 * self.data)

        return self._wire(out, (self,), bw)

    def sum(self) -> "Tensor":
        # Reduce in float64 regardless of storage dtype, then cast back.
        total = np.sum(self.data, dtype=np.float64)
        out = Tensor(np.asarray(total, dtype=self.data.dtype))

        def bw():
            if self.requires_grad:
                self._accum(np.full_like(self.data, out.grad))

        return self._wire(out, (self,), bw)

    def sqrt(self) -> "Tensor":
        if np.any(self.data < 0):
            raise ValueError("sqrt of negative tensor values")
        root = np.sqrt(self.data)
        out = Tensor(root)

        def bw():
            if self.requires_grad:
                self._accum(out.grad * 0.5 / np.maximum(root, _SQRT_EPS))

        return self._wire(out, (self,), bw)

    def reshape(self, shape) -> "Tensor":
        shape = tuple(int(s) for s in shape)
        old = self.data.shape
        out = Tensor(self.data.reshape(shape))

        def bw():
            if self.requires_grad:
                self._accum(out.grad.reshape(old))

        return self._wire(out, (self,), bw)

    def relu(self) -> "Tensor":
        return relu(self)


class Parameter:
    """Named trainable tensor ("conv1.weight" style path names)."""

    def __init__(self, name: str, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


class Tape:
    """Topologically ordered record of the graph reaching one output node.

    Replaying `nodes` in reverse visits every differentiable operation
    exactly once, in reverse order of execution.
    """

    def __init__(self, output: Tensor):
        nodes: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, accumulate: bool = False) -> Tape:
    """Populate gradients of everything reachable from a scalar loss.

    By default existing gradients on the graph are reset before the sweep;
    pass accumulate=True to add onto previously stored gradients instead.
    Returns the tape that was replayed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = Tape(loss)
    # Interior node gradients are scratch state and always start fresh; leaf
    # gradients (parameters, inputs) persist only in accumulate mode.
    for node in tape.nodes:
        if not accumulate or node._parents:
            node.grad = None
    loss._accum(np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        if node.grad is None:
            continue
        node._backward()
    return tape


# -- network operations --


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); gradient is the mask of strictly positive inputs."""
    out = Tensor(np.maximum(x.data, 0))

    def bw():
        if x.requires_grad:
            x._accum(out.grad * (x.data > 0))

    return Tensor._wire(out, (x,), bw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate a C.H.W input with F.C.kh.kw filters plus per-filter bias.

    Output extent along each axis is floor((n + 2*padding - k) / stride) + 1.
    """
    if x.data.ndim != 3:
        raise ValueError(f"conv2d input must be C.H.W, got shape {x.shape}")
    if weight.data.ndim != 4:
        raise ValueError(f"conv2d weight must be F.C.kh.kw, got shape {weight.shape}")
    c, h, w = x.shape
    f, wc, kh, kw = weight.shape
    if wc != c:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {wc}")
    if bias.shape != (f,):
        raise ValueError(f"conv2d bias must have shape ({f},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d requires stride >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(
            f"kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (padding, padding), (padding, padding)))

    def patch_view(arr):
        win = np.lib.stride_tricks.sliding_window_view(arr, (kh, kw), axis=(1, 2))
        return win[:, ::stride, ::stride]  # (C, oh, ow, kh, kw), zero-copy

    out_data = np.tensordot(weight.data, patch_view(xp), axes=([1, 2, 3], [0, 3, 4]))
    out = Tensor(out_data + bias.data[:, None, None])

    def bw():
        g = out.grad
        if bias.requires_grad:
            bias._accum(g.sum(axis=(1, 2)))
        if weight.requires_grad:
            weight._accum(np.tensordot(g, patch_view(xp), axes=([1, 2], [1, 2])))
        if x.requires_grad:
            dwin = np.tensordot(weight.data, g, axes=([0], [0]))  # (C, kh, kw, oh, ow)
            gx = np.zeros((c, hp, wp), dtype=x.data.dtype)
            for i in range(kh):
                for j in range(kw):
                    gx[:, i : i + oh * stride : stride, j : j + ow * stride : stride] += dwin[:, i, j]
            if padding:
                gx = gx[:, padding : padding + h, padding : padding + w]
            x._accum(gx)

    return Tensor._wire(out, (x, weight, bias), bw)


def maxpool2d(x: Tensor, window: int, stride: int, ceil_mode: bool = False) -> Tensor:
    """Spatial max over window x window patches of a C.H.W input.

    With ceil_mode, partial windows at the bottom/right edges are kept
    (padded with -inf) as long as they start inside the input. Gradient
    routes to the first maximal cell in row-major window order.
    """
    if x.data.ndim != 3:
        raise ValueError(f"maxpool2d input must be C.H.W, got shape {x.shape}")
    c, h, w = x.shape
    if window > h or window > w:
        raise ValueError(f"pool window {window} larger than input {h}x{w}")
    if stride < 1:
        raise ValueError("maxpool2d requires stride >= 1")

    def out_extent(n: int) -> int:
        if ceil_mode:
            e = -(-(n - window) // stride) + 1
            if (e - 1) * stride >= n:  # last window must start inside the input
                e -= 1
            return e
        return (n - window) // stride + 1

    oh, ow = out_extent(h), out_extent(w)
    need_h = (oh - 1) * stride + window
    need_w = (ow - 1) * stride + window
    xp = x.data
    if need_h > h or need_w > w:
        xp = np.pad(
            xp,
            ((0, 0), (0, need_h - h), (0, need_w - w)),
            constant_values=-np.inf,
        )
    windows = np.lib.stride_tricks.sliding_window_view(xp, (window, window), axis=(1, 2))
    windows = windows[:, ::stride, ::stride].reshape(c, oh, ow, window * window)
    flat_idx = np.argmax(windows, axis=3)  # first occurrence, row-major in-window
    out = Tensor(np.take_along_axis(windows, flat_idx[..., None], axis=3)[..., 0])

    def bw():
        if not x.requires_grad:
            return
        # cover both the pooled region (which may overhang in ceil mode)
        # and any trailing input cells floor mode left untouched
        gx = np.zeros((c, max(need_h, h), max(need_w, w)), dtype=x.data.dtype)
        wi, wj = np.divmod(flat_idx, window)
        ci = np.arange(c)[:, None, None]
        rows = np.arange(oh)[None, :, None] * stride + wi
        cols_ = np.arange(ow)[None, None, :] * stride + wj
        np.add.at(gx, (np.broadcast_to(ci, wi.shape), rows, cols_), out.grad)
        x._accum(gx[:, :h, :w])

    return Tensor._wire(out, (x,), bw)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map weight @ x + bias for a vector input."""
    if x.data.ndim != 1:
        raise ValueError(f"dense input must be a vector, got shape {x.shape}")
    if weight.data.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise ValueError(
            f"dense weight {weight.shape} incompatible with input of length {x.shape[0]}"
        )
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"dense bias must have shape ({weight.shape[0]},), got {bias.shape}")
    out = Tensor(weight.data @ x.data + bias.data)

    def bw():
        if bias.requires_grad:
            bias._accum(out.grad)
        if weight.requires_grad:
            weight._accum(np.outer(out.grad, x.data))
        if x.requires_grad:
            x._accum(weight.data.T @ out.grad)

    return Tensor._wire(out, (x, weight, bias), bw)


def l2_normalize(x: Tensor, epsilon: float = 1e-12) -> Tensor:
    """x / max(||x||, epsilon); the zero vector passes through unchanged."""
    norm = float(np.sqrt(np.sum(x.data.astype(np.float64) ** 2)))
    denom = max(norm, epsilon)
    y = x.data / denom
    out = Tensor(y.astype(x.data.dtype))

    def bw():
        if not x.requires_grad:
            return
        if norm >= epsilon:
            # d/dx (x/||x||) = (I - y y^T) / ||x||
            x._accum((out.grad - y * np.sum(out.grad * y)) / denom)
        else:
            x._accum(out.grad / denom)

    return Tensor._wire(out, (x,), bw)


def grad_check(builder, x: Tensor, step: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    `builder` maps a tensor to a scalar tensor. Error per coordinate is
    |analytic - numeric| / max(1, |analytic|); the max over coordinates is
    returned. Use float64 inputs for meaningful results.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    loss = builder(probe)
    backward(loss)
    analytic = probe.grad.copy() if probe.grad is not None else np.zeros_like(probe.data)

    base = x.data.astype(np.float64).copy()
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = builder(Tensor(base.copy())).item()
        flat[i] = orig - step
        lo = builder(Tensor(base.copy())).item()
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * step)

    err = np.abs(analytic.astype(np.float64) - numeric)
    scale = np.maximum(1.0, np.abs(analytic.astype(np.float64)))
    return float(np.max(err / scale))
