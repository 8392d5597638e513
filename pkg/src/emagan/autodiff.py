"""Reverse-mode automatic differentiation on float64 numpy storage.

The engine is deliberately small: exactly the operation set the generator,
critic, and synthesizer forward passes need. Every VJP closure builds its
result out of Tensor ops, so a backward pass is itself a differentiable graph;
``grad_as_node`` (double backprop) is the same traversal with recording left
on. Convolutions lower to BLAS matmuls via window views.

Shape discipline: binary elementwise ops require identical shapes. The only
broadcasting lives in the bias-add ops and the explicit ``expand``.
"""

from __future__ import annotations

import numpy as np


class ContractViolation(ValueError):
    """An operation was called outside its documented contract."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that turns off graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class _grad_enabled:
    """Context manager that forces graph recording back on (for double backprop)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = True
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array node in an acyclic computation graph.

    Leaves are user-created (``_parents`` empty). Interior nodes carry a vjp
    closure mapping the output cotangent to one cotangent per parent.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(
                f"item() needs a single-element tensor, got shape {self.data.shape}"
            )
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A graph-free leaf sharing this tensor's storage."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Arithmetic sugar; scalars fold into shift/scale (no implicit broadcast).
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def _node(data: np.ndarray, parents: tuple) -> Tensor:
    """Interior-node constructor; the caller assigns ``_vjp`` afterwards."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def _require_same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.shape != b.data.shape:
        raise ContractViolation(
            f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}"
        )


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    out = _node(a.data + b.data, (a, b))
    if out._parents:
        out._vjp = lambda g: (g, g)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    out = _node(a.data - b.data, (a, b))
    if out._parents:
        out._vjp = lambda g: (g, neg(g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    out = _node(a.data * b.data, (a, b))
    if out._parents:
        out._vjp = lambda g: (
            mul(g, b) if a.requires_grad else None,
            mul(g, a) if b.requires_grad else None,
        )
    return out


def neg(a: Tensor) -> Tensor:
    out = _node(-a.data, (a,))
    if out._parents:
        out._vjp = lambda g: (neg(g),)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """a * c for a python scalar c (treated as a constant)."""
    c = float(c)
    out = _node(a.data * c, (a,))
    if out._parents:
        out._vjp = lambda g: (scale(g, c),)
    return out


def shift(a: Tensor, c: float) -> Tensor:
    """a + c for a python scalar c."""
    out = _node(a.data + float(c), (a,))
    if out._parents:
        out._vjp = lambda g: (g,)
    return out


def tanh(a: Tensor) -> Tensor:
    out = _node(np.tanh(a.data), (a,))
    if out._parents:
        # d tanh = 1 - tanh^2, written in ops so it stays differentiable
        out._vjp = lambda g: (mul(g, shift(neg(mul(out, out)), 1.0)),)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = _node(y, (a,))
    if out._parents:
        out._vjp = lambda g: (mul(g, mul(out, shift(neg(out), 1.0))),)
    return out


def exp(a: Tensor) -> Tensor:
    out = _node(np.exp(a.data), (a,))
    if out._parents:
        out._vjp = lambda g: (mul(g, out),)
    return out


def sin(a: Tensor) -> Tensor:
    out = _node(np.sin(a.data), (a,))
    if out._parents:
        out._vjp = lambda g: (mul(g, cos(a)),)
    return out


def cos(a: Tensor) -> Tensor:
    out = _node(np.cos(a.data), (a,))
    if out._parents:
        out._vjp = lambda g: (neg(mul(g, sin(a))),)
    return out


def sqrt(a: Tensor) -> Tensor:
    out = _node(np.sqrt(a.data), (a,))
    if out._parents:
        out._vjp = lambda g: (scale(mul(g, reciprocal(out)), 0.5),)
    return out


def reciprocal(a: Tensor) -> Tensor:
    out = _node(1.0 / a.data, (a,))
    if out._parents:
        out._vjp = lambda g: (neg(mul(g, mul(out, out))),)
    return out


def leaky_relu(a: Tensor, alpha: float) -> Tensor:
    """Elementwise max(x, alpha*x). Subgradient at exactly 0 is alpha."""
    alpha = float(alpha)
    x = a.data
    out = _node(np.where(x > 0.0, x, alpha * x), (a,))
    if out._parents:
        slope = Tensor(np.where(x > 0.0, 1.0, alpha))
        out._vjp = lambda g: (mul(g, slope),)
    return out


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; subgradient 0 at and beyond the boundaries."""
    x = a.data
    out = _node(np.clip(x, lo, hi), (a,))
    if out._parents:
        inside = Tensor(((x > lo) & (x < hi)).astype(np.float64))
        out._vjp = lambda g: (mul(g, inside),)
    return out


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = a.data.shape
    out = _node(a.data.reshape(shape), (a,))
    if out._parents:
        out._vjp = lambda g: (reshape(g, old),)
    return out


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ContractViolation("transpose2d: rank-2 input required")
    out = _node(np.ascontiguousarray(a.data.T), (a,))
    if out._parents:
        out._vjp = lambda g: (transpose2d(g),)
    return out


def expand(a: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis of extent n (values repeated). Adjoint of sum_axis."""
    data = np.repeat(np.expand_dims(a.data, axis), n, axis=axis)
    out = _node(data, (a,))
    if out._parents:
        out._vjp = lambda g: (sum_axis(g, axis),)
    return out


def sum_axis(a: Tensor, axis: int) -> Tensor:
    axis = axis % a.data.ndim
    n = a.data.shape[axis]
    out = _node(a.data.sum(axis=axis), (a,))
    if out._parents:
        out._vjp = lambda g: (expand(g, axis, n),)
    return out


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    out = _node(np.asarray(a.data.sum()), (a,))
    if out._parents:
        out._vjp = lambda g: (fill(g, shape),)
    return out


def fill(a: Tensor, shape) -> Tensor:
    """Broadcast a scalar tensor to ``shape``. Adjoint of sum_all."""
    if a.data.size != 1:
        raise ContractViolation("fill: scalar input required")
    out = _node(np.full(shape, float(a.data)), (a,))
    if out._parents:
        out._vjp = lambda g: (sum_all(g),)
    return out


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    length = a.data.shape[-1]
    if not (0 <= start <= stop <= length):
        raise ContractViolation(f"slice_last: [{start}:{stop}] out of range {length}")
    out = _node(np.ascontiguousarray(a.data[..., start:stop]), (a,))
    if out._parents:
        out._vjp = lambda g: (pad_last(g, start, length - stop),)
    return out


def pad_last(a: Tensor, left: int, right: int) -> Tensor:
    if left < 0 or right < 0:
        raise ContractViolation("pad_last: negative padding")
    width = [(0, 0)] * (a.data.ndim - 1) + [(left, right)]
    out = _node(np.pad(a.data, width), (a,))
    if out._parents:
        n = a.data.shape[-1]
        out._vjp = lambda g: (slice_last(g, left, left + n),)
    return out


def flip_last(a: Tensor) -> Tensor:
    out = _node(np.ascontiguousarray(a.data[..., ::-1]), (a,))
    if out._parents:
        out._vjp = lambda g: (flip_last(g),)
    return out


def channel(a: Tensor, idx: int) -> Tensor:
    """Extract channel idx from a (B, C, L) tensor -> (B, L)."""
    if a.data.ndim != 3:
        raise ContractViolation("channel: rank-3 input required")
    C = a.data.shape[1]
    out = _node(np.ascontiguousarray(a.data[:, idx, :]), (a,))
    if out._parents:
        out._vjp = lambda g: (channel_embed(g, idx, C),)
    return out


def channel_embed(a: Tensor, idx: int, C: int) -> Tensor:
    """Place a (B, L) tensor into channel idx of zeros (B, C, L)."""
    B, L = a.data.shape
    data = np.zeros((B, C, L))
    data[:, idx, :] = a.data
    out = _node(data, (a,))
    if out._parents:
        out._vjp = lambda g: (channel(g, idx),)
    return out


def gather_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Index the last axis with an integer vector. Adjoint is scatter-add."""
    idx = np.asarray(idx, dtype=np.int64)
    length = a.data.shape[-1]
    out = _node(np.ascontiguousarray(a.data[..., idx]), (a,))
    if out._parents:
        out._vjp = lambda g: (scatter_add_last(g, idx, length),)
    return out


def scatter_add_last(a: Tensor, idx: np.ndarray, length: int) -> Tensor:
    """Scatter-add the last axis into a zero vector of ``length`` entries."""
    idx = np.asarray(idx, dtype=np.int64)
    data = np.zeros(a.data.shape[:-1] + (length,))
    np.add.at(data, (..., idx), a.data)
    out = _node(data, (a,))
    if out._parents:
        out._vjp = lambda g: (gather_last(g, idx),)
    return out


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation(
            f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}"
        )
    out = _node(a.data @ b.data, (a, b))
    if out._parents:
        out._vjp = lambda g: (
            matmul(g, transpose2d(b)) if a.requires_grad else None,
            matmul(transpose2d(a), g) if b.requires_grad else None,
        )
    return out


def bias_add(a: Tensor, b: Tensor) -> Tensor:
    """(B, O) + (O,) row bias."""
    if a.data.ndim != 2 or b.data.ndim != 1 or a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation("bias_add: expected (B, O) plus (O,)")
    out = _node(a.data + b.data[None, :], (a, b))
    if out._parents:
        out._vjp = lambda g: (g, sum_axis(g, 0) if b.requires_grad else None)
    return out


def channel_bias_add(a: Tensor, b: Tensor) -> Tensor:
    """(B, C, L) + (C,) channel bias."""
    if a.data.ndim != 3 or b.data.ndim != 1 or a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation("channel_bias_add: expected (B, C, L) plus (C,)")
    out = _node(a.data + b.data[None, :, None], (a, b))
    if out._parents:
        out._vjp = lambda g: (
            g,
            sum_axis(sum_axis(g, 2), 0) if b.requires_grad else None,
        )
    return out


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b for x (B, I), w (I, O), b (O,)."""
    return bias_add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# Convolutions
#
# Three primitives close under differentiation:
#   conv1d      gather/correlate     (B,C,L) x (F,C,K) -> (B,F,L')
#   conv1d_transpose_raw  scatter    (B,C,L) x (C,F,K) -> (B,F,(L-1)s+K)
#   conv1d_kgrad  window correlate   long x short      -> kernel shape
# Each lowers to one BLAS matmul.
# ---------------------------------------------------------------------------


def _windows_last(x: np.ndarray, K: int, stride: int) -> np.ndarray:
    """Strided view of sliding windows over the last axis: (..., L', K)."""
    view = np.lib.stride_tricks.sliding_window_view(x, K, axis=-1)
    return view[..., ::stride, :]


def conv1d(x: Tensor, k: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation: out length floor((L-K)/stride)+1."""
    if x.data.ndim != 3 or k.data.ndim != 3:
        raise ContractViolation("conv1d: expected x (B,C,L) and k (F,C,K)")
    B, C, L = x.data.shape
    F, Ck, K = k.data.shape
    if Ck != C:
        raise ContractViolation(f"conv1d: channel mismatch {C} vs {Ck}")
    if K > L:
        raise ContractViolation(f"conv1d: kernel {K} longer than input {L}")
    if stride < 1:
        raise ContractViolation("conv1d: stride must be >= 1")
    Lp = (L - K) // stride + 1
    win = _windows_last(x.data, K, stride)[:, :, :Lp]  # (B, C, L', K)
    col = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * Lp, C * K)
    y = col @ k.data.reshape(F, C * K).T  # (B*L', F)
    y = np.ascontiguousarray(y.reshape(B, Lp, F).transpose(0, 2, 1))
    out = _node(y, (x, k))
    if out._parents:
        def vjp(g):
            gx = None
            gk = None
            if x.requires_grad:
                # scatter of g with the same kernel; pad to the input length
                raw = conv1d_transpose_raw(g, k, stride)
                deficit = L - ((Lp - 1) * stride + K)
                gx = pad_last(raw, 0, deficit) if deficit else raw
            if k.requires_grad:
                gk = conv1d_kgrad(x, g, stride, K)
            return (gx, gk)

        out._vjp = vjp
    return out


def conv1d_transpose_raw(x: Tensor, k: Tensor, stride: int) -> Tensor:
    """Scatter-add transpose conv, untrimmed: out length (L-1)*stride+K."""
    if x.data.ndim != 3 or k.data.ndim != 3:
        raise ContractViolation("conv1d_transpose: expected x (B,C,L), k (C,F,K)")
    B, C, L = x.data.shape
    Ck, F, K = k.data.shape
    if Ck != C:
        raise ContractViolation(f"conv1d_transpose: channel mismatch {C} vs {Ck}")
    if stride < 1:
        raise ContractViolation("conv1d_transpose: stride must be >= 1")
    Lraw = (L - 1) * stride + K
    prod = (
        np.ascontiguousarray(x.data.transpose(0, 2, 1)).reshape(B * L, C)
        @ k.data.reshape(C, F * K)
    ).reshape(B, L, F, K)
    y = np.zeros((B, F, Lraw))
    for j in range(K):
        y[:, :, j : j + stride * L : stride] += prod[:, :, :, j].transpose(0, 2, 1)
    out = _node(y, (x, k))
    if out._parents:
        def vjp(g):
            gx = None
            gk = None
            if x.requires_grad:
                # g (B,F,Lraw) correlated with k read as an (C out, F in) kernel
                gx = conv1d(g, k, stride)
            if k.requires_grad:
                gk = conv1d_kgrad(g, x, stride, K)
            return (gx, gk)

        out._vjp = vjp
    return out


def conv1d_kgrad(long: Tensor, short: Tensor, stride: int, K: int) -> Tensor:
    """Kernel cotangent: out[cs,cl,j] = sum_{b,i} short[b,cs,i] * long[b,cl,i*stride+j].

    This is the window correlation shared by both conv vjps. ``long`` must
    cover (Ls-1)*stride+K samples.
    """
    B, Cl, Ll = long.data.shape
    Bs, Cs, Ls = short.data.shape
    if B != Bs:
        raise ContractViolation("conv1d_kgrad: batch mismatch")
    if (Ls - 1) * stride + K > Ll:
        raise ContractViolation("conv1d_kgrad: long input too short")
    win = _windows_last(long.data, K, stride)[:, :, :Ls]  # (B, Cl, Ls, K)
    wmat = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * Ls, Cl * K)
    smat = np.ascontiguousarray(short.data.transpose(0, 2, 1)).reshape(B * Ls, Cs)
    y = (smat.T @ wmat).reshape(Cs, Cl, K)
    out = _node(y, (long, short))
    if out._parents:
        def vjp(g):
            glong = None
            gshort = None
            if long.requires_grad:
                raw = conv1d_transpose_raw(short, g, stride)
                deficit = Ll - ((Ls - 1) * stride + K)
                glong = pad_last(raw, 0, deficit) if deficit else raw
            if short.requires_grad:
                full = conv1d(long, g, stride)
                gshort = (
                    slice_last(full, 0, Ls) if full.data.shape[-1] != Ls else full
                )
            return (glong, gshort)

        out._vjp = vjp
    return out


def conv1d_transpose(x: Tensor, k: Tensor, stride: int) -> Tensor:
    """Transpose conv with output length fixed to stride*L.

    The raw scatter result has length (L-1)*stride+K; the excess K-stride is
    trimmed symmetrically (left floor, right remainder), matching the critic's
    pad-then-valid-conv convention so the two ops stay exact adjoints.
    """
    K = k.data.shape[-1]
    if K < stride:
        raise ContractViolation("conv1d_transpose: kernel shorter than stride")
    L = x.data.shape[-1]
    raw = conv1d_transpose_raw(x, k, stride)
    excess = K - stride
    left = excess // 2
    return slice_last(raw, left, left + stride * L) if excess else raw


def pad_conv1d(x: Tensor, k: Tensor, stride: int) -> Tensor:
    """Zero-pad so valid conv yields length L/stride (requires stride | L).

    Pads K-stride total, left floor / right remainder: the exact adjoint of
    conv1d_transpose's symmetric trim.
    """
    K = k.data.shape[-1]
    L = x.data.shape[-1]
    if L % stride:
        raise ContractViolation("pad_conv1d: stride must divide input length")
    excess = K - stride
    left = excess // 2
    return conv1d(pad_last(x, left, excess - left), k, stride)


# ---------------------------------------------------------------------------
# Frame ops (synthesizer support)
# ---------------------------------------------------------------------------


def framewise_correlate(frames: Tensor, kernels: Tensor) -> Tensor:
    """Per-frame valid correlation: out[b,t,n] = sum_j frames[b,t,n+j]*kernels[b,t,j]."""
    if frames.data.ndim != 3 or kernels.data.ndim != 3:
        raise ContractViolation("framewise_correlate: rank-3 inputs required")
    B, T, P = frames.data.shape
    Bk, Tk, K = kernels.data.shape
    if (B, T) != (Bk, Tk):
        raise ContractViolation("framewise_correlate: frame grids differ")
    if K > P:
        raise ContractViolation("framewise_correlate: kernel longer than frame")
    win = np.lib.stride_tricks.sliding_window_view(frames.data, K, axis=-1)
    y = np.einsum("btnj,btj->btn", win, kernels.data)
    out = _node(y, (frames, kernels))
    if out._parents:
        N = P - K + 1

        def vjp(g):
            gf = None
            gk = None
            if frames.requires_grad:
                # full correlation of g with the reversed kernel
                gf = framewise_correlate(pad_last(g, K - 1, K - 1), flip_last(kernels))
            if kernels.requires_grad:
                gk = framewise_correlate(frames, g)
            return (gf, gk)

        out._vjp = vjp
    return out


def overlap_add(frames: Tensor, hop: int) -> Tensor:
    """OLA of (B, T, W) frames at ``hop`` -> (B, (T-1)*hop + W)."""
    if frames.data.ndim != 3:
        raise ContractViolation("overlap_add: rank-3 input required")
    B, T, W = frames.data.shape
    if hop < 1 or hop > W:
        raise ContractViolation("overlap_add: hop must be in [1, frame width]")
    total = (T - 1) * hop + W
    y = np.zeros((B, total))
    for t in range(T):
        y[:, t * hop : t * hop + W] += frames.data[:, t, :]
    out = _node(y, (frames,))
    if out._parents:
        out._vjp = lambda g: (frame_extract(g, hop, W, T),)
    return out


def frame_extract(signal: Tensor, hop: int, width: int, count: int) -> Tensor:
    """Adjoint of overlap_add: gather ``count`` frames of ``width`` at ``hop``."""
    if signal.data.ndim != 2:
        raise ContractViolation("frame_extract: rank-2 input required")
    need = (count - 1) * hop + width
    if signal.data.shape[-1] < need:
        raise ContractViolation("frame_extract: signal shorter than frame grid")
    view = np.lib.stride_tricks.sliding_window_view(signal.data, width, axis=-1)
    y = np.ascontiguousarray(view[:, ::hop, :][:, :count])
    out = _node(y, (signal,))
    if out._parents:
        L = signal.data.shape[-1]

        def vjp(g):
            acc = overlap_add(g, hop)
            deficit = L - acc.data.shape[-1]
            return (pad_last(acc, 0, deficit) if deficit else acc,)

        out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# Backward traversal
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list:
    """Postorder over the requires_grad subgraph (parents before consumers)."""
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def _grad_map(loss: Tensor, create_graph: bool) -> dict:
    if loss.data.size != 1:
        raise ContractViolation("backward: loss must be scalar")
    order = _topo_order(loss)
    grads: dict[int, Tensor] = {id(loss): Tensor(np.ones_like(loss.data))}
    ctx = _grad_enabled() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            parts = node._vjp(g)
            for parent, part in zip(node._parents, parts):
                if part is None or not parent.requires_grad:
                    continue
                held = grads.get(id(parent))
                grads[id(parent)] = part if held is None else add(held, part)
    return {id(n): grads[id(n)] for n in order if id(n) in grads}


def backward(loss: Tensor) -> dict:
    """Reverse-mode gradients of a scalar loss.

    Returns a map keyed by the requires_grad *leaf* tensors reachable from
    ``loss`` (constants and non-grad tensors never accumulate); values are
    constant tensors. Fan-out accumulates additively.
    """
    by_id = _grad_map(loss, create_graph=False)
    result: dict[Tensor, Tensor] = {}
    for node in _topo_order(loss):
        if node._vjp is None and node.requires_grad and id(node) in by_id:
            result[node] = by_id[id(node)]
    return result


def grad_as_node(loss: Tensor, wrt: Tensor) -> Tensor:
    """Gradient of ``loss`` w.r.t. ``wrt`` as a differentiable graph node.

    The backward pass is traced with recording on (double backprop), so the
    returned tensor can appear in further losses. A wrt tensor the loss does
    not depend on yields zeros.
    """
    if not wrt.requires_grad:
        raise ContractViolation("grad_as_node: wrt does not require grad")
    by_id = _grad_map(loss, create_graph=True)
    got = by_id.get(id(wrt))
    if got is None:
        return Tensor(np.zeros_like(wrt.data))
    return got
