"""Dense-tensor reverse-mode automatic differentiation.

A small tape-based engine over numpy arrays.  Every differentiable
operation records its parents and a vjp (vector-Jacobian product)
closure.  The vjp closures are themselves written in terms of Tensor
operations, so gradients can be differentiated again: running
``grad(..., create_graph=True)`` yields cotangent tensors that are part
of the graph, which is what the Wasserstein gradient penalty needs.

Layout is row-major and dense.  There is no implicit broadcasting; the
few broadcast patterns the layers need (per-channel bias, spatial
expansion) go through explicit ops with explicit adjoints.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a checked value contains NaN or Inf."""


_grad_depth = 0  # >0 disables graph recording (no_grad nesting counter)


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_depth
        _grad_depth += 1
        return self

    def __exit__(self, *exc):
        global _grad_depth
        _grad_depth -= 1
        return False


def _recording() -> bool:
    return _grad_depth == 0


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_vjp", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad = None  # numpy accumulator, filled by backward()
        self._vjp = None
        self._parents = ()

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def of(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def assert_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in {what}")
        return self

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- autodiff engine ------------------------------------------------------

    def backward(self, create_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        ``self`` must be scalar-shaped.  Leaves are tensors created with
        ``requires_grad=True`` that are not the result of an operation.
        """
        if self.size != 1:
            raise ValueError("backward() requires a scalar output")
        seed = Tensor(np.ones_like(self.data))
        cotangents = _backprop(self, seed, create_graph)
        for node, cot in cotangents.items():
            if node._vjp is None and node.requires_grad:
                g = cot.data
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError("non-finite gradient in backward()")
                node.grad = g if node.grad is None else node.grad + g


def grad(output: Tensor, inputs, create_graph: bool = False):
    """Return cotangent tensors of ``output`` w.r.t. each tensor in ``inputs``.

    Does not touch ``.grad`` buffers.  With ``create_graph=True`` the
    returned tensors participate in the graph and can be differentiated
    again.
    """
    if output.size != 1:
        raise ValueError("grad() requires a scalar output")
    seed = Tensor(np.ones_like(output.data))
    cotangents = _backprop(output, seed, create_graph, wanted=set(map(id, inputs)))
    out = []
    for t in inputs:
        c = cotangents.get(t)
        out.append(c if c is not None else Tensor(np.zeros_like(t.data)))
    return out


def _backprop(root: Tensor, seed: Tensor, create_graph: bool, wanted=None):
    topo: list[Tensor] = []
    visited = set()

    def visit(node):
        stack = [(node, False)]
        while stack:
            n, done = stack.pop()
            if done:
                topo.append(n)
                continue
            if id(n) in visited:
                continue
            visited.add(id(n))
            stack.append((n, True))
            for p in n._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

    visit(root)
    cot: dict[int, Tensor] = {id(root): seed}
    by_id: dict[int, Tensor] = {id(root): root}
    ctx = no_grad() if not create_graph else _NullCtx()
    with ctx:
        for node in reversed(topo):
            g = cot.get(id(node))
            if g is None or node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                pid = id(p)
                if pid in cot:
                    cot[pid] = cot[pid] + pg
                else:
                    cot[pid] = pg
                    by_id[pid] = p
    if wanted is not None:
        return {by_id[i]: c for i, c in cot.items() if i in wanted}
    return {by_id[i]: c for i, c in cot.items()}


class _NullCtx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _node(data: np.ndarray, parents, vjp) -> Tensor:
    """Create a graph node (or a detached tensor when recording is off)."""
    out = Tensor(data)
    if _recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


# -- elementwise arithmetic ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = Tensor.of(a), Tensor.of(b)
    if a.shape != b.shape and a.ndim > 0 and b.ndim > 0:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = Tensor.of(a), Tensor.of(b)
    if a.shape != b.shape and a.ndim > 0 and b.ndim > 0:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data * b.data, (a, b), lambda g: (mul(g, b), mul(g, a)))


def neg(a: Tensor) -> Tensor:
    a = Tensor.of(a)
    return _node(-a.data, (a,), lambda g: (neg(g),))


def mul_scalar(a: Tensor, s: float) -> Tensor:
    a = Tensor.of(a)
    s = float(s)
    return _node(a.data * s, (a,), lambda g: (mul_scalar(g, s),))


def add_scalar(a: Tensor, s: float) -> Tensor:
    a = Tensor.of(a)
    return _node(a.data + float(s), (a,), lambda g: (g,))


def pow_scalar(a: Tensor, p: float) -> Tensor:
    a = Tensor.of(a)
    p = float(p)
    return _node(
        a.data**p,
        (a,),
        lambda g: (mul(g, mul_scalar(pow_scalar(a, p - 1.0), p)),),
    )


def reciprocal(a: Tensor) -> Tensor:
    return pow_scalar(a, -1.0)


def div(a: Tensor, b: Tensor) -> Tensor:
    return mul(Tensor.of(a), reciprocal(Tensor.of(b)))


def exp(a: Tensor) -> Tensor:
    a = Tensor.of(a)
    out_data = np.exp(a.data)

    def vjp(g):
        return (mul(g, exp(a)),)

    return _node(out_data, (a,), vjp)


def log(a: Tensor) -> Tensor:
    a = Tensor.of(a)
    return _node(np.log(a.data), (a,), lambda g: (div(g, a),))


def sqrt(a: Tensor) -> Tensor:
    return pow_scalar(a, 0.5)


# -- reductions and shape ops --------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = Tensor.of(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        gd = g
        if not keepdims and axis is not None:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            shape = list(a.shape)
            for ax in sorted(ax % a.ndim for ax in axes):
                shape[ax] = 1
            gd = reshape(gd, tuple(shape))
        elif axis is None:
            gd = reshape(gd, (1,) * a.ndim)
        return (expand(gd, a.shape),)

    return _node(data, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = Tensor.of(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul_scalar(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast size-1 axes of ``a`` up to ``shape``; adjoint is a sum."""
    a = Tensor.of(a)
    shape = tuple(shape)
    if len(shape) != a.ndim:
        raise ValueError(f"expand rank mismatch {a.shape} -> {shape}")
    axes = tuple(i for i, (s0, s1) in enumerate(zip(a.shape, shape)) if s0 != s1)
    for ax in axes:
        if a.shape[ax] != 1:
            raise ValueError(f"expand needs size-1 axes, got {a.shape} -> {shape}")
    if not axes:
        return a
    data = np.broadcast_to(a.data, shape).copy()
    return _node(data, (a,), lambda g: (tsum(g, axis=axes, keepdims=True),))


def reshape(a: Tensor, shape) -> Tensor:
    a = Tensor.of(a)
    shape = tuple(shape)
    return _node(a.data.reshape(shape), (a,), lambda g: (reshape(g, a.shape),))


def permute(a: Tensor, axes) -> Tensor:
    a = Tensor.of(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (permute(g, inv),))


def concat(tensors, axis: int) -> Tensor:
    tensors = [Tensor.of(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(narrow(g, axis, int(offsets[i]), sizes[i]) for i in range(len(tensors)))

    return _node(data, tuple(tensors), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    a = Tensor.of(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    data = np.ascontiguousarray(a.data[tuple(idx)])

    def vjp(g):
        return (pad_axis(g, axis, start, a.shape[axis] - start - length),)

    return _node(data, (a,), vjp)


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    a = Tensor.of(a)
    pads = [(0, 0)] * a.ndim
    pads[axis] = (before, after)
    data = np.pad(a.data, pads)
    return _node(data, (a,), lambda g: (narrow(g, axis, before, a.shape[axis]),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; the only matmul form the layers need."""
    a, b = Tensor.of(a), Tensor.of(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    data = a.data @ b.data

    def vjp(g):
        return (matmul(g, transpose(b)), matmul(transpose(a), g))

    return _node(data, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    return permute(a, (1, 0))


# -- stable nonlinearities -----------------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    a = Tensor.of(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def vjp(g):
        y = sigmoid(a)
        return (mul(g, mul(y, add_scalar(neg(y), 1.0))),)

    return _node(out_data.astype(x.dtype), (a,), vjp)


def softplus(a: Tensor) -> Tensor:
    a = Tensor.of(a)
    x = a.data
    out_data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return _node(out_data.astype(x.dtype), (a,), lambda g: (mul(g, sigmoid(a)),))


def tanh(a: Tensor) -> Tensor:
    a = Tensor.of(a)
    out_data = np.tanh(a.data)

    def vjp(g):
        y = tanh(a)
        return (mul(g, add_scalar(neg(mul(y, y)), 1.0)),)

    return _node(out_data, (a,), vjp)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where unclamped (constant mask)."""
    a = Tensor.of(a)
    mask = ((a.data > lo) & (a.data < hi)).astype(a.dtype)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (mul(g, Tensor(mask)),))


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    a = Tensor.of(a)
    # The slope mask is constant w.r.t. differentiation (a.e. exact).
    mask = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    return _node(a.data * mask, (a,), lambda g: (mul(g, Tensor(mask)),))


# -- im2col / col2im: the adjoint pair behind conv and transposed conv ---------


def _conv_geometry(h, w, kh, kw, stride, pad):
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"convolution output collapses: input {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}")
    return ho, wo


def _im2col_data(x: np.ndarray, kh, kw, stride, pad):
    b, c, h, w = x.shape
    ho, wo = _conv_geometry(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = x[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _col2im_data(cols: np.ndarray, xshape, kh, kw, stride, pad):
    b, c, h, w = xshape
    ho, wo = _conv_geometry(h, w, kh, kw, stride, pad)
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for u in range(kh):
        for v in range(kw):
            xp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += cols[:, :, u, v]
    if pad:
        xp = xp[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(xp)


def im2col(x: Tensor, kh, kw, stride, pad) -> Tensor:
    x = Tensor.of(x)
    data = _im2col_data(x.data, kh, kw, stride, pad)
    xshape = x.shape
    return _node(data, (x,), lambda g: (col2im(g, xshape, kh, kw, stride, pad),))


def col2im(cols: Tensor, xshape, kh, kw, stride, pad) -> Tensor:
    cols = Tensor.of(cols)
    data = _col2im_data(cols.data, xshape, kh, kw, stride, pad)
    return _node(data, (cols,), lambda g: (im2col(g, kh, kw, stride, pad),))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with (out, in, kh, kw) kernels."""
    x, weight = Tensor.of(x), Tensor.of(weight)
    b, ci, h, w = x.shape
    co, ci_w, kh, kw = weight.shape
    if ci != ci_w:
        raise ValueError(f"conv2d channel mismatch: input {ci}, weight {ci_w}")
    ho, wo = _conv_geometry(h, w, kh, kw, stride, pad)
    cols = im2col(x, kh, kw, stride, pad)  # (B, Ci*kh*kw, L)
    cols2 = reshape(permute(cols, (1, 0, 2)), (ci * kh * kw, b * ho * wo))
    wmat = reshape(weight, (co, ci * kh * kw))
    out = matmul(wmat, cols2)  # (Co, B*L)
    out = permute(reshape(out, (co, b, ho * wo)), (1, 0, 2))
    out = reshape(out, (b, co, ho, wo))
    if bias is not None:
        out = add(out, channel_bias(bias, out.shape))
    return out


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of conv2d as a forward layer; weight is (in, out, kh, kw).

    Output spatial size is (H-1)*stride - 2*pad + kernel.
    """
    x, weight = Tensor.of(x), Tensor.of(weight)
    b, ci, h, w = x.shape
    ci_w, co, kh, kw = weight.shape
    if ci != ci_w:
        raise ValueError(f"conv_transpose2d channel mismatch: input {ci}, weight {ci_w}")
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (w - 1) * stride - 2 * pad + kw
    if ho <= 0 or wo <= 0:
        raise ValueError("conv_transpose2d output collapses")
    wmat = transpose(reshape(weight, (ci, co * kh * kw)))  # (Co*kh*kw, Ci)
    xmat = reshape(permute(x, (1, 0, 2, 3)), (ci, b * h * w))
    cols = matmul(wmat, xmat)  # (Co*kh*kw, B*H*W)
    cols = permute(reshape(cols, (co * kh * kw, b, h * w)), (1, 0, 2))
    out = col2im(cols, (b, co, ho, wo), kh, kw, stride, pad)
    if bias is not None:
        out = add(out, channel_bias(bias, out.shape))
    return out


def channel_bias(bias: Tensor, out_shape) -> Tensor:
    """Per-channel bias (C,) expanded to NCHW or (B, F) expanded from (F,)."""
    bias = Tensor.of(bias)
    if len(out_shape) == 4:
        c = out_shape[1]
        if bias.shape != (c,):
            raise ValueError(f"bias shape {bias.shape} does not match {c} channels")
        return expand(reshape(bias, (1, c, 1, 1)), out_shape)
    if len(out_shape) == 2:
        f = out_shape[1]
        if bias.shape != (f,):
            raise ValueError(f"bias shape {bias.shape} does not match {f} features")
        return expand(reshape(bias, (1, f)), out_shape)
    raise ValueError(f"unsupported bias target rank {len(out_shape)}")


# -- resize pair ----------------------------------------------------------------


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    x = Tensor.of(x)
    b, c, h, w = x.shape
    f = int(factor)
    data = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)
    return _node(data, (x,), lambda g: (downsample_sum(g, f),))


def downsample_sum(x: Tensor, factor: int) -> Tensor:
    x = Tensor.of(x)
    b, c, h, w = x.shape
    f = int(factor)
    if h % f or w % f:
        raise ValueError(f"downsample factor {f} does not divide {h}x{w}")
    data = x.data.reshape(b, c, h // f, f, w // f, f).sum(axis=(3, 5))
    return _node(data, (x,), lambda g: (upsample_nearest(g, f),))


def avg_pool(x: Tensor, factor: int) -> Tensor:
    return mul_scalar(downsample_sum(x, factor), 1.0 / (factor * factor))


# -- composite building blocks ---------------------------------------------------


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization with learned scale/shift."""
    x = Tensor.of(x)
    if x.ndim != 4:
        raise ValueError("instance_norm expects NCHW input")
    mu = tmean(x, axis=(2, 3), keepdims=True)
    xc = add(x, neg(expand(mu, x.shape)))
    var = tmean(mul(xc, xc), axis=(2, 3), keepdims=True)
    inv = pow_scalar(add_scalar(var, eps), -0.5)
    y = mul(xc, expand(inv, x.shape))
    return add(mul(y, channel_bias(gamma, x.shape)), channel_bias(beta, x.shape))


# Operator sugar on Tensor.
Tensor.__add__ = lambda self, other: add(self, Tensor.of(other))
Tensor.__radd__ = lambda self, other: add(Tensor.of(other), self)
Tensor.__sub__ = lambda self, other: add(self, neg(Tensor.of(other)))
Tensor.__rsub__ = lambda self, other: add(Tensor.of(other), neg(self))
Tensor.__mul__ = lambda self, other: (
    mul_scalar(self, other) if np.isscalar(other) else mul(self, Tensor.of(other))
)
Tensor.__rmul__ = Tensor.__mul__
Tensor.__truediv__ = lambda self, other: (
    mul_scalar(self, 1.0 / other) if np.isscalar(other) else div(self, Tensor.of(other))
)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, p: pow_scalar(self, p)
Tensor.sum = tsum
Tensor.mean = tmean
Tensor.reshape = reshape
Tensor.exp = exp
Tensor.log = log
Tensor.sqrt = sqrt
