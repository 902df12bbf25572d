"""Reverse-mode automatic differentiation over 2-D float64 numpy arrays.

Minimal tape machinery sized for full-batch GNN training: every value is a
rank-2 tensor, every op records a vector-Jacobian closure on the innermost
active tape, and ``Tape.backward`` walks the recorded nodes in reverse
execution order (execution order is a topological order by construction).

Gradients accumulate additively into ``Parameter.grad`` buffers, so two
backward calls without an intervening ``zero_grad`` sum their gradients.
Intermediate tensors get their gradient slots freed as soon as the producing
node has been processed.

Tapes are tracked per-thread; models running on different threads do not see
each other's tapes.
"""

import threading

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operand shapes do not match the op contract."""


class DomainError(ValueError):
    """Operand values fall outside the op's domain (log of <= 0, etc.)."""


_STACK = threading.local()


def _tapes():
    try:
        return _STACK.tapes
    except AttributeError:
        _STACK.tapes = []
        return _STACK.tapes


def active_tape():
    """Innermost tape open on this thread, or None."""
    tapes = _tapes()
    return tapes[-1] if tapes else None


class Tensor:
    """Immutable-by-convention 2-D float64 array plus a grad-tracking flag."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are rank-2, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def tensor(data):
    """Wrap data as a constant (non-differentiable) tensor."""
    return Tensor(data)


def scalar(x):
    return Tensor(np.array([[float(x)]]))


class Parameter(Tensor):
    """Trainable leaf tensor with a gradient buffer and Adam state."""

    __slots__ = ("grad", "m", "v", "step")

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def zero_grad(self):
        self.grad[...] = 0.0


class Tape:
    """Records (output, inputs, vjp) triples in execution order.

    Use as a context manager around a forward pass, then call ``backward``
    with the (1, 1) loss produced under it.
    """

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tapes().pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, out, inputs, vjp):
        self._nodes.append((out, inputs, vjp))

    def backward(self, loss):
        """Accumulate d(loss)/d(param) into every reachable Parameter.

        Parameters the loss does not depend on simply receive no update
        (their gradient contribution is zero).
        """
        if not isinstance(loss, Tensor):
            raise TypeError("backward expects a Tensor loss")
        if loss.data.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {loss.data.shape}")
        grads = {id(loss): np.ones((1, 1))}
        for out, inputs, vjp in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, vjp(g)):
                if gi is None:
                    continue
                if isinstance(t, Parameter):
                    t.grad += gi
                elif t.requires_grad:
                    acc = grads.get(id(t))
                    grads[id(t)] = gi if acc is None else acc + gi

    def clear(self):
        self._nodes.clear()


def _record(out_data, inputs, vjp):
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(out_data, requires_grad=True)
        tape.record(out, inputs, vjp)
        return out
    return Tensor(out_data)


# ---------------------------------------------------------------------------
# core ops


def matmul(a, b):
    ad, bd = a.data, b.data
    if ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")

    def vjp(g):
        return (
            g @ bd.T if a.requires_grad else None,
            ad.T @ g if b.requires_grad else None,
        )

    return _record(ad @ bd, (a, b), vjp)


def add(a, b):
    """Elementwise sum; also accepts a (1, c) second operand as a row bias."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:

        def vjp(g):
            return (
                g if a.requires_grad else None,
                g if b.requires_grad else None,
            )

    elif bd.shape == (1, ad.shape[1]):

        def vjp(g):
            return (
                g if a.requires_grad else None,
                g.sum(axis=0, keepdims=True) if b.requires_grad else None,
            )

    else:
        raise ShapeError(f"add shapes incompatible: {ad.shape} vs {bd.shape}")
    return _record(ad + bd, (a, b), vjp)


def sub(a, b):
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise ShapeError(f"sub shapes differ: {ad.shape} vs {bd.shape}")

    def vjp(g):
        return (
            g if a.requires_grad else None,
            -g if b.requires_grad else None,
        )

    return _record(ad - bd, (a, b), vjp)


def hadamard(a, b):
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise ShapeError(f"hadamard shapes differ: {ad.shape} vs {bd.shape}")

    def vjp(g):
        return (
            g * bd if a.requires_grad else None,
            g * ad if b.requires_grad else None,
        )

    return _record(ad * bd, (a, b), vjp)


def scale(a, c):
    c = float(c)

    def vjp(g):
        return (g * c if a.requires_grad else None,)

    return _record(a.data * c, (a,), vjp)


def relu(a):
    ad = a.data

    def vjp(g):
        return (g * (ad > 0.0) if a.requires_grad else None,)

    return _record(np.maximum(ad, 0.0), (a,), vjp)


def sigmoid(a):
    s = expit(a.data)

    def vjp(g):
        return (g * s * (1.0 - s) if a.requires_grad else None,)

    return _record(s, (a,), vjp)


def log(a):
    ad = a.data
    if np.any(ad <= 0.0):
        raise DomainError("log requires strictly positive entries")

    def vjp(g):
        return (g / ad if a.requires_grad else None,)

    return _record(np.log(ad), (a,), vjp)


def rowwise_softmax(a, temperature=1.0):
    """Softmax over each row of a, with logits divided by temperature."""
    if temperature <= 0.0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    z = a.data / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        inner = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - inner) / temperature,)

    return _record(s, (a,), vjp)


def rowwise_log_softmax(a, temperature=1.0):
    """log(softmax(a / temperature)) computed stably row by row."""
    if temperature <= 0.0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    z = a.data / temperature
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return ((g - s * g.sum(axis=1, keepdims=True)) / temperature,)

    return _record(out, (a,), vjp)


def sum_all(a):
    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (np.full_like(a.data, g[0, 0]),)

    return _record(np.array([[a.data.sum()]]), (a,), vjp)


def mean_all(a):
    n = a.data.size

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (np.full_like(a.data, g[0, 0] / n),)

    return _record(np.array([[a.data.mean()]]), (a,), vjp)


def gather_rows(a, idx):
    """Select rows a[idx]; backward scatter-adds into the source rows."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ShapeError("gather_rows index out of range")

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _record(a.data[idx], (a,), vjp)


def concat_cols(a, b):
    ad, bd = a.data, b.data
    if ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"concat_cols row counts differ: {ad.shape} vs {bd.shape}")
    na = ad.shape[1]

    def vjp(g):
        return (
            g[:, :na] if a.requires_grad else None,
            g[:, na:] if b.requires_grad else None,
        )

    return _record(np.hstack([ad, bd]), (a, b), vjp)


# ---------------------------------------------------------------------------
# sparse product


def spmm(sp, b, values=None):
    """Sparse @ dense. With ``values`` given, that (nnz, 1) tensor replaces
    the stored values on the fixed sparsity pattern of ``sp`` and the product
    is differentiable with respect to the values as well. Sparse indices are
    never differentiated.
    """
    bd = b.data
    if sp.cols != bd.shape[0]:
        raise ShapeError(f"spmm dims differ: ({sp.rows}x{sp.cols}) @ {bd.shape}")
    if values is None:
        mat = sp.to_scipy()
        inputs = (b,)

        def vjp(g):
            return (sp.to_scipy_t() @ g if b.requires_grad else None,)

    else:
        if values.data.shape != (sp.nnz, 1):
            raise ShapeError(
                f"spmm values must be ({sp.nnz}, 1), got {values.data.shape}"
            )
        mat = sp.with_values(values.data[:, 0])
        inputs = (values, b)
        row_index = sp.row_index()

        def vjp(g):
            gv = None
            if values.requires_grad:
                gv = (g[row_index] * bd[sp.indices]).sum(axis=1, keepdims=True)
            gb = mat.T @ g if b.requires_grad else None
            return (gv, gb)

    return _record(mat @ bd, inputs, vjp)


# ---------------------------------------------------------------------------
# segment ops (CSR-style row segments)


def _check_indptr(indptr, total):
    indptr = np.asarray(indptr, dtype=np.int64)
    if indptr.ndim != 1 or indptr[0] != 0 or indptr[-1] != total:
        raise ShapeError("indptr must start at 0 and end at the item count")
    counts = np.diff(indptr)
    if np.any(counts <= 0):
        raise ShapeError("segments must be non-empty")
    return indptr, counts


def segment_softmax(vals, indptr):
    """Softmax over contiguous segments of a (nnz, 1) column vector.

    Segments are CSR rows: entries [indptr[i], indptr[i+1]) normalize to sum
    to one. Every segment must be non-empty.
    """
    vd = vals.data
    if vd.shape[1] != 1:
        raise ShapeError(f"segment_softmax expects a column vector, got {vd.shape}")
    indptr, counts = _check_indptr(indptr, vd.shape[0])
    v = vd[:, 0]
    starts = indptr[:-1]
    seg_max = np.maximum.reduceat(v, starts)
    row_of = np.repeat(np.arange(counts.size), counts)
    e = np.exp(v - seg_max[row_of])
    seg_sum = np.add.reduceat(e, starts)
    s = e / seg_sum[row_of]

    def vjp(g):
        if not vals.requires_grad:
            return (None,)
        gs = g[:, 0] * s
        seg_dot = np.add.reduceat(gs, starts)
        return ((gs - s * seg_dot[row_of]).reshape(-1, 1),)

    return _record(s.reshape(-1, 1), (vals,), vjp)


def segment_mean_rows(a, indptr):
    """Mean-pool contiguous row blocks: rows [indptr[i], indptr[i+1]) average
    into output row i. Used to pool node embeddings per graph."""
    ad = a.data
    indptr, counts = _check_indptr(indptr, ad.shape[0])
    starts = indptr[:-1]
    out = np.add.reduceat(ad, starts, axis=0) / counts[:, None]

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (np.repeat(g / counts[:, None], counts, axis=0),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# batch normalization


class BatchNorm:
    """Per-column batch normalization state (scale, shift, running stats).

    Normalization inside a training step uses the biased batch variance; the
    running variance tracks the unbiased estimate, following the common
    convention. eps = 1e-5, momentum = 0.1.
    """

    def __init__(self, width):
        self.width = width
        self.gamma = Parameter(np.ones((1, width)))
        self.beta = Parameter(np.zeros((1, width)))
        self.running_mean = np.zeros((1, width))
        self.running_var = np.ones((1, width))
        self.momentum = 0.1
        self.eps = 1e-5

    def params(self):
        return [self.gamma, self.beta]


def batch_norm(x, bn, training):
    """Apply batch normalization; differentiable through the batch statistics
    when training. Training on a single-row batch is an error (undefined
    variance); evaluation works for any batch size."""
    xd = x.data
    if xd.shape[1] != bn.width:
        raise ShapeError(f"batch_norm width mismatch: {xd.shape[1]} vs {bn.width}")
    gamma, beta = bn.gamma, bn.beta
    if training:
        n = xd.shape[0]
        if n < 2:
            raise DomainError("batch_norm training requires at least 2 rows")
        mu = xd.mean(axis=0, keepdims=True)
        diff = xd - mu
        var = (diff * diff).mean(axis=0, keepdims=True)
        inv = 1.0 / np.sqrt(var + bn.eps)
        xhat = diff * inv
        mom = bn.momentum
        bn.running_mean = (1.0 - mom) * bn.running_mean + mom * mu
        bn.running_var = (1.0 - mom) * bn.running_var + mom * var * n / (n - 1)

        def vjp(g):
            dbeta = g.sum(axis=0, keepdims=True)
            dgamma = (g * xhat).sum(axis=0, keepdims=True)
            gx = None
            if x.requires_grad:
                gx = (gamma.data * inv / n) * (n * g - dbeta - xhat * dgamma)
            return (
                gx,
                dgamma if gamma.requires_grad else None,
                dbeta if beta.requires_grad else None,
            )

    else:
        inv = 1.0 / np.sqrt(bn.running_var + bn.eps)
        xhat = (xd - bn.running_mean) * inv

        def vjp(g):
            return (
                g * gamma.data * inv if x.requires_grad else None,
                (g * xhat).sum(axis=0, keepdims=True) if gamma.requires_grad else None,
                g.sum(axis=0, keepdims=True) if beta.requires_grad else None,
            )

    out = xhat * gamma.data + beta.data
    return _record(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# optimization and initialization


def zero_grads(params):
    for p in params:
        p.zero_grad()


def clip_grad_norm(params, max_norm):
    """Scale all grads so their global L2 norm is at most max_norm.

    Deep relu stacks on constant features die permanently when one large
    step pushes a whole layer negative; clipping prevents that cliff.
    Returns the pre-clip norm.
    """
    total = 0.0
    for p in params:
        total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update on each parameter's accumulated grad."""
    for p in params:
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * p.grad
        p.v *= beta2
        p.v += (1.0 - beta2) * p.grad * p.grad
        mhat = p.m / (1.0 - beta1 ** p.step)
        vhat = p.v / (1.0 - beta2 ** p.step)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)


def glorot_uniform(rng, fan_in, fan_out):
    """Glorot/Xavier uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def orthogonal(rng, fan_in, fan_out, gain=np.sqrt(2.0)):
    """Orthogonal init (QR of a Gaussian), gain sqrt(2) for relu stacks.

    Keeps signal variance near-constant through deep graph-conv stacks,
    which train poorly from Glorot when the input features are constant.
    """
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ShapeError("one_hot expects a 1-D label vector")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DomainError("label outside [0, num_classes)")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return Tensor(out)
