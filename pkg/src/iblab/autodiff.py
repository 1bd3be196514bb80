"""Minimal reverse-mode autodiff on float64 numpy arrays.

A Tensor records the op that produced it and a closure that routes the
output gradient to its parents. backward() walks the recorded graph once
in reverse topological order. Everything is float64; there is no device
or dtype negotiation, and graphs are built fresh every forward pass.
"""

import json
import zlib

import numpy as np

from .errors import ConfigError, DataError, StorageError, UsageError


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g, shape):
    """Sum g down to `shape`, undoing numpy broadcasting in the forward op."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """Array node in a recorded forward pass."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={'leaf' if self._backward is None else 'node'})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ---- arithmetic ----

    def __add__(self, other):
        other = _wrap(other)
        out = Tensor(self.data + other.data, (self, other))

        def bw(g):
            self._accum(_unbroadcast(g, self.data.shape))
            other._accum(_unbroadcast(g, other.data.shape))

        out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __mul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data * other.data, (self, other))

        def bw(g):
            self._accum(_unbroadcast(g * other.data, self.data.shape))
            other._accum(_unbroadcast(g * self.data, other.data.shape))

        out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        # scalar constant divisor only; keeps the op set small
        c = float(other)
        return self * (1.0 / c)

    def __matmul__(self, other):
        other = _wrap(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ConfigError(
                f"matmul expects 2-D operands, got {self.data.shape} @ {other.data.shape}"
            )
        if self.data.shape[1] != other.data.shape[0]:
            raise ConfigError(
                f"matmul inner dimensions differ: {self.data.shape} @ {other.data.shape}"
            )
        out = Tensor(self.data @ other.data, (self, other))

        def bw(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)

        out._backward = bw
        return out

    # ---- elementwise nonlinearities ----

    def relu(self):
        mask = self.data > 0.0
        out = Tensor(self.data * mask, (self,))
        out._backward = lambda g: self._accum(g * mask)
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), (self,))
        out._backward = lambda g: self._accum(g * out.data)
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))
        out._backward = lambda g: self._accum(g / self.data)
        return out

    def square(self):
        out = Tensor(self.data * self.data, (self,))
        out._backward = lambda g: self._accum(2.0 * g * self.data)
        return out

    # ---- shape ops ----

    def transpose(self):
        if self.data.ndim != 2:
            raise ConfigError(f"transpose expects a 2-D tensor, got shape {self.data.shape}")
        out = Tensor(self.data.T, (self,))
        out._backward = lambda g: self._accum(g.T)
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))
        out._backward = lambda g: self._accum(g.reshape(self.data.shape))
        return out

    # ---- reductions ----

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def bw(g):
            if axis is None:
                self._accum(np.broadcast_to(g, self.data.shape).copy())
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, self.data.shape).copy())

        out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # ---- driver ----

    def backward(self):
        if self.data.size != 1:
            raise UsageError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        if self._backward is None and not self._parents:
            raise UsageError("backward() on a leaf with no recorded forward pass")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root):
    """Iterative postorder DFS; returns nodes output-first."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return list(reversed(order))


def concat(tensors, axis=1):
    """Concatenate tensors along axis; gradient splits back by the same slices."""
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(piece)

    out._backward = bw
    return out


def logsumexp(t):
    """Stable scalar log-sum-exp over all elements; backward is softmax(t)."""
    t = _wrap(t)
    hi = np.max(t.data)
    w = np.exp(t.data - hi)
    total = w.sum()
    out = Tensor(np.array(hi + np.log(total)), (t,))
    out._backward = lambda g: t._accum(g * (w / total))
    return out


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels under softmax(logits), fused for stability.

    Stays finite for logit magnitudes up to ~1e300 thanks to max-subtraction;
    backward is (softmax - onehot)/n in one expression.
    """
    logits = _wrap(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ConfigError(f"softmax_cross_entropy expects 2-D logits, got {logits.data.shape}")
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise DataError(f"labels shape {labels.shape} does not match batch size {n}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"labels out of range [0, {k}): min={labels.min()} max={labels.max()}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    nll = -log_probs[np.arange(n), labels].mean()
    out = Tensor(np.array(nll), (logits,))

    def bw(g):
        soft = np.exp(log_probs)
        soft[np.arange(n), labels] -= 1.0
        logits._accum(g * soft / n)

    out._backward = bw
    return out


def softmax_probs(logits_data):
    """Plain-array stable softmax, for evaluation paths that need probabilities."""
    z = np.asarray(logits_data, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def linear(x, w, b):
    """x @ w + b with shape validation up front."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ConfigError(f"linear expects 2-D x and w, got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[0]:
        raise ConfigError(
            f"linear shape mismatch: x {x.data.shape} vs w {w.data.shape}"
        )
    if b.data.shape != (w.data.shape[1],):
        raise ConfigError(f"bias shape {b.data.shape} does not match output width {w.data.shape[1]}")
    return (x @ w) + b


def dropout_mask(shape, rate, rng):
    """Inverted-dropout keep mask: entries are 0 or 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


# ---------------------------------------------------------------------------
# parameter store + Adam


class ParamStore:
    """Named parameter tensors plus Adam moment state.

    Contract: zero_grad() -> forward -> backward() -> adam_step(). Calling
    adam_step with any gradient still unset raises UsageError.
    """

    def __init__(self, params):
        self.params = dict(params)
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.t = 0

    def __getitem__(self, name):
        return self.params[name]

    def names(self):
        return list(self.params.keys())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = np.zeros_like(t.data)

    def adam_step(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        missing = [k for k, t in self.params.items() if t.grad is None]
        if missing:
            raise UsageError(f"adam_step before zero_grad/backward; no gradient for {missing}")
        self.t += 1
        b1t = 1.0 - beta1 ** self.t
        b2t = 1.0 - beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            p.data -= lr * (m / b1t) / (np.sqrt(v / b2t) + eps)

    def copy(self):
        dup = ParamStore({k: Tensor(t.data.copy()) for k, t in self.params.items()})
        dup.m = {k: a.copy() for k, a in self.m.items()}
        dup.v = {k: a.copy() for k, a in self.v.items()}
        dup.t = self.t
        return dup

    def load_arrays(self, arrays):
        """Overwrite parameter values in place from {name: ndarray}."""
        for k, p in self.params.items():
            a = arrays[k]
            if a.shape != p.data.shape:
                raise ConfigError(f"array {k} has shape {a.shape}, expected {p.data.shape}")
            p.data = np.asarray(a, dtype=np.float64).copy()
            p.grad = None


def init_mlp_params(widths, seed, final_glorot=True):
    """He-uniform hidden layers, Glorot-uniform final layer, zero biases.

    widths = [d_in, h1, ..., d_out]; keys are w0/b0 .. w{L-1}/b{L-1}.
    """
    if len(widths) < 2 or any(int(w) <= 0 for w in widths):
        raise ConfigError(f"layer widths must be >= 1 with at least one layer, got {widths}")
    rng = np.random.default_rng(seed)
    params = {}
    last = len(widths) - 2
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        if final_glorot and i == last:
            a = np.sqrt(6.0 / (fan_in + fan_out))
        else:
            a = np.sqrt(6.0 / fan_in)
        params[f"w{i}"] = Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)))
        params[f"b{i}"] = Tensor(np.zeros(fan_out))
    return ParamStore(params)


# ---------------------------------------------------------------------------
# checkpoint container: magic, versioned JSON header, CRC-checked float64 blob

CHECKPOINT_MAGIC = b"IBLABCK1"


def save_checkpoint(path, store, meta=None):
    """Write params + Adam state to a single self-describing binary file.

    Layout: 8-byte magic, 4-byte little-endian header length, JSON header,
    raw little-endian float64 payload. Header records name/shape/offset per
    array plus a CRC32 of the payload, so loads are all-or-nothing.
    """
    names = sorted(store.params.keys())
    entries = []
    chunks = []
    offset = 0
    for prefix, source in (
        ("param", {k: store.params[k].data for k in names}),
        ("adam_m", store.m),
        ("adam_v", store.v),
    ):
        for k in names:
            a = np.ascontiguousarray(source[k], dtype="<f8")
            raw = a.tobytes()
            entries.append(
                {"name": f"{prefix}/{k}", "shape": list(a.shape), "offset": offset, "nbytes": len(raw)}
            )
            chunks.append(raw)
            offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format": 1,
        "dtype": "<f8",
        "adam_step": store.t,
        "arrays": entries,
        "meta": meta or {},
        "payload_nbytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(hbytes).to_bytes(4, "little"))
        fh.write(hbytes)
        fh.write(payload)


def load_checkpoint(path):
    """Read a checkpoint container; returns (ParamStore, meta dict).

    Any structural damage (magic, header, sizes, CRC) raises StorageError
    before a single array is handed back.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise StorageError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < 12 or blob[:8] != CHECKPOINT_MAGIC:
        raise StorageError(f"{path} is not a checkpoint container (bad magic)")
    hlen = int.from_bytes(blob[8:12], "little")
    if 12 + hlen > len(blob):
        raise StorageError(f"{path} is truncated inside the header")
    try:
        header = json.loads(blob[12:12 + hlen])
    except json.JSONDecodeError as e:
        raise StorageError(f"{path} has a corrupt header: {e}") from e
    if header.get("format") != 1:
        raise StorageError(f"{path} has unsupported container format {header.get('format')!r}")
    payload = blob[12 + hlen:]
    if len(payload) != header["payload_nbytes"]:
        raise StorageError(
            f"{path} payload is {len(payload)} bytes, header says {header['payload_nbytes']}"
        )
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise StorageError(f"{path} payload CRC mismatch; refusing partial load")

    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)

    params = {
        name.split("/", 1)[1]: Tensor(a) for name, a in arrays.items() if name.startswith("param/")
    }
    store = ParamStore(params)
    for name, a in arrays.items():
        kind, key = name.split("/", 1)
        if kind == "adam_m":
            store.m[key] = a.copy()
        elif kind == "adam_v":
            store.v[key] = a.copy()
    store.t = int(header.get("adam_step", 0))
    return store, header.get("meta", {})
