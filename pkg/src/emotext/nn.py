"""Numeric core: bidirectional GRU encoder, global max/average pooling,
dense + dropout + sigmoid head, exact hand-derived backward pass, and a
finite-difference gradient checker.

Conventions
-----------
Weight matrices are stored input-major, so a D x H matrix W applies to a
row vector x as ``x @ W``. Gate equations per timestep, with h_0 = 0:

    z_t = sigmoid(x_t @ W_z + h_{t-1} @ U_z + b_z)
    r_t = sigmoid(x_t @ W_r + h_{t-1} @ U_r + b_r)
    c_t = tanh(x_t @ W_h + (r_t * h_{t-1}) @ U_h + b_h)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t

The backward direction runs the same cell over the reversed sequence; the
per-position encoder state is [h_fwd ; h_bwd]. Pooling concatenates the
columnwise max and mean over timesteps (4H features). The head is a dense
ReLU layer, inverted dropout during training, and a sigmoid output unit.

Embedding rows are a frozen input: the backward pass produces no gradient
for them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import PAD_INDEX
from .embed import EmbeddingMatrix

DENSE_SIZE = 70
BCE_EPS = 1e-7

# Direction-tensor field order; also the serialization order within one
# direction.
_DIR_FIELDS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")
_HEAD_FIELDS = ("W_dense", "b_dense", "w_out", "b_out")


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GruDirectionParams:
    """Gate parameters for one GRU direction over inputs of width D and
    hidden size H."""

    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        d, h = self.W_z.shape
        for name in ("W_z", "W_r", "W_h"):
            if getattr(self, name).shape != (d, h):
                raise ValueError(f"{name} shape mismatch")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (h, h):
                raise ValueError(f"{name} shape mismatch")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (h,):
                raise ValueError(f"{name} shape mismatch")

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[1]

    def tensors(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.{name}": getattr(self, name) for name in _DIR_FIELDS}


@dataclass
class ModelParameters:
    """All trainable tensors of one binary classifier."""

    gru_fwd: GruDirectionParams
    gru_bwd: GruDirectionParams
    W_dense: np.ndarray  # (4H, dense_size)
    b_dense: np.ndarray  # (dense_size,)
    w_out: np.ndarray  # (dense_size,)
    b_out: np.ndarray  # scalar, shape ()

    def __post_init__(self):
        h = self.gru_fwd.hidden_size
        if self.gru_bwd.hidden_size != h or self.gru_bwd.input_dim != self.gru_fwd.input_dim:
            raise ValueError("direction parameter shapes disagree")
        if self.W_dense.shape[0] != 4 * h:
            raise ValueError("dense input width must be 4 * hidden_size")
        k = self.W_dense.shape[1]
        if self.b_dense.shape != (k,) or self.w_out.shape != (k,):
            raise ValueError("head shapes disagree")
        if np.shape(self.b_out) != ():
            raise ValueError("b_out must be a scalar")

    @property
    def input_dim(self) -> int:
        return self.gru_fwd.input_dim

    @property
    def hidden_size(self) -> int:
        return self.gru_fwd.hidden_size

    @property
    def dense_size(self) -> int:
        return self.W_dense.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.W_dense.dtype

    def tensors(self) -> dict[str, np.ndarray]:
        """All trainable tensors in a fixed, serialization-stable order."""
        out = self.gru_fwd.tensors("gru_fwd")
        out.update(self.gru_bwd.tensors("gru_bwd"))
        for name in _HEAD_FIELDS:
            out[name] = getattr(self, name)
        return out

    def astype(self, dtype) -> "ModelParameters":
        return from_tensors({k: v.astype(dtype) for k, v in self.tensors().items()})

    def copy(self) -> "ModelParameters":
        return from_tensors({k: v.copy() for k, v in self.tensors().items()})


def from_tensors(tensors: dict[str, np.ndarray]) -> ModelParameters:
    """Rebuild ModelParameters from a name->tensor map (tensors() inverse)."""

    def direction(prefix):
        return GruDirectionParams(**{n: np.asarray(tensors[f"{prefix}.{n}"]) for n in _DIR_FIELDS})

    return ModelParameters(
        gru_fwd=direction("gru_fwd"),
        gru_bwd=direction("gru_bwd"),
        W_dense=np.asarray(tensors["W_dense"]),
        b_dense=np.asarray(tensors["b_dense"]),
        w_out=np.asarray(tensors["w_out"]),
        b_out=np.asarray(tensors["b_out"]),
    )


def _glorot(rng, fan_in, fan_out, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape).astype(dtype)


def init_parameters(
    input_dim: int,
    hidden_size: int,
    seed=0,
    dense_size: int = DENSE_SIZE,
    dtype=np.float32,
) -> ModelParameters:
    """Uniform Glorot-style init for all weight matrices, zero biases."""
    rng = np.random.default_rng(seed)

    def direction():
        kw = {}
        for gate in "zrh":
            kw[f"W_{gate}"] = _glorot(rng, input_dim, hidden_size, (input_dim, hidden_size), dtype)
            kw[f"U_{gate}"] = _glorot(rng, hidden_size, hidden_size, (hidden_size, hidden_size), dtype)
            kw[f"b_{gate}"] = np.zeros(hidden_size, dtype)
        return GruDirectionParams(**kw)

    return ModelParameters(
        gru_fwd=direction(),
        gru_bwd=direction(),
        W_dense=_glorot(rng, 4 * hidden_size, dense_size, (4 * hidden_size, dense_size), dtype),
        b_dense=np.zeros(dense_size, dtype),
        w_out=_glorot(rng, dense_size, 1, (dense_size,), dtype),
        b_out=np.zeros((), dtype),
    )


def gru_cell(x_t: np.ndarray, h_prev: np.ndarray, params: GruDirectionParams) -> np.ndarray:
    """One GRU step; returns the next hidden state."""
    h, *_ = _gru_step(x_t, h_prev, params)
    return h


def _gru_step(x_t, h_prev, p: GruDirectionParams):
    if x_t.shape != (p.input_dim,) or h_prev.shape != (p.hidden_size,):
        raise ValueError(
            f"shape mismatch: x {x_t.shape}, h {h_prev.shape}, "
            f"expected ({p.input_dim},), ({p.hidden_size},)"
        )
    z = sigmoid(x_t @ p.W_z + h_prev @ p.U_z + p.b_z)
    r = sigmoid(x_t @ p.W_r + h_prev @ p.U_r + p.b_r)
    c = np.tanh(x_t @ p.W_h + (r * h_prev) @ p.U_h + p.b_h)
    h = (1.0 - z) * h_prev + z * c
    return h, z, r, c


@dataclass
class DirectionTrace:
    """Per-step activations of one direction, in processing order."""

    z: np.ndarray  # (T, H)
    r: np.ndarray
    c: np.ndarray
    h: np.ndarray


def _run_direction(xs: np.ndarray, params: GruDirectionParams) -> DirectionTrace:
    t_steps = xs.shape[0]
    hsz = params.hidden_size
    dtype = params.W_z.dtype
    z = np.empty((t_steps, hsz), dtype)
    r = np.empty((t_steps, hsz), dtype)
    c = np.empty((t_steps, hsz), dtype)
    h = np.empty((t_steps, hsz), dtype)
    h_prev = np.zeros(hsz, dtype)
    for t in range(t_steps):
        h_prev, z[t], r[t], c[t] = _gru_step(xs[t], h_prev, params)
        h[t] = h_prev
    return DirectionTrace(z=z, r=r, c=c, h=h)


@dataclass
class HeadTrace:
    pre: np.ndarray  # dense pre-activation
    act: np.ndarray  # relu output
    mask: np.ndarray | None  # inverted-dropout mask, None at inference
    dropped: np.ndarray
    logit: float
    p: float


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from one forward evaluation."""

    xs: np.ndarray  # (T, D) input vectors in original order
    fwd: DirectionTrace
    bwd: DirectionTrace
    states: np.ndarray  # (T, 2H)
    pooled: np.ndarray  # (4H,)
    max_rows: np.ndarray  # (2H,) argmax timestep per state column
    head: HeadTrace
    mask_aware: bool

    @property
    def p(self) -> float:
        return self.head.p


def bigru_forward(
    indices: np.ndarray,
    emb: EmbeddingMatrix,
    params: ModelParameters,
    mask_aware: bool = True,
):
    """Run both directions over one encoded sequence.

    With ``mask_aware`` (default), only non-pad positions are processed, so
    the state matrix has one row per real token. Returns (states, partial
    trace pieces) — use :func:`model_forward` for the full pass.
    """
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= emb.vocab_size):
        raise ValueError("token index out of range for embedding matrix")
    if mask_aware:
        xs = emb.matrix[indices[indices != PAD_INDEX]]
        if xs.shape[0] == 0:
            raise ValueError("empty sequence")
    else:
        xs = emb.matrix[indices]
    fwd = _run_direction(xs, params.gru_fwd)
    bwd = _run_direction(xs[::-1], params.gru_bwd)
    states = np.hstack([fwd.h, bwd.h[::-1]])
    return states, (xs, fwd, bwd)


def pool_concat(states: np.ndarray) -> np.ndarray:
    """Concatenate the columnwise max and mean over timesteps."""
    if states.shape[0] == 0:
        raise ValueError("cannot pool an empty state matrix")
    return np.concatenate([states.max(axis=0), states.mean(axis=0)])


def head_forward(
    pooled: np.ndarray,
    params: ModelParameters,
    dropout_rate: float = 0.5,
    training: bool = False,
    rng=None,
) -> tuple[float, HeadTrace]:
    """Dense ReLU layer, inverted dropout (training only), sigmoid output."""
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout_rate must be in [0, 1)")
    pre = pooled @ params.W_dense + params.b_dense
    act = np.maximum(pre, 0.0)
    if training and dropout_rate > 0.0:
        gen = np.random.default_rng(rng)
        keep = gen.random(act.shape) >= dropout_rate
        mask = keep.astype(act.dtype) / (1.0 - dropout_rate)
        dropped = act * mask
    else:
        mask = None
        dropped = act
    logit = float(dropped @ params.w_out + params.b_out)
    # Sigmoid in double precision, nudged off the boundary so p stays in (0, 1).
    p = float(sigmoid(np.array([logit], dtype=np.float64))[0])
    p = min(max(p, 1e-300), 1.0 - 1e-16)
    return p, HeadTrace(pre=pre, act=act, mask=mask, dropped=dropped, logit=logit, p=p)


def model_forward(
    indices: np.ndarray,
    emb: EmbeddingMatrix,
    params: ModelParameters,
    dropout_rate: float = 0.5,
    training: bool = False,
    rng=None,
    mask_aware: bool = True,
) -> tuple[float, ForwardTrace]:
    """Full forward pass over one encoded sequence."""
    states, (xs, fwd, bwd) = bigru_forward(indices, emb, params, mask_aware=mask_aware)
    pooled = pool_concat(states)
    max_rows = states.argmax(axis=0)  # ties resolve to the lowest timestep
    p, head = head_forward(pooled, params, dropout_rate, training, rng)
    trace = ForwardTrace(
        xs=xs,
        fwd=fwd,
        bwd=bwd,
        states=states,
        pooled=pooled,
        max_rows=max_rows,
        head=head,
        mask_aware=mask_aware,
    )
    return p, trace


def predict_proba(
    indices: np.ndarray,
    emb: EmbeddingMatrix,
    params: ModelParameters,
    mask_aware: bool = True,
) -> float:
    """Inference probability (dropout disabled, no randomness).

    An all-pad row is scored on the unmasked path so prediction is total.
    """
    indices = np.asarray(indices)
    if mask_aware and not (indices != PAD_INDEX).any():
        mask_aware = False
    p, _ = model_forward(indices, emb, params, dropout_rate=0.0, training=False, mask_aware=mask_aware)
    return p


def bce_loss(p: float, y: int) -> float:
    """Binary cross-entropy with the probability clamped to [eps, 1-eps]."""
    p = min(max(float(p), BCE_EPS), 1.0 - BCE_EPS)
    return float(-(y * np.log(p) + (1 - y) * np.log1p(-p)))


def _direction_backward(xs, trace: DirectionTrace, dh_steps, p: GruDirectionParams):
    """Backpropagate through one direction. ``dh_steps[t]`` is the loss
    gradient w.r.t. the hidden state produced at step t (processing order).
    Returns gate-parameter gradients; input gradients are not formed since
    the embedding layer is frozen."""
    t_steps, hsz = trace.h.shape
    dtype = xs.dtype
    grads = {name: np.zeros_like(getattr(p, name)) for name in _DIR_FIELDS}
    carry = np.zeros(hsz, dtype)
    for t in range(t_steps - 1, -1, -1):
        dh = dh_steps[t] + carry
        h_prev = trace.h[t - 1] if t > 0 else np.zeros(hsz, dtype)
        z, r, c = trace.z[t], trace.r[t], trace.c[t]
        x = xs[t]

        dc = dh * z
        dz = dh * (c - h_prev)
        dh_prev = dh * (1.0 - z)

        # candidate branch
        dah = dc * (1.0 - c * c)
        grads["W_h"] += np.outer(x, dah)
        grads["U_h"] += np.outer(r * h_prev, dah)
        grads["b_h"] += dah
        drh = dah @ p.U_h.T  # gradient w.r.t. r * h_prev
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r

        # update gate
        daz = dz * z * (1.0 - z)
        grads["W_z"] += np.outer(x, daz)
        grads["U_z"] += np.outer(h_prev, daz)
        grads["b_z"] += daz
        dh_prev = dh_prev + daz @ p.U_z.T

        # reset gate
        dar = dr * r * (1.0 - r)
        grads["W_r"] += np.outer(x, dar)
        grads["U_r"] += np.outer(h_prev, dar)
        grads["b_r"] += dar
        dh_prev = dh_prev + dar @ p.U_r.T

        carry = dh_prev
    return grads


def backward(trace: ForwardTrace, y: int, params: ModelParameters) -> dict[str, np.ndarray]:
    """Loss gradients for every trainable tensor, keyed like
    ``params.tensors()``. Max-pool routes gradient to the argmax timestep
    (lowest index on ties); average-pool distributes 1/T; the dropout mask
    from the forward pass is reused; embeddings receive no gradient."""
    hsz = params.hidden_size
    t_steps = trace.states.shape[0]
    if trace.states.shape[1] != 2 * hsz or trace.xs.shape[1] != params.input_dim:
        raise ValueError("trace does not match parameter shapes")
    if trace.head.pre.shape != (params.dense_size,):
        raise ValueError("trace head does not match parameter shapes")

    head = trace.head
    dlogit = head.p - float(y)

    dw_out = head.dropped * dlogit
    db_out = np.asarray(dlogit, dtype=params.dtype)
    ddropped = params.w_out * dlogit
    dact = ddropped * head.mask if head.mask is not None else ddropped
    dpre = dact * (head.pre > 0)
    dW_dense = np.outer(trace.pooled, dpre)
    db_dense = dpre
    dpooled = params.W_dense @ dpre

    dmax, dmean = dpooled[: 2 * hsz], dpooled[2 * hsz :]
    dstates = np.tile(dmean / t_steps, (t_steps, 1))
    dstates[trace.max_rows, np.arange(2 * hsz)] += dmax

    # Column split: forward states are in processing order already; backward
    # states sit in original position order, so reverse for step order.
    d_fwd_steps = dstates[:, :hsz]
    d_bwd_steps = dstates[::-1, hsz:]

    grads_fwd = _direction_backward(trace.xs, trace.fwd, d_fwd_steps, params.gru_fwd)
    grads_bwd = _direction_backward(trace.xs[::-1], trace.bwd, d_bwd_steps, params.gru_bwd)

    grads = {f"gru_fwd.{k}": v for k, v in grads_fwd.items()}
    grads.update({f"gru_bwd.{k}": v for k, v in grads_bwd.items()})
    grads["W_dense"] = dW_dense.astype(params.dtype, copy=False)
    grads["b_dense"] = db_dense.astype(params.dtype, copy=False)
    grads["w_out"] = dw_out.astype(params.dtype, copy=False)
    grads["b_out"] = db_out
    return grads


def zero_gradients(params: ModelParameters) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in params.tensors().items()}


def gradient_check(
    params: ModelParameters,
    emb: EmbeddingMatrix,
    indices: np.ndarray,
    y: int,
    h: float = 1e-5,
    max_per_tensor: int | None = None,
    rng=None,
    dropout_rate: float = 0.0,
    training: bool = False,
    dropout_seed: int = 0,
    corrupt_tensor: str | None = None,
    mask_aware: bool = True,
) -> dict[str, float]:
    """Compare analytic gradients against central finite differences.

    Runs in double precision regardless of the incoming dtype. Returns the
    max relative error |a - n| / max(|a|, |n|, 1e-12) per tensor, checking
    every scalar unless ``max_per_tensor`` caps the sample size.
    ``corrupt_tensor`` scales that tensor's analytic gradient by 1.1 (for
    exercising the checker itself).
    """
    work = params.astype(np.float64)
    emb64 = EmbeddingMatrix(
        matrix=emb.matrix.astype(np.float64), dim=emb.dim, coverage=emb.coverage
    )
    gen = np.random.default_rng(rng)

    def loss_at() -> float:
        p, _ = model_forward(
            indices, emb64, work, dropout_rate=dropout_rate, training=training,
            rng=dropout_seed, mask_aware=mask_aware,
        )
        return bce_loss(p, y)

    p, trace = model_forward(
        indices, emb64, work, dropout_rate=dropout_rate, training=training,
        rng=dropout_seed, mask_aware=mask_aware,
    )
    analytic = backward(trace, y, work)
    if corrupt_tensor is not None:
        if corrupt_tensor not in analytic:
            raise ValueError(f"unknown tensor {corrupt_tensor!r}")
        analytic[corrupt_tensor] = analytic[corrupt_tensor] * 1.1

    report: dict[str, float] = {}
    for name, tensor in work.tensors().items():
        flat = tensor.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        n_scalars = flat.size
        if max_per_tensor is not None and n_scalars > max_per_tensor:
            positions = gen.choice(n_scalars, size=max_per_tensor, replace=False)
        else:
            positions = range(n_scalars)
        worst = 0.0
        for i in positions:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_at()
            flat[i] = orig - h
            down = loss_at()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(a_flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
        report[name] = worst
    return report
