"""Dense-network numerical core.

Forward functions return their output together with a small cache; the
matching ``*_backward`` function turns an upstream gradient into gradients
for the inputs and parameters. Only the handful of layer types used by the
slate models are covered, so there is no general tape.

Parameters live in plain ``dict[str, np.ndarray]`` mappings. Weight matrices
are stored ``(rows, cols)`` = ``(out, in)`` so that a layer computes
``W @ x + b``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOGVAR_MIN = -20.0
LOGVAR_MAX = 20.0

Params = dict[str, np.ndarray]


class ContractError(ValueError):
    """Raised when arguments violate a shape or domain precondition."""


class TrainingError(RuntimeError):
    """Raised when an optimisation run produces non-finite values."""


# ---------------------------------------------------------------------------
# elementwise helpers


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, dout):
    return dout * (x > 0)


def logsumexp(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))).squeeze(axis)


# ---------------------------------------------------------------------------
# affine layers


def affine_apply(W, b, x):
    """Return ``W @ x + b``.

    ``x`` may be a single vector of length ``cols(W)`` or a batch of row
    vectors with shape ``(batch, cols(W))``.
    """
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    if W.ndim != 2:
        raise ContractError(f"weight must be 2-D, got shape {W.shape}")
    if x.shape[-1] != W.shape[1]:
        raise ContractError(f"input length {x.shape[-1]} != cols(W) {W.shape[1]}")
    if b.shape != (W.shape[0],):
        raise ContractError(f"bias length {b.shape} != rows(W) {W.shape[0]}")
    return x @ W.T + b


def affine_backward(W, x, dout):
    """Gradients of ``x @ W.T + b`` for batched ``x``: ``(dW, db, dx)``."""
    dW = dout.T @ x
    db = dout.sum(axis=0)
    dx = dout @ W
    return dW, db, dx


def init_affine(rng: np.random.Generator, n_out: int, n_in: int):
    # He-uniform for the ReLU towers
    bound = math.sqrt(6.0 / n_in)
    W = rng.uniform(-bound, bound, size=(n_out, n_in))
    return W, np.zeros(n_out)


def init_mlp(params: Params, prefix: str, rng, n_in: int, n_hidden: int, n_out: int,
             out_scale: float = 1.0):
    """Register a two-layer ReLU tower ``n_in -> n_hidden -> n_out`` in ``params``."""
    params[f"{prefix}.W1"], params[f"{prefix}.b1"] = init_affine(rng, n_hidden, n_in)
    W2, b2 = init_affine(rng, n_out, n_hidden)
    params[f"{prefix}.W2"], params[f"{prefix}.b2"] = W2 * out_scale, b2


def mlp_forward(params: Params, prefix: str, x):
    pre = affine_apply(params[f"{prefix}.W1"], params[f"{prefix}.b1"], x)
    h = relu(pre)
    out = affine_apply(params[f"{prefix}.W2"], params[f"{prefix}.b2"], h)
    return out, (x, pre, h)


def mlp_backward(params: Params, prefix: str, cache, dout, grads: Params):
    """Accumulate tower gradients into ``grads`` and return the input gradient."""
    x, pre, h = cache
    dW2, db2, dh = affine_backward(params[f"{prefix}.W2"], h, dout)
    dpre = relu_backward(pre, dh)
    dW1, db1, dx = affine_backward(params[f"{prefix}.W1"], x, dpre)
    for name, g in (("W1", dW1), ("b1", db1), ("W2", dW2), ("b2", db2)):
        key = f"{prefix}.{name}"
        if key in grads:
            grads[key] += g
        else:
            grads[key] = g
    return dx


def gather_backward(table_shape, index, dout):
    """Scatter-add gradient for ``table[index]`` (embedding lookup)."""
    grad = np.zeros(table_shape)
    np.add.at(grad, np.asarray(index).reshape(-1), dout.reshape(-1, table_shape[1]))
    return grad


# ---------------------------------------------------------------------------
# variational primitives


@dataclass
class GaussianParams:
    """Diagonal Gaussian given by ``mean`` and ``logvar`` (batched on leading axes)."""

    mean: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.logvar = np.clip(np.asarray(self.logvar, dtype=float), LOGVAR_MIN, LOGVAR_MAX)
        if self.mean.shape != self.logvar.shape:
            raise ContractError(
                f"mean shape {self.mean.shape} != logvar shape {self.logvar.shape}")

    @classmethod
    def from_output(cls, out: np.ndarray) -> "GaussianParams":
        """Split a network output ``[..., 2m]`` into mean and (clamped) logvar."""
        m = out.shape[-1] // 2
        return cls(out[..., :m], out[..., m:])


def clamp_mask(raw_logvar):
    """1 where the logvar clamp is inactive (gradient passes), else 0."""
    return ((raw_logvar >= LOGVAR_MIN) & (raw_logvar <= LOGVAR_MAX)).astype(float)


def gaussian_kl_terms(q: GaussianParams, p: GaussianParams):
    """Per-row KL(q || p) summed over the last axis, plus its gradients.

    Returns ``kl, (dmu_q, dlv_q, dmu_p, dlv_p)``.
    """
    if q.mean.shape != p.mean.shape:
        raise ContractError(f"KL shape mismatch {q.mean.shape} vs {p.mean.shape}")
    var_q = np.exp(q.logvar)
    inv_var_p = np.exp(-p.logvar)
    diff = q.mean - p.mean
    kl = 0.5 * np.sum(p.logvar - q.logvar + (var_q + diff**2) * inv_var_p - 1.0, axis=-1)
    dmu_q = diff * inv_var_p
    dlv_q = 0.5 * (var_q * inv_var_p - 1.0)
    dlv_p = 0.5 * (1.0 - (var_q + diff**2) * inv_var_p)
    return kl, (dmu_q, dlv_q, -dmu_q, dlv_p)


def gaussian_kl(q: GaussianParams, p: GaussianParams) -> float:
    """Closed-form KL divergence between two diagonal Gaussians (summed over all entries)."""
    kl, _ = gaussian_kl_terms(q, p)
    return float(np.sum(kl))


def reparameterize(g: GaussianParams, noise):
    """Return ``mean + exp(logvar / 2) * noise``."""
    noise = np.asarray(noise, dtype=float)
    if noise.shape != g.mean.shape:
        raise ContractError(f"noise shape {noise.shape} != mean shape {g.mean.shape}")
    return g.mean + np.exp(0.5 * g.logvar) * noise


def reparameterize_backward(g: GaussianParams, noise, dz):
    """Gradients w.r.t. (mean, logvar); the noise receives none."""
    return dz, dz * noise * 0.5 * np.exp(0.5 * g.logvar)


def sampled_softmax_terms(target_logits, negative_logits):
    """Batched sampled-softmax cross entropy.

    ``target_logits`` has shape ``S`` and ``negative_logits`` shape ``S + (J,)``.
    Returns per-entry loss with shape ``S`` and gradients w.r.t. both inputs.
    """
    t = np.asarray(target_logits, dtype=float)
    n = np.asarray(negative_logits, dtype=float)
    allv = np.concatenate([t[..., None], n], axis=-1)
    m = allv.max(axis=-1, keepdims=True)
    e = np.exp(allv - m)
    z = e.sum(axis=-1, keepdims=True)
    loss = (np.log(z) + m).squeeze(-1) - t
    p = e / z
    return loss, p[..., 0] - 1.0, p[..., 1:]


def sampled_softmax_ce(target_logit: float, negative_logits) -> float:
    """Cross entropy of the target against a sample of negative logits."""
    n = np.atleast_1d(np.asarray(negative_logits, dtype=float))
    if n.size == 0:
        raise ContractError("need at least one negative logit")
    loss, _, _ = sampled_softmax_terms(np.float64(target_logit), n)
    return float(loss)


def bce_with_logits(logits, labels):
    """Mean-free binary cross entropy per entry and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=float)
    loss = np.maximum(logits, 0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))
    return loss, sigmoid(logits) - labels


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    first_moment: Params = field(default_factory=dict)
    second_moment: Params = field(default_factory=dict)


def adam_step(state: AdamState, params: Params, grads: Params) -> Params:
    """Bias-corrected Adam with decoupled weight decay.

    Parameters are updated in place and also returned. Parameters missing
    from ``grads`` (frozen tables) are left alone.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.first_moment.setdefault(name, np.zeros_like(p))
        v = state.second_moment.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(loss_fn, params: Params, h: float = 1e-5, names=None) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn(params)`` must return ``(loss, grads)`` and be deterministic.
    Returns the max over all checked entries of
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if h <= 0:
        raise ContractError("step h must be positive")
    _, grads = loss_fn(params)
    worst = 0.0
    for name in names or list(params):
        p = params[name]
        analytic = grads.get(name, np.zeros_like(p))
        flat = p.reshape(-1)
        a_flat = np.asarray(analytic).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_fn(params)
            flat[i] = orig - h
            down, _ = loss_fn(params)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoint container

_MAGIC = "SLATEREC-PARAMS 1"


def save_params(path, params: Params, adam: AdamState | None = None):
    """Write a parameter container: text header, then little-endian float64 payload.

    With ``adam`` given, optimiser hyperparameters and step count go to a
    ``<path>.opt`` sidecar.
    """
    path = Path(path)
    lines = [_MAGIC, str(len(params))]
    for name, arr in params.items():
        arr2 = np.atleast_2d(arr) if arr.ndim < 2 else arr
        if arr.ndim > 2:
            raise ContractError(f"{name}: only 1-D/2-D tensors can be stored")
        rows, cols = (1, arr.shape[0]) if arr.ndim == 1 else arr2.shape
        lines.append(f"{name} {rows} {cols} {arr.ndim}")
    header = ("\n".join(lines) + "\n").encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if adam is not None:
        side = {k: getattr(adam, k) for k in ("lr", "beta1", "beta2", "eps", "weight_decay", "step")}
        Path(str(path) + ".opt").write_text("".join(f"{k}={v!r}\n" for k, v in side.items()))


def load_params(path) -> Params:
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = fh.read(hlen).decode().splitlines()
        if header[0] != _MAGIC:
            raise ValueError(f"{path}: not a parameter container")
        params: Params = {}
        for line in header[2:2 + int(header[1])]:
            name, rows, cols, ndim = line.rsplit(" ", 3)
            rows, cols, ndim = int(rows), int(cols), int(ndim)
            data = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8").astype(float)
            params[name] = data.reshape(rows, cols) if ndim == 2 else data.reshape(cols)
    return params


def load_adam_sidecar(path) -> AdamState:
    vals = {}
    for line in Path(str(path) + ".opt").read_text().splitlines():
        k, v = line.split("=", 1)
        vals[k] = int(v) if k == "step" else float(v)
    return AdamState(**vals)
