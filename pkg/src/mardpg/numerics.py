"""Minimal differentiable building blocks: dense layers, an LSTM cell, Adam,
and a central finite-difference gradient oracle.

Everything is float64 numpy. Layers cache the last forward pass and the cache
is consumed by backward, so calling backward twice (or before any forward) is
a detectable StateError rather than a silent wrong gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Array dimensions do not match the declared geometry."""


class StateError(RuntimeError):
    """Backward called without a matching cached forward pass."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


def _as_vector(x, dim: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise ShapeError(f"{name}: expected shape ({dim},), got {x.shape}")
    return x


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# activations

def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation '{name}'")


def _activation_deriv(name: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(z)
    if name == "tanh":
        return 1.0 - y * y
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    raise ValueError(f"unknown activation '{name}'")


# ---------------------------------------------------------------------------
# dense layer

@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"
    _cache: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(
                f"dense layer: W {self.W.shape} and b {self.b.shape} disagree"
            )
        _apply_activation(self.activation, np.zeros(1))  # validate name

    @classmethod
    def create(cls, rng: np.random.Generator, n_in: int, n_out: int,
               activation: str = "identity") -> "DenseLayer":
        bound = 1.0 / np.sqrt(n_in)
        W = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = rng.uniform(-bound, bound, size=n_out)
        return cls(W, b, activation)

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def forward(self, x) -> np.ndarray:
        x = _as_vector(x, self.n_in, "dense input")
        z = self.W @ x + self.b
        y = _apply_activation(self.activation, z)
        check_finite(y, "dense output")
        self._cache = (x, z, y)
        return y

    def backward(self, d_out):
        """Returns (dW, db, dx) for the most recent forward; consumes the cache."""
        if self._cache is None:
            raise StateError("dense backward called without a cached forward pass")
        x, z, y = self._cache
        self._cache = None
        d_out = _as_vector(d_out, self.n_out, "dense upstream gradient")
        dz = d_out * _activation_deriv(self.activation, z, y)
        dW = np.outer(dz, x)
        db = dz
        dx = self.W.T @ dz
        return dW, db, dx

    def clone(self) -> "DenseLayer":
        return DenseLayer(self.W.copy(), self.b.copy(), self.activation)


# ---------------------------------------------------------------------------
# LSTM cell

GATES = ("i", "f", "o", "g")


@dataclass
class LstmStepCache:
    z: np.ndarray        # [h_prev; x]
    gates: dict          # post-activation gate values
    c_prev: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    used: bool = False


@dataclass
class LstmCell:
    """Standard LSTM cell with per-step caching for truncated-free BPTT."""

    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    def __post_init__(self):
        h, z = self.W_i.shape
        for gate in GATES:
            W = getattr(self, f"W_{gate}")
            b = getattr(self, f"b_{gate}")
            if W.shape != (h, z) or b.shape != (h,):
                raise ShapeError("lstm cell: gate parameter shapes disagree")
        if z <= h:
            raise ShapeError("lstm cell: weight columns must cover hidden+input")

    @classmethod
    def create(cls, rng: np.random.Generator, input_dim: int,
               hidden_dim: int) -> "LstmCell":
        fan_in = hidden_dim + input_dim
        bound = 1.0 / np.sqrt(fan_in)

        def w():
            return rng.uniform(-bound, bound, size=(hidden_dim, fan_in))

        def b():
            return rng.uniform(-bound, bound, size=hidden_dim)

        # forget-gate bias starts at 1.0 so early training does not erase memory
        return cls(W_i=w(), W_f=w(), W_o=w(), W_g=w(),
                   b_i=b(), b_f=np.ones(hidden_dim), b_o=b(), b_g=b())

    @property
    def hidden_dim(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_i.shape[1] - self.W_i.shape[0]

    def params(self) -> dict:
        return {f"W_{g}": getattr(self, f"W_{g}") for g in GATES} | {
            f"b_{g}": getattr(self, f"b_{g}") for g in GATES}

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def step(self, h_prev, c_prev, x):
        """One forward step; returns (h, c, cache)."""
        h_prev = _as_vector(h_prev, self.hidden_dim, "lstm h_prev")
        c_prev = _as_vector(c_prev, self.hidden_dim, "lstm c_prev")
        x = _as_vector(x, self.input_dim, "lstm input")
        z = np.concatenate([h_prev, x])
        i = _sigmoid(self.W_i @ z + self.b_i)
        f = _sigmoid(self.W_f @ z + self.b_f)
        o = _sigmoid(self.W_o @ z + self.b_o)
        g = np.tanh(self.W_g @ z + self.b_g)
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        check_finite(h, "lstm hidden state")
        check_finite(c, "lstm cell state")
        cache = LstmStepCache(z=z, gates={"i": i, "f": f, "o": o, "g": g},
                              c_prev=c_prev, c=c, tanh_c=tanh_c)
        return h, c, cache

    def backward_step(self, cache: LstmStepCache, dh, dc):
        """Backward through one cached step.

        Returns (grads, dh_prev, dc_prev, dx) where grads matches params().
        """
        if cache.used:
            raise StateError("lstm step cache already consumed")
        cache.used = True
        dh = _as_vector(dh, self.hidden_dim, "lstm dh")
        dc = _as_vector(dc, self.hidden_dim, "lstm dc")
        i, f, o, g = (cache.gates[k] for k in GATES)
        dc_total = dc + dh * o * (1.0 - cache.tanh_c ** 2)
        do = dh * cache.tanh_c
        di = dc_total * g
        df = dc_total * cache.c_prev
        dg = dc_total * i
        dc_prev = dc_total * f
        pre = {
            "i": di * i * (1.0 - i),
            "f": df * f * (1.0 - f),
            "o": do * o * (1.0 - o),
            "g": dg * (1.0 - g * g),
        }
        grads = {}
        dz = np.zeros_like(cache.z)
        for gate in GATES:
            grads[f"W_{gate}"] = np.outer(pre[gate], cache.z)
            grads[f"b_{gate}"] = pre[gate]
            dz += getattr(self, f"W_{gate}").T @ pre[gate]
        dh_prev = dz[: self.hidden_dim]
        dx = dz[self.hidden_dim:]
        return grads, dh_prev, dc_prev, dx

    def clone(self) -> "LstmCell":
        return LstmCell(**{k: v.copy() for k, v in self.params().items()})


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def lstm_backward_through_time(cell: LstmCell, caches: list,
                               dh_per_step: list) -> dict:
    """Accumulate gradients w.r.t. the cell parameters over a cached rollout.

    caches[k] is the cache of the step that produced h_{k+1}; dh_per_step[k]
    is the loss gradient arriving at that output directly (the recurrent path
    into later steps is handled here).
    """
    if len(caches) != len(dh_per_step):
        raise StateError(
            f"BPTT: {len(caches)} cached steps but {len(dh_per_step)} upstream "
            "gradients")
    grads = {k: np.zeros_like(v) for k, v in cell.params().items()}
    dh_next = np.zeros(cell.hidden_dim)
    dc_next = np.zeros(cell.hidden_dim)
    for k in range(len(caches) - 1, -1, -1):
        dh = np.asarray(dh_per_step[k], dtype=np.float64) + dh_next
        step_grads, dh_next, dc_next, _ = cell.backward_step(caches[k], dh, dc_next)
        for key in grads:
            grads[key] += step_grads[key]
    return grads


# ---------------------------------------------------------------------------
# Adam

class Adam:
    """Adam with bias correction, updating a dict of live parameter arrays."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        if set(grads) != set(self.params):
            raise ShapeError("adam: gradient keys do not match parameters")
        self.t += 1
        for k, g in grads.items():
            p = self.params[k]
            if g.shape != p.shape:
                raise ShapeError(f"adam: gradient shape mismatch for '{k}'")
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / (1.0 - self.beta1 ** self.t)
            v_hat = self.v[k] / (1.0 - self.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# parameter-dict helpers

def flatten_params(params: dict) -> np.ndarray:
    return np.concatenate([np.ravel(params[k]) for k in sorted(params)]) \
        if params else np.zeros(0)


def assign_flat(params: dict, flat: np.ndarray) -> None:
    flat = np.asarray(flat, dtype=np.float64)
    offset = 0
    for k in sorted(params):
        n = params[k].size
        params[k][...] = flat[offset:offset + n].reshape(params[k].shape)
        offset += n
    if offset != flat.size:
        raise ShapeError("assign_flat: flat vector length mismatch")


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def add_params(acc: dict, grads: dict, scale: float = 1.0) -> None:
    for k in acc:
        acc[k] += scale * grads[k]


def scale_params(grads: dict, scale: float) -> dict:
    return {k: v * scale for k, v in grads.items()}


def clip_grad_norm(grads: dict, max_norm: float) -> dict:
    total = np.sqrt(sum(float(np.sum(v * v)) for v in grads.values()))
    if total > max_norm > 0.0:
        return scale_params(grads, max_norm / total)
    return grads


# ---------------------------------------------------------------------------
# finite differences

def finite_diff_grad(f, params, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    params = np.asarray(params, dtype=np.float64).copy()
    grad = np.zeros_like(params)
    for k in range(params.size):
        orig = params[k]
        params[k] = orig + eps
        f_plus = f(params)
        params[k] = orig - eps
        f_minus = f(params)
        params[k] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError("finite_diff_grad: objective is non-finite")
        grad[k] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def grad_matches(analytic: np.ndarray, numeric: np.ndarray,
                 rel_tol: float = 1e-4, abs_tol: float = 1e-6) -> bool:
    """Per-coordinate check: relative error within rel_tol, or absolute error
    within abs_tol where both magnitudes are tiny."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    abs_err = np.abs(analytic - numeric)
    ok = (abs_err <= abs_tol) | (abs_err <= rel_tol * denom)
    return bool(np.all(ok))
