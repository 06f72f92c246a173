"""Numerically stable primitives shared by the model, trainer and scorer.

Matrices are plain 2-D float64 numpy arrays. Linear layers store weights as
``(out_features, in_features)``, so ``affine(x, w, b) = x @ w.T + b``.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
# smallest positive subnormal; softplus never returns less
TINY = float(np.nextafter(0.0, 1.0))

_MASK64 = (1 << 64) - 1


class ContractError(ValueError):
    """An input violated a documented precondition."""


def log_sum_exp(v, axis=None):
    """Compute ``log(sum(exp(v)))`` by shifting with the maximum.

    With ``axis`` given, reduces along that axis (used row-wise for mixtures).
    Entries may be ``-inf``; ``nan`` and ``+inf`` are rejected, as is a
    reduction whose inputs are all ``-inf``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise ContractError("log_sum_exp of an empty vector")
    if np.isnan(v).any() or np.isposinf(v).any():
        raise ContractError("log_sum_exp input must be finite or -inf")
    m = np.max(v, axis=axis, keepdims=True)
    if np.isneginf(m).any():
        raise ContractError("degenerate mixture")
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def gaussian_log_pdf(y, mu, sigma):
    """Log of the normal density N(y | mu, sigma**2); broadcasts over arrays."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if not np.all(sigma > 0):
        raise ContractError("gaussian_log_pdf requires sigma > 0")
    z = (np.asarray(y, dtype=np.float64) - mu) / sigma
    out = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * z * z
    return float(out) if out.ndim == 0 else out


def softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ContractError("softmax of an empty vector")
    if not np.all(np.isfinite(logits)):
        raise ContractError("softmax input must be finite")
    e = np.exp(logits - np.max(logits, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def softplus(z):
    """``log(1 + exp(z))`` via ``max(z, 0) + log1p(exp(-|z|))``.

    The result is floored at the smallest positive double so that it stays
    strictly positive even where the true value underflows (z < -745).
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ContractError("softplus input must be finite")
    out = np.maximum(np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))), TINY)
    return float(out) if out.ndim == 0 else out


def softplus_grad(z):
    """Logistic sigmoid, the derivative of softplus."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def inverse_softplus(s: float) -> float:
    if s <= 0:
        raise ContractError("inverse_softplus requires a positive value")
    # log(exp(s) - 1) rewritten to avoid overflow for large s
    return s + math.log(-math.expm1(-s))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    return a @ b


def affine(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ContractError(f"affine shape mismatch: input {x.shape} vs weight {w.shape}")
    if bias.shape != (w.shape[0],):
        raise ContractError(f"affine shape mismatch: weight {w.shape} vs bias {bias.shape}")
    return x @ w.T + bias


def relu(z):
    return np.maximum(z, 0.0)


def relu_grad(z):
    # subgradient at exactly 0 is taken as 0
    return (np.asarray(z) > 0).astype(np.float64)


def tanh(z):
    return np.tanh(z)


def tanh_grad(z):
    t = np.tanh(z)
    return 1.0 - t * t


ACTIVATIONS = {
    "relu": (relu, relu_grad),
    "tanh": (tanh, tanh_grad),
}


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** generator with splitmix64 seed expansion.

    Pure integer arithmetic, so a given seed yields the same stream on every
    platform. Uniform doubles take the top 53 bits of each 64-bit output.
    Normals come from the Box-Muller transform, two per pair of uniforms.
    Single-owner: do not share an instance between threads.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        sm = self.seed
        s = []
        for _ in range(4):
            sm, out = _splitmix64(sm)
            s.append(out)
        self._s = s

    def derive(self, stream: int) -> "Rng":
        """Independent generator for a named sub-stream of the same seed."""
        _, mixed = _splitmix64(self.seed ^ ((int(stream) * 0xD1B54A32D192ED03) & _MASK64))
        return Rng(mixed)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self, n: int | None = None):
        """Doubles in [0, 1)."""
        if n is None:
            return (self.next_u64() >> 11) * 2.0**-53
        return np.array([(self.next_u64() >> 11) * 2.0**-53 for _ in range(n)], dtype=np.float64)

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection."""
        if bound <= 0:
            raise ContractError("below() needs a positive bound")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % bound

    def normal(self, n: int) -> np.ndarray:
        return rng_normal(self, n)

    def shuffle(self, n: int) -> np.ndarray:
        return rng_shuffle(self, n)


def rng_normal(rng: Rng, n: int) -> np.ndarray:
    if n < 0:
        raise ContractError("n must be non-negative")
    out = np.empty(n, dtype=np.float64)
    for i in range(0, n, 2):
        u1 = 1.0 - rng.uniform()  # (0, 1], keeps log finite
        u2 = rng.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        out[i] = r * math.cos(2.0 * math.pi * u2)
        if i + 1 < n:
            out[i + 1] = r * math.sin(2.0 * math.pi * u2)
    return out


def rng_shuffle(rng: Rng, n: int) -> np.ndarray:
    """Fisher-Yates permutation of ``range(n)``."""
    if n < 0:
        raise ContractError("n must be non-negative")
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm, dtype=np.int64)
