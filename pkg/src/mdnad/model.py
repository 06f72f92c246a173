"""Deep mixture density network with a hand-derived backward pass.

An MLP trunk feeds three parallel affine heads that produce, per sample, the
mixing logits, the component means and the pre-activations of the component
standard deviations of a K-component Gaussian mixture over a scalar target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core_math import (
    ACTIVATIONS,
    LOG_2PI,
    ContractError,
    Rng,
    affine,
    inverse_softplus,
    log_sum_exp,
    softmax,
    softplus,
    softplus_grad,
)

HEADS = ("head_pi", "head_mu", "head_sigma")


@dataclass(frozen=True)
class MdnConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    num_components: int = 3
    sigma_floor: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ContractError("input_dim must be >= 1")
        if self.num_components < 1:
            raise ContractError("num_components must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ContractError("every hidden dim must be >= 1")
        if not self.sigma_floor > 0:
            raise ContractError("sigma_floor must be positive")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {sorted(ACTIVATIONS)}")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "activation": self.activation,
            "num_components": self.num_components,
            "sigma_floor": self.sigma_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MdnConfig":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d["hidden_dims"]),
            activation=str(d["activation"]),
            num_components=int(d["num_components"]),
            sigma_floor=float(d["sigma_floor"]),
        )


@dataclass
class NetworkParams:
    """Weights and biases of trunk and heads.

    The same structure holds gradients (see ``Gradients``). ``generation`` is
    bumped by every in-place update so stale forward caches can be detected.
    """

    trunk: list[tuple[np.ndarray, np.ndarray]]
    head_pi: tuple[np.ndarray, np.ndarray]
    head_mu: tuple[np.ndarray, np.ndarray]
    head_sigma: tuple[np.ndarray, np.ndarray]
    generation: int = field(default=0, compare=False)

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, (w, b) in enumerate(self.trunk):
            yield f"trunk.{i}.weight", w
            yield f"trunk.{i}.bias", b
        for name in HEADS:
            w, b = getattr(self, name)
            yield f"{name}.weight", w
            yield f"{name}.bias", b

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named_arrays()]

    def shapes(self) -> list[tuple[int, ...]]:
        return [a.shape for a in self.arrays()]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            trunk=[(w.copy(), b.copy()) for w, b in self.trunk],
            head_pi=tuple(a.copy() for a in self.head_pi),
            head_mu=tuple(a.copy() for a in self.head_mu),
            head_sigma=tuple(a.copy() for a in self.head_sigma),
            generation=self.generation,
        )

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(
            trunk=[(np.zeros_like(w), np.zeros_like(b)) for w, b in self.trunk],
            head_pi=tuple(np.zeros_like(a) for a in self.head_pi),
            head_mu=tuple(np.zeros_like(a) for a in self.head_mu),
            head_sigma=tuple(np.zeros_like(a) for a in self.head_sigma),
        )

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def check_shapes(self, config: MdnConfig) -> None:
        dims = [config.input_dim, *config.hidden_dims]
        expected = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            expected += [(fan_out, fan_in), (fan_out,)]
        expected += [(config.num_components, dims[-1]), (config.num_components,)] * 3
        if self.shapes() != expected:
            raise ContractError(f"parameter shapes {self.shapes()} do not match config {expected}")


Gradients = NetworkParams


@dataclass
class MdnOutput:
    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __len__(self) -> int:
        return self.pi.shape[0]


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each trunk layer, then the head input
    pre: list[np.ndarray]  # trunk pre-activations
    sigma_pre: np.ndarray
    activation: str
    params_id: int
    generation: int


def init_params(config: MdnConfig, rng: Rng) -> NetworkParams:
    """He init for relu trunks, Xavier (1/fan_in) for tanh; zero biases.

    Heads use variance 1/fan_in. The sigma head bias starts at
    ``inverse_softplus(1 - sigma_floor)`` so every component has unit spread.
    """
    gain = 2.0 if config.activation == "relu" else 1.0
    dims = [config.input_dim, *config.hidden_dims]
    trunk = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng_matrix(rng, fan_out, fan_in, math.sqrt(gain / fan_in))
        trunk.append((w, np.zeros(fan_out)))
    k, h = config.num_components, dims[-1]
    heads = []
    for name in HEADS:
        w = rng_matrix(rng, k, h, math.sqrt(1.0 / h))
        b = np.zeros(k)
        if name == "head_sigma":
            b[:] = inverse_softplus(1.0 - config.sigma_floor) if config.sigma_floor < 1 else 0.0
        heads.append((w, b))
    return NetworkParams(trunk, *heads)


def rng_matrix(rng: Rng, rows: int, cols: int, scale: float) -> np.ndarray:
    return rng.normal(rows * cols).reshape(rows, cols) * scale


def forward(params: NetworkParams, x: np.ndarray, sigma_floor: float, activation: str = "relu"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"expected a 2-D input batch, got shape {x.shape}")
    act, _ = ACTIVATIONS[activation]
    inputs, pre = [], []
    h = x
    for w, b in params.trunk:
        inputs.append(h)
        z = affine(h, w, b)
        pre.append(z)
        h = act(z)
    inputs.append(h)
    k = params.head_pi[0].shape[0]
    if x.shape[0] == 0:
        empty = np.empty((0, k))
        out = MdnOutput(empty, empty.copy(), empty.copy())
        sigma_pre = empty.copy()
    else:
        sigma_pre = affine(h, *params.head_sigma)
        out = MdnOutput(
            pi=softmax(affine(h, *params.head_pi), axis=1),
            mu=affine(h, *params.head_mu),
            sigma=softplus(sigma_pre) + sigma_floor,
        )
    cache = ForwardCache(inputs, pre, sigma_pre, activation, id(params), params.generation)
    return out, cache


def component_log_terms(out: MdnOutput, y: np.ndarray) -> np.ndarray:
    """``log pi_i + log N(y | mu_i, sigma_i^2)`` per sample and component."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (len(out),):
        raise ContractError(f"target length {y.shape} does not match batch of {len(out)}")
    if not np.all(out.sigma > 0):
        raise ContractError("sigma must be positive")
    # an underflowed weight or huge residual gives a -inf term, which
    # log_sum_exp handles; only an all -inf row is an error
    with np.errstate(divide="ignore", over="ignore"):
        z = (y[:, None] - out.mu) / out.sigma
        return np.log(out.pi) - 0.5 * LOG_2PI - np.log(out.sigma) - 0.5 * z * z


def log_density(out: MdnOutput, y) -> np.ndarray:
    if len(out) == 0:
        return np.empty(0)
    return log_sum_exp(component_log_terms(out, y), axis=1)


def responsibilities(out: MdnOutput, y) -> np.ndarray:
    terms = component_log_terms(out, y)
    return np.exp(terms - log_sum_exp(terms, axis=1)[:, None])


def nll_loss(out: MdnOutput, y) -> float:
    """Mean negative log-likelihood over the batch."""
    if len(out) == 0:
        raise ContractError("nll_loss of an empty batch")
    return float(-np.mean(log_density(out, y)))


def backward(params: NetworkParams, cache: ForwardCache, out: MdnOutput, y) -> Gradients:
    """Gradient of ``nll_loss(out, y)`` with respect to every parameter."""
    if cache.params_id != id(params) or cache.generation != params.generation:
        raise ContractError("forward cache is stale or belongs to other parameters")
    y = np.asarray(y, dtype=np.float64)
    n = len(out)
    if n == 0 or cache.inputs[-1].shape[0] != n:
        raise ContractError("forward cache does not match this batch")

    gamma = responsibilities(out, y)
    resid = (y[:, None] - out.mu) / out.sigma
    d_logit = (out.pi - gamma) / n
    d_mu = gamma * (out.mu - y[:, None]) / (out.sigma * out.sigma) / n
    d_sigma = gamma * (1.0 - resid * resid) / out.sigma / n
    d_sigma_pre = d_sigma * softplus_grad(cache.sigma_pre)

    h = cache.inputs[-1]
    heads = []
    dh = np.zeros_like(h)
    for (w, _), d in zip((params.head_pi, params.head_mu, params.head_sigma), (d_logit, d_mu, d_sigma_pre)):
        heads.append((d.T @ h, d.sum(axis=0)))
        dh += d @ w

    _, act_grad = ACTIVATIONS[cache.activation]
    trunk = [None] * len(params.trunk)
    for i in range(len(params.trunk) - 1, -1, -1):
        w, _ = params.trunk[i]
        dz = dh * act_grad(cache.pre[i])
        trunk[i] = (dz.T @ cache.inputs[i], dz.sum(axis=0))
        dh = dz @ w

    grads = Gradients(trunk, *heads)
    for name, g in grads.named_arrays():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    return grads


@dataclass
class MdnModel:
    """A configuration bundled with its parameters."""

    config: MdnConfig
    params: NetworkParams

    @classmethod
    def initialize(cls, config: MdnConfig, rng: Rng) -> "MdnModel":
        return cls(config, init_params(config, rng))

    def forward(self, x):
        return forward(self.params, x, self.config.sigma_floor, self.config.activation)

    def predict(self, x) -> MdnOutput:
        return self.forward(x)[0]

    def log_density(self, x, y) -> np.ndarray:
        return log_density(self.predict(x), y)

    def loss(self, x, y) -> float:
        return nll_loss(self.predict(x), y)

    def loss_and_grad(self, x, y) -> tuple[float, Gradients]:
        out, cache = self.forward(x)
        return nll_loss(out, y), backward(self.params, cache, out, y)
