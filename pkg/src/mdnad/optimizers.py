"""First-order optimizers over the ``NetworkParams`` shape-tree.

All five share one entry point, :func:`step`, which updates parameters and
state in place. Weight decay (AdamW only) applies to every array, biases
included. No learning-rate schedules.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import Gradients, NetworkParams

KINDS = ("sgd", "rmsprop", "adam", "adamw", "adabelief")


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "adamw"
    learning_rate: float | None = None  # None -> per-kind default
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; valid kinds: {', '.join(KINDS)}")
        if self.learning_rate is None:
            object.__setattr__(self, "learning_rate", 1e-2 if self.kind == "sgd" else 1e-3)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for name in ("momentum", "beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    def with_kind(self, kind: str) -> "OptimizerSpec":
        """Same hyperparameters for another kind; the lr reverts to that kind's default."""
        return replace(self, kind=kind, learning_rate=None)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "weight_decay": self.weight_decay,
        }


@dataclass
class OptimizerState:
    kind: str
    step_count: int = 0
    first_moment: list[np.ndarray] | None = None
    second_moment: list[np.ndarray] | None = None


def new_state(spec: OptimizerSpec) -> OptimizerState:
    return OptimizerState(kind=spec.kind)


def reset(state: OptimizerState) -> OptimizerState:
    state.step_count = 0
    state.first_moment = None
    state.second_moment = None
    return state


def _check(spec: OptimizerSpec, state: OptimizerState, params: NetworkParams, grads: Gradients):
    if state.kind != spec.kind:
        raise ValueError(f"optimizer state for {state.kind!r} used with spec {spec.kind!r}")
    p_named = list(params.named_arrays())
    g_named = list(grads.named_arrays())
    if len(p_named) != len(g_named):
        raise ValueError("gradient tree does not match parameter tree")
    for (name, p), (_, g) in zip(p_named, g_named):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")


def step(spec: OptimizerSpec, state: OptimizerState, params: NetworkParams, grads: Gradients):
    """Apply one update in place and return ``(params, state)``."""
    _check(spec, state, params, grads)
    ps, gs = params.arrays(), grads.arrays()
    if state.first_moment is None:
        state.first_moment = [np.zeros_like(p) for p in ps]
    if state.second_moment is None and spec.kind != "sgd":
        state.second_moment = [np.zeros_like(p) for p in ps]
    state.step_count += 1
    t = state.step_count
    lr, b1, b2, eps = spec.learning_rate, spec.beta1, spec.beta2, spec.epsilon

    for i, (p, g) in enumerate(zip(ps, gs)):
        if spec.kind == "sgd":
            v = state.first_moment[i]
            v *= spec.momentum
            v += g
            p -= lr * v
        elif spec.kind == "rmsprop":
            s = state.second_moment[i]
            s *= b2
            s += (1 - b2) * g * g
            p -= lr * g / (np.sqrt(s) + eps)
        else:
            m, s = state.first_moment[i], state.second_moment[i]
            m *= b1
            m += (1 - b1) * g
            if spec.kind == "adabelief":
                # variance of the gradient around its EMA prediction; eps is
                # added inside the accumulator as in the original algorithm
                r = g - m
                s *= b2
                s += (1 - b2) * r * r + eps
            else:
                s *= b2
                s += (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            s_hat = s / (1 - b2**t)
            decay = lr * spec.weight_decay * p if spec.kind == "adamw" and spec.weight_decay else None
            p -= lr * m_hat / (np.sqrt(s_hat) + eps)
            if decay is not None:
                # decoupled from the gradient term, uses pre-update weights
                p -= decay
    params.generation += 1
    return params, state


class Optimizer:
    """Stateful convenience wrapper: ``opt.step(params, grads)``."""

    def __init__(self, spec: OptimizerSpec):
        self.spec = spec
        self.state = new_state(spec)

    def step(self, params: NetworkParams, grads: Gradients) -> NetworkParams:
        step(self.spec, self.state, params, grads)
        return params

    def reset(self) -> None:
        reset(self.state)
