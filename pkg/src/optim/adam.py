"""Adam and ScaledAdam updates with decoupled weight decay."""

from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Mapping

import numpy as np

from src.autodiff.tensor import Tensor
from src.utils.errors import ContractError, DimensionError, NumericError

OptimizerKind = Literal["adam", "scaled_adam"]


@dataclass
class OptimizerState:
    """Moments, step counter and hyperparameters of one optimizer.

    ``m`` and ``v`` are keyed by parameter name and created lazily as zeros.
    """

    kind: OptimizerKind = "adam"
    lr: float = 0.006
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    rms_min: float = 1e-5
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def hyperparameters(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "rms_min": self.rms_min,
            "step": self.step,
        }

    @classmethod
    def from_hyperparameters(
        cls, hyper: Mapping[str, Any], m: Dict[str, np.ndarray], v: Dict[str, np.ndarray]
    ) -> "OptimizerState":
        return cls(
            kind=hyper["kind"],
            lr=float(hyper["lr"]),
            beta1=float(hyper["beta1"]),
            beta2=float(hyper["beta2"]),
            eps=float(hyper["eps"]),
            weight_decay=float(hyper["weight_decay"]),
            rms_min=float(hyper["rms_min"]),
            step=int(hyper["step"]),
            m=dict(m),
            v=dict(v),
        )

    def fresh(self, kind: OptimizerKind) -> "OptimizerState":
        """Same hyperparameters, zero moments, step 0."""
        return OptimizerState(
            kind=kind,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
            rms_min=self.rms_min,
        )


def _check(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState) -> None:
    if state.lr <= 0:
        raise ContractError(f"learning rate must be positive, got {state.lr}")
    for name, grad in grads.items():
        if name not in params:
            raise ContractError(f"gradient for unknown parameter {name}")
        if grad.shape != params[name].shape:
            raise DimensionError(f"gradient of {name}", params[name].shape, grad.shape)
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for {name}; step aborted")


def _update(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    scaled: bool,
) -> OptimizerState:
    _check(params, grads, state)
    t = state.step + 1
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, grad in grads.items():
        theta = params[name].data
        m = state.m.get(name)
        v = state.v.get(name)
        m = state.beta1 * (m if m is not None else 0.0) + (1.0 - state.beta1) * grad
        v = state.beta2 * (v if v is not None else 0.0) + (1.0 - state.beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v

        step = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        factor = max(state.rms_min, float(np.sqrt(np.mean(theta * theta)))) if scaled else 1.0
        theta -= factor * step + state.lr * state.weight_decay * theta
    state.step = t
    return state


def adam_step(
    params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState
) -> OptimizerState:
    """Bias-corrected Adam with decoupled weight decay, updating ``params`` in place.

    Args:
        params: Parameters by name
        grads: Gradients by name (parameters without an entry are left alone)
        state: Optimizer state, mutated and returned

    Raises:
        NumericError: If any gradient is NaN or infinite (nothing is modified)
    """
    return _update(params, grads, state, scaled=False)


def scaled_adam_step(
    params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState
) -> OptimizerState:
    """Adam step multiplied per tensor by ``max(rms_min, RMS(theta))``.

    Raises:
        NumericError: If any gradient is NaN or infinite (nothing is modified)
    """
    return _update(params, grads, state, scaled=True)


def optimizer_step(
    params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState
) -> OptimizerState:
    """Dispatch on ``state.kind``."""
    if state.kind == "scaled_adam":
        return scaled_adam_step(params, grads, state)
    return adam_step(params, grads, state)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their global norm is at most ``max_norm``.

    Returns:
        The norm before clipping
    """
    norm = global_norm(grads)
    if norm > max_norm > 0:
        ratio = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * ratio
    return norm
