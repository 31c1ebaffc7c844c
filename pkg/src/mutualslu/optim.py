"""Parameter registry, Adam with decoupled weight decay, and gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .autodiff import Tape, Tensor

__all__ = [
    "MissingGradError",
    "Parameters",
    "AdamState",
    "adam_step",
    "GradCheckReport",
    "gradient_check",
]


class MissingGradError(RuntimeError):
    """A parameter reached the optimizer without a populated gradient."""


class Parameters:
    """Named registry of all trainable tensors, with seeded initialization.

    Initialization scheme: weight matrices uniform(-1/sqrt(fan_in),
    +1/sqrt(fan_in)), biases zero, embeddings normal(0, 0.1). Iteration
    follows insertion order, so two runs with the same seed build identical
    registries.
    """

    def __init__(self, seed: int, dtype=np.float32):
        self._rng = np.random.default_rng(seed)
        self._tensors: dict[str, Tensor] = {}
        self.dtype = np.dtype(dtype)

    def _register(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(values.astype(self.dtype))
        self._tensors[name] = t
        return t

    def weight(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self._register(name, self._rng.uniform(-bound, bound, size=(fan_in, fan_out)))

    def bias(self, name: str, width: int) -> Tensor:
        return self._register(name, np.zeros((1, width)))

    def embedding(self, name: str, rows: int, width: int) -> Tensor:
        return self._register(name, self._rng.normal(0.0, 0.1, size=(rows, width)))

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of all parameter arrays, keyed by name."""
        return {name: t.values.copy() for name, t in self._tensors.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) - set(arrays)
        extra = set(arrays) - set(self._tensors)
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in self._tensors.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != t.values.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.values.shape}")
            t.values = arr.copy()
            t.grad = None


@dataclass
class AdamState:
    """Adam moments plus hyperparameters; one instance per Parameters."""

    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Parameters, state: AdamState) -> None:
    """Apply one Adam update in place and clear all gradients.

    Weight decay is decoupled: it is applied to the parameters directly,
    not folded into the gradients.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradError(f"parameter {name!r} has no gradient")
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        if state.weight_decay:
            update = update + state.weight_decay * p.values
        p.values = p.values - state.learning_rate * update
    params.zero_grads()


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err <= tolerance


@dataclass
class GradCheckReport:
    entries: list[ParamCheck]

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def failures(self, tolerance: float) -> list[ParamCheck]:
        return [e for e in self.entries if not e.passed(tolerance)]

    def passed(self, tolerance: float) -> bool:
        return not self.failures(tolerance)


def gradient_check(
    params: Parameters,
    loss_fn: Callable[[], Tensor],
    *,
    step: float = 1e-5,
    abs_floor: float = 1e-6,
    max_entries_per_param: int = 8,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` must rebuild the scalar loss from the current parameter
    values on every call. Within each parameter up to
    ``max_entries_per_param`` coordinates are probed (all of them for small
    tensors). Differences below ``abs_floor`` count as zero error. Run this
    on float64 parameters; float32 cannot resolve the h=1e-5 stencil.
    """
    rng = rng or np.random.default_rng(0)
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.values))
        for name, p in params.items()
    }
    params.zero_grads()

    entries = []
    for name, p in params.items():
        flat = p.values.reshape(-1)
        n = flat.size
        if n <= max_entries_per_param:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=max_entries_per_param, replace=False))
        worst = 0.0
        aflat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn().item()
            flat[i] = orig - step
            f_minus = loss_fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            diff = abs(aflat[i] - numeric)
            if diff > abs_floor:
                worst = max(worst, diff / max(abs(aflat[i]), abs(numeric)))
        entries.append(ParamCheck(name=name, max_rel_err=worst, checked=len(coords)))
    return GradCheckReport(entries=entries)
