"""
Tensor NN - dense two-hidden-layer MLPs, reverse-mode gradients and Adam.

This module is the numeric substrate for every network in the service:
- ParamSet: ordered named tensors of one network, tagged with its architecture
- mlp_forward / mlp_backward: fixed-topology MLP (Linear-ReLU-Linear-ReLU-Linear)
- adam_step: bias-corrected Adam over a ParamSet
- finite_diff_check: central-difference gradient oracle

Networks are float32 by default. Every operation preserves the dtype of the
parameters, so a float64 copy (ParamSet.astype) gives a high-precision twin
for gradient checking.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Mapping, Optional, Tuple

import numpy as np
import numpy.typing as npt

from services.resprect.app.exceptions import DimensionError, NumericError, StateError

Tensor = npt.NDArray[np.floating]

DEFAULT_DTYPE = np.float32
LAYER_NAMES = ("fc1", "fc2", "head")
MLP_TAG_PREFIX = "mlp2-relu"
SCALAR_TAG_PREFIX = "scalar"


@dataclass(frozen=True)
class MLPArch:
    """Layer sizes of a two-hidden-layer ReLU MLP."""

    input_dim: int
    hidden_dim: int
    output_dim: int

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "output_dim"):
            if getattr(self, name) <= 0:
                raise DimensionError(f"MLP {name} must be positive", actual=[getattr(self, name)])

    @property
    def tag(self) -> str:
        return f"{MLP_TAG_PREFIX}:{self.input_dim}-{self.hidden_dim}-{self.output_dim}"

    @classmethod
    def from_tag(cls, tag: str) -> "MLPArch":
        prefix, _, dims = tag.partition(":")
        if prefix != MLP_TAG_PREFIX:
            raise DimensionError(f"Not an MLP arch tag: {tag}")
        try:
            input_dim, hidden_dim, output_dim = (int(d) for d in dims.split("-"))
        except ValueError as e:
            raise DimensionError(f"Malformed MLP arch tag: {tag}") from e
        return cls(input_dim, hidden_dim, output_dim)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {
            "fc1.weight": (self.input_dim, self.hidden_dim),
            "fc1.bias": (self.hidden_dim,),
            "fc2.weight": (self.hidden_dim, self.hidden_dim),
            "fc2.bias": (self.hidden_dim,),
            "head.weight": (self.hidden_dim, self.output_dim),
            "head.bias": (self.output_dim,),
        }


def scalar_tag(name: str) -> str:
    """Arch tag of a ParamSet holding a single scalar parameter (e.g. log_alpha)."""
    return f"{SCALAR_TAG_PREFIX}:{name}"


def shapes_for_tag(tag: str) -> Dict[str, Tuple[int, ...]]:
    """Resolve an arch tag into the exact ordered tensor shapes it implies."""
    if tag.startswith(SCALAR_TAG_PREFIX + ":"):
        return {tag.partition(":")[2]: (1,)}
    return MLPArch.from_tag(tag).shapes()


class ParamSet:
    """
    Ordered collection of named tensors for one network.

    The arch_tag fully determines names, order and shapes; the constructor
    rejects anything else.
    """

    __slots__ = ("_entries", "arch_tag")

    def __init__(self, entries: Mapping[str, Tensor], arch_tag: str):
        expected = shapes_for_tag(arch_tag)
        if list(entries.keys()) != list(expected.keys()):
            raise DimensionError(
                f"ParamSet names do not match arch {arch_tag}",
                details={"expected_names": list(expected), "names": list(entries)},
            )
        for name, shape in expected.items():
            if tuple(entries[name].shape) != shape:
                raise DimensionError(
                    f"Tensor '{name}' has wrong shape for arch {arch_tag}",
                    expected=shape,
                    actual=entries[name].shape,
                )
        self._entries: Dict[str, Tensor] = dict(entries)
        self.arch_tag = arch_tag

    # --- mapping protocol ---
    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> Tuple[str, ...]:
        return tuple(self._entries)

    def items(self):
        return self._entries.items()

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self._entries.values())).dtype

    @property
    def arch(self) -> MLPArch:
        return MLPArch.from_tag(self.arch_tag)

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self._entries.values()))

    # --- value-semantics helpers ---
    def map(self, fn: Callable[[Tensor], Tensor]) -> "ParamSet":
        return ParamSet({k: fn(v) for k, v in self._entries.items()}, self.arch_tag)

    def zip_map(self, other: "ParamSet", fn: Callable[[Tensor, Tensor], Tensor]) -> "ParamSet":
        self.check_compatible(other)
        return ParamSet(
            {k: fn(v, other[k]) for k, v in self._entries.items()}, self.arch_tag
        )

    def check_compatible(self, other: "ParamSet") -> None:
        if other.arch_tag != self.arch_tag:
            raise DimensionError(
                "ParamSet architectures differ",
                details={"left": self.arch_tag, "right": other.arch_tag},
            )

    def copy(self) -> "ParamSet":
        return self.map(lambda t: np.array(t, copy=True))

    def astype(self, dtype) -> "ParamSet":
        return self.map(lambda t: t.astype(dtype))

    def zeros_like(self) -> "ParamSet":
        return self.map(np.zeros_like)

    def frozen(self) -> "ParamSet":
        """Copy whose arrays are read-only."""
        def _freeze(t: Tensor) -> Tensor:
            c = np.array(t, copy=True)
            c.setflags(write=False)
            return c
        return self.map(_freeze)

    def bit_equal(self, other: "ParamSet") -> bool:
        if other.arch_tag != self.arch_tag:
            return False
        return all(
            self[k].dtype == other[k].dtype and self[k].tobytes() == other[k].tobytes()
            for k in self
        )

    def __repr__(self) -> str:
        return f"ParamSet(arch_tag={self.arch_tag!r}, dtype={self.dtype}, n={self.num_parameters()})"


def init_mlp(
    arch: MLPArch,
    rng: np.random.Generator,
    zero_head: bool = False,
    dtype=DEFAULT_DTYPE,
) -> ParamSet:
    """
    Initialize an MLP with uniform fan-in scaling, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    With zero_head the output layer starts at exactly zero.
    """
    entries: Dict[str, Tensor] = {}
    for name, shape in arch.shapes().items():
        layer = name.split(".")[0]
        fan_in = arch.shapes()[f"{layer}.weight"][0]
        if zero_head and layer == "head":
            entries[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            entries[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ParamSet(entries, arch.tag)


def scalar_param(name: str, value: float, dtype=DEFAULT_DTYPE) -> ParamSet:
    return ParamSet({name: np.array([value], dtype=dtype)}, scalar_tag(name))


# ============================================
# Forward / backward
# ============================================

@dataclass
class ForwardPass:
    """Activations recorded by mlp_forward, consumed by mlp_backward."""

    arch_tag: str
    input: Tensor
    z1: Tensor
    h1: Tensor
    z2: Tensor
    h2: Tensor
    output: Tensor
    squeeze: bool = field(default=False)

    def min_preactivation_margin(self) -> float:
        """Smallest |pre-activation| over both hidden layers and the whole batch."""
        return float(min(np.min(np.abs(self.z1)), np.min(np.abs(self.z2))))


def _check_finite(t: Tensor, operation: str) -> None:
    if not np.all(np.isfinite(t)):
        raise NumericError(f"Non-finite values produced by {operation}", operation=operation)


def mlp_forward(params: ParamSet, x: Tensor) -> ForwardPass:
    """
    Evaluate Linear-ReLU-Linear-ReLU-Linear on a single vector or a batch.

    Args:
        params: Network parameters
        x: Input of shape (input_dim,) or (batch, input_dim)

    Returns:
        ForwardPass with the output and every activation needed by mlp_backward
    """
    arch = params.arch
    x = np.asarray(x, dtype=params.dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise DimensionError(
            "MLP input does not match arch input dim",
            expected=[arch.input_dim],
            actual=x.shape,
        )
    z1 = x @ params["fc1.weight"] + params["fc1.bias"]
    h1 = np.maximum(z1, 0)
    z2 = h1 @ params["fc2.weight"] + params["fc2.bias"]
    h2 = np.maximum(z2, 0)
    out = h2 @ params["head.weight"] + params["head.bias"]
    _check_finite(out, "mlp_forward")
    return ForwardPass(params.arch_tag, x, z1, h1, z2, h2, out, squeeze)


def mlp_output(fwd: ForwardPass) -> Tensor:
    return fwd.output[0] if fwd.squeeze else fwd.output


def mlp_backward(
    params: ParamSet,
    fwd: Optional[ForwardPass],
    upstream_grad: Tensor,
) -> Tuple[ParamSet, Tensor]:
    """
    Backpropagate an upstream gradient dL/d(output).

    Returns:
        (gradient ParamSet, dL/d(input)) with the input gradient shaped like the
        original input
    """
    if fwd is None:
        raise StateError("mlp_backward called before mlp_forward", component="tensor_nn")
    if fwd.arch_tag != params.arch_tag:
        raise StateError(
            "Recorded forward pass belongs to a different network",
            component="tensor_nn",
            details={"recorded": fwd.arch_tag, "params": params.arch_tag},
        )
    g = np.asarray(upstream_grad, dtype=params.dtype)
    if fwd.squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != fwd.output.shape:
        raise DimensionError(
            "Upstream gradient does not match forward output",
            expected=fwd.output.shape,
            actual=g.shape,
        )

    d_head_w = fwd.h2.T @ g
    d_head_b = g.sum(axis=0)
    d_h2 = g @ params["head.weight"].T
    d_z2 = d_h2 * (fwd.z2 > 0)
    d_fc2_w = fwd.h1.T @ d_z2
    d_fc2_b = d_z2.sum(axis=0)
    d_h1 = d_z2 @ params["fc2.weight"].T
    d_z1 = d_h1 * (fwd.z1 > 0)
    d_fc1_w = fwd.input.T @ d_z1
    d_fc1_b = d_z1.sum(axis=0)
    d_input = d_z1 @ params["fc1.weight"].T

    grads = ParamSet(
        {
            "fc1.weight": d_fc1_w,
            "fc1.bias": d_fc1_b,
            "fc2.weight": d_fc2_w,
            "fc2.bias": d_fc2_b,
            "head.weight": d_head_w,
            "head.bias": d_head_b,
        },
        params.arch_tag,
    )
    return grads, (d_input[0] if fwd.squeeze else d_input)


# ============================================
# Adam
# ============================================

@dataclass(frozen=True)
class AdamState:
    """Adam moments and step counter for one ParamSet."""

    m: ParamSet
    v: ParamSet
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ParamSet, lr: float = 3e-4, **kwargs) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, **kwargs)


def adam_step(
    params: ParamSet, grads: ParamSet, state: AdamState
) -> Tuple[ParamSet, AdamState]:
    """
    One bias-corrected Adam update.

    m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2
    p <- p - lr * m_hat / (sqrt(v_hat) + eps), with k = step + 1 bias correction
    """
    params.check_compatible(grads)
    params.check_compatible(state.m)
    k = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m = state.m.zip_map(grads, lambda m_, g: b1 * m_ + (1.0 - b1) * g)
    v = state.v.zip_map(grads, lambda v_, g: b2 * v_ + (1.0 - b2) * (g * g))
    c1 = 1.0 - b1 ** k
    c2 = 1.0 - b2 ** k

    new_entries = {}
    for name in params:
        m_hat = m[name] / c1
        v_hat = v[name] / c2
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_entries[name] = (params[name] - update).astype(params[name].dtype)
        _check_finite(new_entries[name], "adam_step")
    new_state = AdamState(m, v, k, state.lr, state.beta1, state.beta2, state.eps)
    return ParamSet(new_entries, params.arch_tag), new_state


# ============================================
# Gradient checking
# ============================================

LossFn = Callable[[ParamSet, Tensor], Tuple[float, ParamSet]]


def finite_diff_check(
    params: ParamSet,
    inputs: Tensor,
    loss_fn: LossFn,
    h: float = 1e-3,
) -> float:
    """
    Compare analytic gradients against central differences.

    The check runs on a float64 copy of params. loss_fn(params, inputs) must
    return (scalar loss, gradient ParamSet).

    Returns:
        max over all parameters of |analytic - numeric| / (|numeric| + 1e-8)
    """
    if h <= 0:
        raise DimensionError("Finite-difference step must be positive", actual=[h])
    p64 = params.astype(np.float64)
    _, analytic = loss_fn(p64, inputs)

    worst = 0.0
    for name in p64:
        base = p64[name]
        for idx in np.ndindex(base.shape):
            probe = {k: np.array(v, copy=True) for k, v in p64.items()}
            probe[name][idx] = base[idx] + h
            loss_plus, _ = loss_fn(ParamSet(probe, p64.arch_tag), inputs)
            probe[name][idx] = base[idx] - h
            loss_minus, _ = loss_fn(ParamSet(probe, p64.arch_tag), inputs)
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            err = abs(float(analytic[name][idx]) - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst
