"""Reverse-mode autodiff: parameters, recorded values, and backward."""

import logging
from typing import Callable, Iterator, MutableMapping, Optional, Sequence

import numpy as np

from hetgnn.core import rng as rng_lib

log = logging.getLogger(__name__)


class TapeError(ValueError):
    pass


class Parameters(MutableMapping):
    """Named trainable arrays, created lazily and seeded by name.

    Initial values depend only on (seed, name), never on creation order, so
    two models built from the same config and seed start out bitwise equal.
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._values: dict[str, np.ndarray] = {}
        # Names excluded from the L2 penalty (biases, norm offsets, ...).
        self.no_decay: set[str] = set()

    def __getitem__(self, name):
        return self._values[name]

    def __setitem__(self, name, value):
        self._values[name] = np.asarray(value)

    def __delitem__(self, name):
        del self._values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def get_or_create(self, name: str, shape, init: str = "glorot", decay: bool = True) -> np.ndarray:
        shape = tuple(int(s) for s in shape)
        if name in self._values:
            existing = self._values[name]
            if existing.shape != shape:
                raise TapeError(
                    f"parameter {name!r} exists with shape {existing.shape}, requested {shape}")
            return existing
        value = initialize(shape, init, rng_lib.stream(self.seed, "init", name)).astype(self.dtype)
        self._values[name] = value
        if not decay:
            self.no_decay.add(name)
        return value

    def copy(self, dtype=None) -> "Parameters":
        out = Parameters(self.seed, dtype or self.dtype)
        for name, value in self._values.items():
            out._values[name] = value.astype(out.dtype, copy=True)
        out.no_decay = set(self.no_decay)
        return out


def initialize(shape, init: str, gen: np.random.Generator) -> np.ndarray:
    if init == "zeros":
        return np.zeros(shape)
    if init == "ones":
        return np.ones(shape)
    if init == "glorot":
        if len(shape) >= 2:
            fan_in, fan_out = shape[0], int(np.prod(shape[1:]))
        else:
            fan_in = fan_out = shape[0] if shape else 1
        limit = np.sqrt(6.0 / max(fan_in + fan_out, 1))
        return gen.uniform(-limit, limit, size=shape)
    if init == "normal":
        return gen.normal(0.0, 0.05, size=shape)
    raise TapeError(f"unknown initializer {init!r}")


class Var:
    """A value recorded on a tape.

    `parents` holds the recorded inputs (None for constants) and `vjp` maps
    the output cotangent to one cotangent per parent.
    """

    __slots__ = ("value", "tape", "index", "parents", "vjp", "param_name")
    __array_priority__ = 1000

    def __init__(self, value, tape, index, parents, vjp, param_name=None):
        self.value = value
        self.tape = tape
        self.index = index
        self.parents = parents
        self.vjp = vjp
        self.param_name = param_name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        label = f" {self.param_name}" if self.param_name else ""
        return f"Var#{self.index}{label}(shape={self.value.shape}, dtype={self.value.dtype})"

    def numpy(self) -> np.ndarray:
        return self.value

    # Arithmetic lives in ops; imported lazily to avoid a cycle.
    def __add__(self, other):
        from hetgnn.core import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from hetgnn.core import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from hetgnn.core import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from hetgnn.core import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from hetgnn.core import ops
        return ops.div(self, other)

    def __neg__(self):
        from hetgnn.core import ops
        return ops.mul(self, -1.0)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x)


class Tape:
    """Records differentiable operations of one forward pass.

    A tape is bound to a `Parameters` container; `variable()` hands out one
    leaf per parameter name, so reusing a layer object (weight sharing)
    accumulates into a single gradient.
    """

    def __init__(self, params: Optional[Parameters] = None, *, training: bool = False,
                 seed: int = 0, step: int = 0):
        self.params = params if params is not None else Parameters()
        self.training = training
        self.seed = seed
        self.step = step
        self.nodes: list[Var] = []
        self.gradients: dict[str, np.ndarray] = {}
        self._leaves: dict[str, Var] = {}
        self._site_calls: dict[str, int] = {}

    @property
    def dtype(self):
        return self.params.dtype

    def variable(self, name: str, shape, init: str = "glorot", decay: bool = True) -> Var:
        if name in self._leaves:
            leaf = self._leaves[name]
            if leaf.shape != tuple(shape):
                raise TapeError(f"parameter {name!r} reused with shape {tuple(shape)}, has {leaf.shape}")
            return leaf
        value = self.params.get_or_create(name, shape, init, decay)
        leaf = self.record(value, (), None)
        leaf.param_name = name
        self._leaves[name] = leaf
        return leaf

    def variables(self) -> dict[str, Var]:
        """Parameter leaves used so far on this tape, by name."""
        return dict(self._leaves)

    def constant(self, value) -> np.ndarray:
        return np.asarray(value, dtype=self.dtype)

    def record(self, value, parents: Sequence, vjp: Optional[Callable]) -> Var:
        var = Var(value, self, len(self.nodes), tuple(parents), vjp)
        self.nodes.append(var)
        return var

    def rng(self, site: str) -> np.random.Generator:
        """Stream for one stochastic site: (seed, site, step, invocation)."""
        count = self._site_calls.get(site, 0)
        self._site_calls[site] = count + 1
        return rng_lib.stream(self.seed, site, self.step, count)

    def backward(self, loss) -> dict[str, np.ndarray]:
        return backward(self, loss)


def backward(tape: Tape, loss) -> dict[str, np.ndarray]:
    """Accumulates d(loss)/d(parameter) for every parameter the loss depends on.

    A loss that is not recorded (a plain constant) has no dependencies and
    yields an empty mapping: every gradient is implicitly zero.
    """
    if not isinstance(loss, Var):
        if np.size(loss) != 1:
            raise TapeError(f"loss must be a scalar, got shape {np.shape(loss)}")
        tape.gradients = {}
        return tape.gradients
    if loss.tape is not tape or loss.index >= len(tape.nodes) or tape.nodes[loss.index] is not loss:
        raise TapeError("loss was not recorded on this tape")
    if loss.value.size != 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.value.shape}")

    cotangents: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    grads: dict[str, np.ndarray] = {}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = cotangents.pop(node.index, None)
        if g is None:
            continue
        if node.param_name is not None:
            grads[node.param_name] = g
            continue
        if node.vjp is None:
            continue
        parent_grads = node.vjp(g)
        for parent, pg in zip(node.parents, parent_grads):
            if parent is None or pg is None:
                continue
            if parent.index in cotangents:
                cotangents[parent.index] = cotangents[parent.index] + pg
            else:
                cotangents[parent.index] = pg
    tape.gradients = {name: np.asarray(g, dtype=tape.params[name].dtype).reshape(tape.params[name].shape)
                      for name, g in grads.items()}
    return tape.gradients
