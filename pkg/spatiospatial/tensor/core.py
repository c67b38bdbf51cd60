"""
Dense tensors and tape-based reverse-mode differentiation.

A :class:`GradTape` records every primitive executed while it is active and
while at least one input requires a gradient. :func:`backward` replays the
recorded backward rules in reverse execution order, accumulating gradients
additively into ``Tensor.grad``.

    with GradTape() as tape:
        loss = (x * x).sum()
    backward(loss)
"""
import logging
import threading

import numpy as np

from spatiospatial.utils.errors import ContractError, ShapeError

logger = logging.getLogger(__name__)

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
DEFAULT_DTYPE = np.dtype(np.float32)

_local = threading.local()


class Tensor:
    """
    N-dimensional float array with an optional gradient buffer.
    Args:
        data (array-like): Values; copied only when a dtype cast is needed.
        requires_grad (bool): Whether backward populates ``grad``.
        dtype: float32 or float64. Defaults to the dtype of ``data`` when it is
            already a float array, float32 otherwise.
        name (str): Optional label used in error messages.
    """

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in FLOAT_DTYPES else DEFAULT_DTYPE
        dtype = np.dtype(dtype)
        if dtype not in FLOAT_DTYPES:
            raise ContractError(f"unsupported tensor dtype {dtype}; use float32 or float64")
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return self.data.reshape(()).item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def accumulate_grad(self, g):
        g = np.asarray(g, dtype=self.dtype)
        if g.shape != self.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {self.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # arithmetic sugar; primitives live in ops
    def __add__(self, other):
        from spatiospatial.tensor import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from spatiospatial.tensor import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from spatiospatial.tensor import ops
        return ops.mul(self, -1.0)

    def __sub__(self, other):
        return self + (-as_tensor(other, dtype=self.dtype))

    def sum(self):
        from spatiospatial.tensor import ops
        return ops.sum(self)

    def mean(self):
        from spatiospatial.tensor import ops
        return ops.mean(self)

    def reshape(self, *shape):
        from spatiospatial.tensor import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


class TapeNode:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class GradTape:
    """
    Ordered record of executed primitives.

    Entering the tape makes it the active tape of the current thread; tapes
    nest, and the innermost one records. A tape belongs to one thread.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.stack.pop()
        return False

    def record(self, op, inputs, output, backward_fn):
        self.nodes.append(TapeNode(op, inputs, output, backward_fn))
        output._tape = self

    def count(self, op):
        """Number of recorded nodes of primitive ``op`` (e.g. ``'relu'``)."""
        return sum(1 for node in self.nodes if node.op == op)

    def backward(self, loss):
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = getattr(loss, "shape", None)
            raise ContractError(f"backward needs a scalar loss, got shape {shape}")
        if loss._tape is not self:
            raise ContractError("loss was not produced on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        reached = {id(loss): loss}
        for node in reversed(self.nodes):
            g_out = grads.get(id(node.output))
            if g_out is None:
                continue
            g_inputs = node.backward_fn(g_out)
            for inp, g in zip(node.inputs, g_inputs):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                    reached[key] = inp
        for key, tensor in reached.items():
            if tensor.requires_grad:
                tensor.accumulate_grad(grads[key])
        logger.debug("backward over %d nodes reached %d tensors", len(self.nodes), len(reached))


def current_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def record_op(op, inputs, out_data, backward_fn):
    """
    Wrap a primitive's output and record it on the active tape.

    ``backward_fn`` receives dLoss/dOutput and returns one gradient (or None)
    per input, each with that input's shape.
    Args:
        op (str): Primitive name, used for tape accounting.
        inputs (tuple[Tensor]): Operands.
        out_data (np.ndarray): Forward result.
        backward_fn (callable): Backward rule.
    Returns:
        Tensor: The output tensor.
    """
    tape = current_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad, dtype=out_data.dtype)
    if needs_grad:
        tape.record(op, tuple(inputs), out, backward_fn)
    return out


def backward(loss):
    """
    Populate gradients of every requires_grad tensor reachable from ``loss``.

    Repeated calls accumulate; reset with ``Tensor.zero_grad``.
    Args:
        loss (Tensor): Scalar produced on an active tape.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward needs a scalar loss, got shape {shape}")
    if loss._tape is None:
        raise ContractError("loss is not attached to a tape; compute it inside a GradTape with "
                            "at least one input requiring grad")
    loss._tape.backward(loss)
