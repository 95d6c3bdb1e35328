"""Reverse-mode autodiff core: tensors, the recorded graph, parameters, SGD.

Values are float32 by default; gradient-check tests construct float64
tensors instead (every operation preserves the dtype of its inputs, so the
whole graph runs in extended precision when its leaves do).
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

# raw forward functions, registered by ops.py: name -> fn(arrays, params) -> (out, ctx)
_RAW_FORWARD: dict = {}


def register_op(name, raw_forward):
    _RAW_FORWARD[name] = raw_forward


class Tensor:
    """N-dimensional array with an optional gradient slot.

    The shape is fixed at construction; reshaping returns a new Tensor.
    ``grad`` is allocated (zeroed) for requires_grad tensors and accumulated
    into by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if any(d <= 0 for d in arr.shape):
            raise ValueError(f"zero-size dimension in tensor shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.node = None  # Node that produced this tensor, if any

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def values(self):
        """Flat row-major view of the values."""
        return self.data.reshape(-1)

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Node:
    """One recorded operation: kind, inputs, output, cached intermediates."""

    __slots__ = ("op", "inputs", "params", "output", "ctx", "backward_fn")

    def __init__(self, op, inputs, params, output, ctx, backward_fn):
        self.op = op
        self.inputs = inputs
        self.params = params
        self.output = output
        self.ctx = ctx
        self.backward_fn = backward_fn

    def recompute(self):
        """Re-run the raw forward from the recorded inputs."""
        raw = _RAW_FORWARD[self.op]
        out, _ = raw([t.data for t in self.inputs], self.params)
        return out


class Graph:
    """Topologically ordered list of the nodes reachable from a root tensor."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, root):
        if root.node is None:
            return cls([])
        order = []
        seen = set()
        stack = [(root.node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            # reversed so that inputs are visited in declaration order
            for t in reversed(node.inputs):
                if t.node is not None and id(t.node) not in seen:
                    stack.append((t.node, False))
        return cls(order)

    def replay(self):
        """True iff re-running every node reproduces its output bit-identically."""
        for node in self.nodes:
            fresh = node.recompute()
            if fresh.shape != node.output.data.shape:
                return False
            if not np.array_equal(fresh, node.output.data):
                return False
        return True


def record(op, inputs, params, out_data, ctx, backward_fn):
    """Wrap a raw forward result; attach a graph node when gradients are needed."""
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=False, dtype=out_data.dtype)
    if requires_grad:
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), params, out, ctx, backward_fn)
    return out


def backward(loss, free_graph=True):
    """Accumulate d(loss)/d(tensor) into .grad for every reachable requires_grad tensor.

    Gradients flow in reverse topological order; when a tensor feeds several
    consumers its contributions are summed.  Tensors not on a path to the
    loss are left untouched.
    """
    if loss.size != 1 or loss.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {tuple(loss.shape)}")
    graph = Graph.trace(loss)
    pending = {id(loss): np.ones((), dtype=loss.dtype)}
    holders = {id(loss): loss}
    for node in reversed(graph.nodes):
        dout = pending.pop(id(node.output), None)
        if dout is None:
            continue
        needs = tuple(t.requires_grad or t.node is not None for t in node.inputs)
        grads = node.backward_fn(dout, node.ctx, node.inputs, node.params, needs)
        for t, g, needed in zip(node.inputs, grads, needs):
            if g is None or not needed:
                continue
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + g
            else:
                pending[key] = g
                holders[key] = t
        if free_graph:
            node.ctx = None
    for key, t in holders.items():
        if t.requires_grad and key in pending:
            g = pending[key]
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g.astype(t.data.dtype, copy=False)


class ParameterSet:
    """Named map of trainable tensors; iteration order is lexicographic."""

    def __init__(self):
        self._params = {}

    def add(self, name, tensor):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if not tensor.requires_grad:
            raise ValueError(f"parameter {name!r} must have requires_grad=True")
        self._params[name] = tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def __iter__(self):
        return iter(self.names())

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self):
        for _, t in self.items():
            t.zero_grad()


def fan_in_uniform(shape, fan_in, rng, dtype=None):
    """Seeded uniform init with bound sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    data = rng.uniform(-bound, bound, size=shape)
    return Tensor(data.astype(dtype or DEFAULT_DTYPE), requires_grad=True)


def sgd_step(params, learning_rate):
    """w <- w - lr * grad for every parameter, then zero the gradients."""
    if learning_rate <= 0:
        raise ValueError(f"learning rate must be positive, got {learning_rate}")
    for name, t in params.items():
        if t.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        t.data -= learning_rate * t.grad
        t.grad[...] = 0
    return params
