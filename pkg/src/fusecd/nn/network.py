"""Directed-acyclic network graph with taped forward and exact backward.

A Network is an ordered list of nodes; each node names its inputs, so
multi-branch graphs (concatenation, additive skip connections) are
expressed directly.  Forward returns the output together with a tape of
intermediate activations; backward replays the tape and produces exact
gradients for every parameter tensor and for every graph input.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import layers

PARAM_KINDS = ("conv", "down_conv", "up_conv")
KINDS = PARAM_KINDS + ("input", "leaky_relu", "relu", "sigmoid", "concat", "add")


@dataclass(frozen=True)
class NodeSpec:
    name: str
    kind: str
    inputs: tuple[str, ...] = ()
    out_channels: int = 0      # conv/down/up only
    stride: int = 2            # down/up only
    ksize: int = 3
    slope: float = 0.2         # leaky_relu only

    def to_dict(self) -> dict:
        return {
            "name": self.name, "kind": self.kind, "inputs": list(self.inputs),
            "out_channels": self.out_channels, "stride": self.stride,
            "ksize": self.ksize, "slope": self.slope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NodeSpec":
        return cls(name=d["name"], kind=d["kind"], inputs=tuple(d["inputs"]),
                   out_channels=d["out_channels"], stride=d["stride"],
                   ksize=d["ksize"], slope=d["slope"])


class ParamStore:
    """Ordered parameter tensors keyed by (node, field).

    The ordering is the network's declaration order, which also fixes the
    checkpoint layout and the Adam state alignment.
    """

    def __init__(self, entries: list[tuple[str, str, np.ndarray]]):
        self.entries = [(n, f, np.asarray(a, dtype=np.float64)) for n, f, a in entries]
        self._index = {(n, f): i for i, (n, f, _) in enumerate(self.entries)}

    def get(self, node: str, fieldname: str) -> np.ndarray:
        return self.entries[self._index[(node, fieldname)]][2]

    def set(self, node: str, fieldname: str, value: np.ndarray) -> None:
        i = self._index[(node, fieldname)]
        n, f, old = self.entries[i]
        if old.shape != value.shape:
            raise ValueError(f"shape mismatch for {node}.{fieldname}")
        self.entries[i] = (n, f, np.asarray(value, dtype=np.float64))

    def tensors(self) -> list[np.ndarray]:
        return [a for _, _, a in self.entries]

    def zeros_like(self) -> "ParamStore":
        return ParamStore([(n, f, np.zeros_like(a)) for n, f, a in self.entries])

    def copy(self) -> "ParamStore":
        return ParamStore([(n, f, a.copy()) for n, f, a in self.entries])

    def add_scaled(self, other: "ParamStore", scale: float) -> None:
        for i, (n, f, a) in enumerate(self.entries):
            self.entries[i] = (n, f, a + scale * other.entries[i][2])

    def scale(self, s: float) -> None:
        for i, (n, f, a) in enumerate(self.entries):
            self.entries[i] = (n, f, a * s)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.tensors()]) if self.entries else np.zeros(0)

    def from_vector(self, v: np.ndarray) -> None:
        off = 0
        for i, (n, f, a) in enumerate(self.entries):
            size = a.size
            self.entries[i] = (n, f, v[off : off + size].reshape(a.shape).copy())
            off += size
        if off != v.size:
            raise ValueError("vector length does not match parameter count")

    @property
    def size(self) -> int:
        return sum(a.size for a in self.tensors())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for n, f, a in self.entries:
            h.update(n.encode())
            h.update(f.encode())
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


class Network:
    """Fixed-topology graph over the primitive layer set."""

    def __init__(self, nodes: list[NodeSpec], in_channels: dict[str, int]):
        self.nodes = list(nodes)
        self.in_channels = dict(in_channels)
        self._by_name = {}
        self.channels: dict[str, int] = {}
        for node in self.nodes:
            if node.name in self._by_name:
                raise ValueError(f"duplicate node name {node.name!r}")
            if node.kind not in KINDS:
                raise ValueError(f"{node.name}: unknown kind {node.kind!r}")
            for inp in node.inputs:
                if inp not in self._by_name:
                    raise ValueError(f"{node.name}: input {inp!r} not defined before use")
            self._by_name[node.name] = node
            self.channels[node.name] = self._infer_channels(node)
        outputs = [n.name for n in self.nodes if not any(n.name in m.inputs for m in self.nodes)]
        if len(outputs) != 1:
            raise ValueError(f"network must have exactly one output node, found {outputs}")
        self.output = outputs[0]
        self.input_names = [n.name for n in self.nodes if n.kind == "input"]

    def _infer_channels(self, node: NodeSpec) -> int:
        if node.kind == "input":
            if node.name not in self.in_channels:
                raise ValueError(f"missing channel count for input {node.name!r}")
            return self.in_channels[node.name]
        cs = [self.channels[i] for i in node.inputs]
        if node.kind in PARAM_KINDS:
            if len(cs) != 1:
                raise ValueError(f"{node.name}: {node.kind} takes one input")
            if node.out_channels < 1:
                raise ValueError(f"{node.name}: out_channels must be >= 1")
            return node.out_channels
        if node.kind == "concat":
            return sum(cs)
        if node.kind == "add":
            if len(cs) != 2 or cs[0] != cs[1]:
                raise ValueError(f"{node.name}: add needs two inputs with equal channels")
            return cs[0]
        if len(cs) != 1:
            raise ValueError(f"{node.name}: {node.kind} takes one input")
        return cs[0]

    # -- parameters ---------------------------------------------------------

    def param_shapes(self) -> list[tuple[str, str, tuple[int, ...]]]:
        shapes = []
        for node in self.nodes:
            if node.kind not in PARAM_KINDS:
                continue
            cin = self.channels[node.inputs[0]]
            cout = node.out_channels
            k = node.ksize
            if node.kind == "up_conv":
                shapes.append((node.name, "kernel", (cin, cout, k, k)))
            else:
                shapes.append((node.name, "kernel", (cout, cin, k, k)))
            shapes.append((node.name, "bias", (cout,)))
        return shapes

    def init_params(self, rng: np.random.Generator, slope: float = 0.2) -> ParamStore:
        """Fan-in-scaled uniform kernels (He-style bound with the leaky
        rectifier gain, so activation scale survives depth), zero biases."""
        entries = []
        for name, fieldname, shape in self.param_shapes():
            if fieldname == "bias":
                entries.append((name, fieldname, np.zeros(shape)))
                continue
            node = self._by_name[name]
            if node.kind == "up_conv":
                # deconvolution spreads each input over stride^2 outputs
                fan_in = shape[0] * shape[2] * shape[3] / node.stride ** 2
            else:
                fan_in = shape[1] * shape[2] * shape[3]
            bound = np.sqrt(6.0 / ((1.0 + slope * slope) * fan_in))
            entries.append((name, fieldname, rng.uniform(-bound, bound, size=shape)))
        return ParamStore(entries)

    # -- execution ----------------------------------------------------------

    def forward(self, params: ParamStore, inputs: dict[str, np.ndarray]):
        """Run the graph; returns (output, tape of node activations)."""
        acts: dict[str, np.ndarray] = {}
        for node in self.nodes:
            try:
                acts[node.name] = self._node_forward(node, params, acts, inputs)
            except ValueError as exc:
                raise ValueError(f"layer {node.name!r} ({node.kind}): {exc}") from exc
        return acts[self.output], acts

    def _node_forward(self, node, params, acts, inputs):
        if node.kind == "input":
            x = np.asarray(inputs[node.name], dtype=np.float64)
            if x.ndim != 3 or x.shape[0] != self.in_channels[node.name]:
                raise ValueError(
                    f"expected ({self.in_channels[node.name]}, rows, cols), got {x.shape}")
            return x
        xs = [acts[i] for i in node.inputs]
        if node.kind == "conv":
            return layers.conv_forward(xs[0], params.get(node.name, "kernel"),
                                       params.get(node.name, "bias"), stride=1)
        if node.kind == "down_conv":
            return layers.conv_forward(xs[0], params.get(node.name, "kernel"),
                                       params.get(node.name, "bias"), stride=node.stride)
        if node.kind == "up_conv":
            return layers.up_conv_forward(xs[0], params.get(node.name, "kernel"),
                                          params.get(node.name, "bias"), stride=node.stride)
        if node.kind == "leaky_relu":
            return layers.leaky_relu(xs[0], node.slope)
        if node.kind == "relu":
            return layers.relu(xs[0])
        if node.kind == "sigmoid":
            return layers.sigmoid(xs[0])
        if node.kind == "concat":
            return np.concatenate(xs, axis=0)
        if node.kind == "add":
            if xs[0].shape != xs[1].shape:
                raise ValueError(f"add inputs differ in shape: {xs[0].shape} vs {xs[1].shape}")
            return xs[0] + xs[1]
        raise ValueError(f"unhandled kind {node.kind}")

    def backward(self, params: ParamStore, tape: dict[str, np.ndarray], grad_out: np.ndarray):
        """Exact gradients from a taped forward.

        Returns (param_grads: ParamStore, input_grads: dict by input name).
        """
        if self.output not in tape:
            raise ValueError("stale or foreign tape: output activation missing")
        grads: dict[str, np.ndarray] = {self.output: np.asarray(grad_out, dtype=np.float64)}
        if grads[self.output].shape != tape[self.output].shape:
            raise ValueError("grad_out shape does not match network output")
        pgrads = {(n, f): None for n, f, _ in self.param_shapes()}
        for node in reversed(self.nodes):
            g = grads.pop(node.name, None)
            if g is None:
                continue
            if node.kind == "input":
                continue
            xs = [tape[i] for i in node.inputs]
            gins = self._node_backward(node, params, xs, tape, g, pgrads)
            for name, gi in zip(node.inputs, gins):
                if name in grads:
                    grads[name] = grads[name] + gi
                else:
                    grads[name] = gi
        shapes = self.param_shapes()
        entries = []
        for name, fieldname, shape in shapes:
            g = pgrads[(name, fieldname)]
            entries.append((name, fieldname, np.zeros(shape) if g is None else g))
        input_grads = {name: grads.get(name, np.zeros_like(tape[name])) for name in self.input_names}
        return ParamStore(entries), input_grads

    def _node_backward(self, node, params, xs, tape, g, pgrads):
        if node.kind == "conv" or node.kind == "down_conv":
            stride = 1 if node.kind == "conv" else node.stride
            gx, gk, gb = layers.conv_backward(xs[0], params.get(node.name, "kernel"), g, stride=stride)
        elif node.kind == "up_conv":
            gx, gk, gb = layers.up_conv_backward(xs[0], params.get(node.name, "kernel"), g, stride=node.stride)
        elif node.kind == "leaky_relu":
            return [layers.leaky_relu_grad(xs[0], g, node.slope)]
        elif node.kind == "relu":
            return [layers.relu_grad(xs[0], g)]
        elif node.kind == "sigmoid":
            return [layers.sigmoid_grad(tape[node.name], g)]
        elif node.kind == "concat":
            out, off = [], 0
            for x in xs:
                out.append(g[off : off + x.shape[0]])
                off += x.shape[0]
            return out
        elif node.kind == "add":
            return [g, g]
        else:
            raise ValueError(f"unhandled kind {node.kind}")
        for fieldname, val in (("kernel", gk), ("bias", gb)):
            key = (node.name, fieldname)
            pgrads[key] = val if pgrads[key] is None else pgrads[key] + val
        return [gx]

    def to_dict(self) -> dict:
        return {"nodes": [n.to_dict() for n in self.nodes], "in_channels": self.in_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        return cls([NodeSpec.from_dict(n) for n in d["nodes"]], dict(d["in_channels"]))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def finite_diff_param_grads(loss_fn, params: ParamStore, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of loss_fn(params) over every parameter."""
    v = params.to_vector()
    out = np.empty_like(v)
    work = params.copy()
    for i in range(v.size):
        vp = v.copy()
        vp[i] += eps
        work.from_vector(vp)
        fp = loss_fn(work)
        vp[i] -= 2 * eps
        work.from_vector(vp)
        fm = loss_fn(work)
        out[i] = (fp - fm) / (2 * eps)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    denom = max(na, nb)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
