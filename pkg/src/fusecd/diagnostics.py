"""Developer-facing finite-difference diagnostics behind `fusecd gradcheck`.

Central differences cross rectifier kinks when a pre-activation lies
within the probe step of zero, which corrupts the FD reference rather
than the analytic gradient.  Checks therefore redraw the seeded
initialization until the network sits in general position (every
rectifier input at least ``margin_factor * eps`` away from the kink).
"""

from __future__ import annotations

import numpy as np

from .core import make_rng
from .nn import (Network, NodeSpec, change_net, critic_net, finite_diff_param_grads,
                 fusion_style_net, relative_error)

TOL = 1e-4
FD_EPS = 1e-5
MARGIN_FACTOR = 5.0


def activation_margin(net: Network, tape: dict) -> float:
    """Smallest |pre-activation| feeding a rectifier anywhere in the graph."""
    m = np.inf
    for node in net.nodes:
        if node.kind in ("relu", "leaky_relu"):
            m = min(m, float(np.abs(tape[node.inputs[0]]).min()))
    return m


def general_position_params(net: Network, inputs: dict, seed: int, eps: float = FD_EPS):
    """Seeded init redrawn until no rectifier input is within the FD window;
    a parameter step of eps shifts any pre-activation by O(eps), so a
    few-times-eps margin keeps central differences off the kinks."""
    for attempt in range(200):
        params = net.init_params(make_rng(seed, 23, attempt))
        _, tape = net.forward(params, inputs)
        margin = activation_margin(net, tape)
        if margin > MARGIN_FACTOR * eps:
            return params
    raise RuntimeError("could not reach a general-position initialization")


def check_network_gradients(net: Network, inputs: dict, seed: int, eps: float = FD_EPS) -> float:
    """Relative L2 error between backward() and central finite differences
    for the loss sum(w*out) + 0.5*sum(out^2)."""
    params = general_position_params(net, inputs, seed, eps)
    out0, _ = net.forward(params, inputs)
    w = make_rng(seed, 24).normal(size=out0.shape)

    def loss(p):
        out, _ = net.forward(p, inputs)
        return float(np.sum(w * out) + 0.5 * np.sum(out * out))

    out, tape = net.forward(params, inputs)
    analytic, _ = net.backward(params, tape, w + out)
    fd = finite_diff_param_grads(loss, params, eps=eps)
    return relative_error(analytic.to_vector(), fd)


def single_layer_cases(seed: int):
    rng = make_rng(seed, 5)
    base = [NodeSpec("x", "input")]
    cases = {
        "conv": base + [NodeSpec("c", "conv", ("x",), out_channels=3)],
        "down_conv": base + [NodeSpec("c", "down_conv", ("x",), out_channels=3)],
        "up_conv": base + [NodeSpec("c", "up_conv", ("x",), out_channels=3)],
        "leaky_relu": base + [NodeSpec("c", "conv", ("x",), out_channels=3),
                              NodeSpec("a", "leaky_relu", ("c",))],
        "relu": base + [NodeSpec("c", "conv", ("x",), out_channels=3),
                        NodeSpec("a", "relu", ("c",))],
        "sigmoid": base + [NodeSpec("c", "conv", ("x",), out_channels=3),
                           NodeSpec("a", "sigmoid", ("c",))],
        "concat": base + [NodeSpec("c1", "conv", ("x",), out_channels=2),
                          NodeSpec("c2", "conv", ("x",), out_channels=3),
                          NodeSpec("m", "concat", ("c1", "c2")),
                          NodeSpec("c3", "conv", ("m",), out_channels=2)],
        "add": base + [NodeSpec("c1", "conv", ("x",), out_channels=3),
                       NodeSpec("c2", "conv", ("x",), out_channels=3),
                       NodeSpec("s", "add", ("c1", "c2"))],
    }
    x = rng.normal(size=(2, 6, 6))
    return [(name, Network(nodes, {"x": 2}), {"x": x}) for name, nodes in cases.items()]


def toy_graph_cases(seed: int):
    rng = make_rng(seed, 6)
    return {
        "fusion_graph": (fusion_style_net(3, 1, 3, factor=2, width=3, trunk_width=4, trunk_depth=2),
                         {"y_lo": rng.normal(size=(3, 4, 4)) ** 2,
                          "y_hi": rng.normal(size=(1, 8, 8)) ** 2}),
        "change_graph": (change_net(3, 1, 3, factor=2, width=3, trunk_width=4, trunk_depth=2),
                         {"y_lo": rng.normal(size=(3, 4, 4)), "y_hi": rng.normal(size=(1, 8, 8))}),
        "critic_graph": (critic_net(3, width=3), {"y": rng.normal(size=(3, 8, 8))}),
    }


def run_gradcheck(seed: int = 0, verbose: bool = False) -> bool:
    ok = True
    for name, net, inputs in single_layer_cases(seed):
        err = check_network_gradients(net, inputs, seed)
        ok &= err <= TOL
        if verbose:
            print(f"layer {name:<12s} rel_err={err:.3e} {'ok' if err <= TOL else 'FAIL'}")
    for name, (net, inputs) in toy_graph_cases(seed).items():
        err = check_network_gradients(net, inputs, seed)
        ok &= err <= TOL
        if verbose:
            print(f"graph {name:<12s} rel_err={err:.3e} {'ok' if err <= TOL else 'FAIL'}")
    return ok
