"""Reference network topologies for fusion, change inference and scoring.

The fusion-style net has two feature-extraction branches: the low-spatial
branch upsamples to full resolution through stacked up-convolutions (one
per factor-of-2 in the spatial resolution gap), the high-spatial branch
keeps full resolution through a down/up bottleneck.  The branch outputs
are concatenated and refined by a trunk of convolutions with additive
skip connections; the head projects to the output band count, with an
optional final ReLU for nonnegative outputs (fused images yes, change
images no).

The critic net scores an image through three down-convolutions, two flat
convolutions and a sigmoid; its scalar score is the global mean of the
sigmoid map.
"""

from __future__ import annotations

from .network import Network, NodeSpec


def _log2_int(factor: int) -> int:
    n = 0
    f = factor
    while f > 1:
        if f % 2:
            raise ValueError(f"spatial factor {factor} must be a power of 2")
        f //= 2
        n += 1
    return n


def fusion_style_net(hs_bands: int, ms_bands: int, out_bands: int, factor: int = 4,
                     width: int = 32, trunk_width: int = 64, trunk_depth: int = 4,
                     final_relu: bool = True) -> Network:
    """Two-branch fusion topology mapping (LRHS, HRLS) to a full-resolution cube."""
    ups = _log2_int(factor)
    nodes = [
        NodeSpec("y_lo", "input"),
        NodeSpec("y_hi", "input"),
        # low-spatial / high-spectral branch
        NodeSpec("lo_c1", "conv", ("y_lo",), out_channels=width),
        NodeSpec("lo_a1", "leaky_relu", ("lo_c1",)),
        NodeSpec("lo_c2", "conv", ("lo_a1",), out_channels=trunk_width),
        NodeSpec("lo_a2", "leaky_relu", ("lo_c2",)),
    ]
    prev = "lo_a2"
    for i in range(ups):
        nodes.append(NodeSpec(f"lo_up{i + 1}", "up_conv", (prev,), out_channels=trunk_width))
        prev = f"lo_up{i + 1}"
    lo_out = prev
    # high-spatial / low-spectral branch, full resolution via a down/up bottleneck
    nodes += [
        NodeSpec("hi_c1", "conv", ("y_hi",), out_channels=width),
        NodeSpec("hi_a1", "leaky_relu", ("hi_c1",)),
        NodeSpec("hi_c2", "conv", ("hi_a1",), out_channels=trunk_width),
        NodeSpec("hi_a2", "leaky_relu", ("hi_c2",)),
        NodeSpec("hi_down", "down_conv", ("hi_a2",), out_channels=trunk_width),
        NodeSpec("hi_up", "up_conv", ("hi_down",), out_channels=trunk_width),
        NodeSpec("merge", "concat", (lo_out, "hi_up")),
    ]
    prev = "merge"
    skip = None
    for i in range(trunk_depth):
        nodes.append(NodeSpec(f"trunk_c{i + 1}", "conv", (prev,), out_channels=trunk_width))
        nodes.append(NodeSpec(f"trunk_a{i + 1}", "leaky_relu", (f"trunk_c{i + 1}",)))
        prev = f"trunk_a{i + 1}"
        if skip is not None:
            nodes.append(NodeSpec(f"trunk_s{i + 1}", "add", (skip, prev)))
            prev = f"trunk_s{i + 1}"
        skip = prev
    nodes.append(NodeSpec("head", "conv", (prev,), out_channels=out_bands))
    if final_relu:
        nodes.append(NodeSpec("out", "relu", ("head",)))
    return Network(nodes, {"y_lo": hs_bands, "y_hi": ms_bands})


def change_net(hs_bands: int, ms_bands: int, out_bands: int, factor: int = 4,
               width: int = 32, trunk_width: int = 64, trunk_depth: int = 4) -> Network:
    """Change-inference topology: fusion-style net without the final ReLU,
    since change images carry signed entries."""
    return fusion_style_net(hs_bands, ms_bands, out_bands, factor=factor, width=width,
                            trunk_width=trunk_width, trunk_depth=trunk_depth, final_relu=False)


def critic_net(bands: int, width: int = 32) -> Network:
    """Scoring topology: 3 down-convolutions, 2 flat convolutions, sigmoid.

    Input spatial dims must be divisible by 8.
    """
    nodes = [
        NodeSpec("y", "input"),
        NodeSpec("d1", "down_conv", ("y",), out_channels=width),
        NodeSpec("d1a", "leaky_relu", ("d1",)),
        NodeSpec("d2", "down_conv", ("d1a",), out_channels=2 * width),
        NodeSpec("d2a", "leaky_relu", ("d2",)),
        NodeSpec("d3", "down_conv", ("d2a",), out_channels=2 * width),
        NodeSpec("d3a", "leaky_relu", ("d3",)),
        NodeSpec("f1", "conv", ("d3a",), out_channels=2 * width),
        NodeSpec("f1a", "leaky_relu", ("f1",)),
        NodeSpec("f2", "conv", ("f1a",), out_channels=1),
        NodeSpec("score_map", "sigmoid", ("f2",)),
    ]
    return Network(nodes, {"y": bands})
