"""Shared network-graph fixtures and oracle-exact model builders."""

from prbench.domain import LayerConfig, OpKind
from prbench.forest import ForestHyperparams, fit
from prbench.netgraph import NetworkGraph

MEMORIZE = ForestHyperparams(n_trees=4, bootstrap=False, feature_subsample=1.0, seed=0)

# step widths of the dual-FU oracle built by _blocks.dual_fu
DUAL_FU_WIDTHS = {
    OpKind.Conv2D: {"C": 8, "K": 8},
    OpKind.PointwiseConv2D: {"C": 8, "K": 8},
    OpKind.DepthwiseConv2D: {"C": 8},
    OpKind.FullyConnected: {"out": 16},
    OpKind.Conv1D: {"C": 8, "K": 8},
}


def chain_edges(names):
    return [[a, b] for a, b in zip(names, names[1:])]


def conv(C, size, K, F=3, s=1, pad=1):
    return LayerConfig(OpKind.Conv2D, {"C": C, "C_h": size, "C_w": size, "K": K,
                                       "F_h": F, "F_w": F, "s": s, "pad": pad})


def relu(C, size):
    return LayerConfig(OpKind.ReLU, {"C": C, "C_h": size, "C_w": size})


def mobilenet_style(groups=13, size=16, stem_in=3, stem_out=8):
    """Chain of depthwise-separable groups between a stem conv and an FC."""
    channels = [stem_out]
    for i in range(groups):
        channels.append(min(128, channels[-1] * 2 if i % 2 == 0 else channels[-1]))
    nodes = {"stem": conv(stem_in, size, stem_out), "stem_relu": relu(stem_out, size)}
    order = ["stem", "stem_relu"]
    for i in range(groups):
        c_in, c_out = channels[i], channels[i + 1]
        nodes[f"dw{i}"] = LayerConfig(OpKind.DepthwiseConv2D, {
            "C": c_in, "C_h": size, "C_w": size, "K": 1,
            "F_h": 3, "F_w": 3, "s": 1, "pad": 1})
        nodes[f"dw{i}_relu"] = relu(c_in, size)
        nodes[f"pw{i}"] = LayerConfig(OpKind.PointwiseConv2D, {
            "C": c_in, "C_h": size, "C_w": size, "K": c_out,
            "F_h": 1, "F_w": 1, "s": 1, "pad": 0})
        nodes[f"pw{i}_relu"] = relu(c_out, size)
        order += [f"dw{i}", f"dw{i}_relu", f"pw{i}", f"pw{i}_relu"]
    nodes["fc"] = LayerConfig(OpKind.FullyConnected, {
        "batch": 1, "in": channels[-1] * size * size, "out": 10})
    order.append("fc")
    return NetworkGraph(nodes=nodes, edges=chain_edges(order),
                        inputs=["stem"], outputs=["fc"])


def mobilenet_with_pool(groups=3, size=8):
    """Same shape of chain, but closed by pooling into the classifier."""
    base = mobilenet_style(groups=groups, size=size)
    nodes = dict(base.nodes)
    last_relu = f"pw{groups - 1}_relu"
    c_last = nodes[last_relu].params["C"]
    nodes.pop("fc")
    nodes["pool"] = LayerConfig(OpKind.AvgPool2D,
                                {"C": c_last, "C_h": size, "C_w": size, "F": size})
    nodes["fc"] = LayerConfig(OpKind.FullyConnected,
                              {"batch": 1, "in": c_last, "out": 10})
    edges = [e for e in base.to_dict()["edges"] if e[1] != "fc"]
    edges += [[last_relu, "pool"], ["pool", "fc"]]
    return NetworkGraph(nodes=nodes, edges=edges, inputs=["stem"], outputs=["fc"])


def _plain_block(nodes, edges, prefix, tail, C, size):
    names = [f"{prefix}_conv0", f"{prefix}_relu0", f"{prefix}_conv1",
             f"{prefix}_add", f"{prefix}_relu1"]
    nodes[names[0]] = conv(C, size, C)
    nodes[names[1]] = relu(C, size)
    nodes[names[2]] = conv(C, size, C)
    nodes[names[3]] = LayerConfig(OpKind.Add, {"C": C, "C_h": size, "C_w": size})
    nodes[names[4]] = relu(C, size)
    edges += chain_edges([tail] + names[:4]) + [[tail, names[3]], [names[3], names[4]]]
    return names[4]


def _down_block(nodes, edges, prefix, tail, C, size, K):
    half = size // 2
    names = [f"{prefix}_conv0", f"{prefix}_relu0", f"{prefix}_conv1",
             f"{prefix}_sc", f"{prefix}_add", f"{prefix}_relu1"]
    nodes[names[0]] = conv(C, size, K, s=2)
    nodes[names[1]] = relu(K, half)
    nodes[names[2]] = conv(K, half, K)
    nodes[names[3]] = conv(C, size, K, F=1, s=2, pad=0)
    nodes[names[4]] = LayerConfig(OpKind.Add, {"C": K, "C_h": half, "C_w": half})
    nodes[names[5]] = relu(K, half)
    edges += chain_edges([tail] + names[:3]) + [
        [tail, names[3]], [names[2], names[4]], [names[3], names[4]],
        [names[4], names[5]],
    ]
    return names[5]


def resnet18_style(size=16, base_channels=16):
    """Stem, four two-block stages (downsampling between stages), classifier."""
    nodes = {"stem": conv(3, size, base_channels),
             "stem_relu": relu(base_channels, size)}
    edges = chain_edges(["stem", "stem_relu"])
    tail = "stem_relu"
    C = base_channels
    tail = _plain_block(nodes, edges, "s1b1", tail, C, size)
    tail = _plain_block(nodes, edges, "s1b2", tail, C, size)
    for stage in (2, 3, 4):
        tail = _down_block(nodes, edges, f"s{stage}b1", tail, C, size, C * 2)
        C, size = C * 2, size // 2
        tail = _plain_block(nodes, edges, f"s{stage}b2", tail, C, size)
    nodes["fc"] = LayerConfig(OpKind.FullyConnected,
                              {"batch": 1, "in": C * size * size, "out": 10})
    edges.append([tail, "fc"])
    return NetworkGraph(nodes=nodes, edges=edges, inputs=["stem"], outputs=["fc"])


def conv_chain(n=3, C=8, size=8):
    """Pattern-free chain: n channel-preserving convolutions."""
    nodes = {f"c{i}": conv(C, size, C) for i in range(n)}
    names = [f"c{i}" for i in range(n)]
    return NetworkGraph(nodes=nodes, edges=chain_edges(names),
                        inputs=[names[0]], outputs=[names[-1]])


def two_dwsep_graph(size=8, c0=8, c1=16, c2=32):
    def group(i, c_in, c_out):
        return {
            f"dw{i}": LayerConfig(OpKind.DepthwiseConv2D, {
                "C": c_in, "C_h": size, "C_w": size, "K": 1,
                "F_h": 3, "F_w": 3, "s": 1, "pad": 1}),
            f"dw{i}_relu": relu(c_in, size),
            f"pw{i}": LayerConfig(OpKind.PointwiseConv2D, {
                "C": c_in, "C_h": size, "C_w": size, "K": c_out,
                "F_h": 1, "F_w": 1, "s": 1, "pad": 0}),
            f"pw{i}_relu": relu(c_out, size),
        }
    nodes = {**group(0, c0, c1), **group(1, c1, c2)}
    order = ["dw0", "dw0_relu", "pw0", "pw0_relu", "dw1", "dw1_relu", "pw1", "pw1_relu"]
    return NetworkGraph(nodes=nodes, edges=chain_edges(order),
                        inputs=["dw0"], outputs=["pw1_relu"])


def single_conv_graph():
    return NetworkGraph(nodes={"c0": conv(8, 8, 8)}, edges=[],
                        inputs=["c0"], outputs=["c0"])


def empty_graph():
    return NetworkGraph(nodes={}, edges=[], inputs=[], outputs=[])


def to_pr(config, widths):
    """Round stepped params up to their width multiple, like the PR mapping."""
    table = widths.get(config.kind, {})
    params = {}
    for name, value in config.params.items():
        w = table.get(name, 1)
        params[name] = -(-value // w) * w if w > 1 else value
    return LayerConfig(config.kind, params)


def exact_models(oracle, graph, widths=DUAL_FU_WIDTHS):
    """One memorizing forest per kind, trained on the PRs of the graph's
    own layers, so estimate_layer reproduces the oracle on every node."""
    by_kind = {}
    for config in graph.nodes.values():
        if config.kind is OpKind.ReLU:
            continue
        pr = to_pr(config, widths)
        by_kind.setdefault(config.kind, {})[pr] = oracle.layer_seconds(pr)
    models = {}
    for kind, prs in by_kind.items():
        samples = list(prs.items())
        if len(samples) == 1:
            samples = samples * 2
        models[kind] = fit(samples, MEMORIZE, widths=widths.get(kind, {}))
    return models
