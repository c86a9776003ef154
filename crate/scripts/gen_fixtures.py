#!/usr/bin/env python3
"""Regenerate the model and device fixtures under crates/core/fixtures."""

import json
import os
import sys

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "crates", "core", "fixtures")


class Builder:
    def __init__(self, name, shape, word_length=8):
        self.name = name
        self.shape = shape
        self.word_length = word_length
        self.vertices = []
        self.edges = []
        self.n = 0
        self.input = None

    def add(self, op, kind, srcs, **attrs):
        vid = f"{op}_{self.n}"
        self.n += 1
        v = {"id": vid, "kind": kind}
        if attrs:
            v["attrs"] = attrs
        self.vertices.append(v)
        if self.input is None:
            assert not srcs
            self.input = vid
        for slot, s in enumerate(srcs):
            self.edges.append({"src": s, "dst": vid, "dst_slot": slot})
        return vid

    def conv(self, src, filters, kernel=3, stride=1, padding=None, groups=1, fn=None):
        if padding is None:
            padding = [k // 2 for k in kernel] if isinstance(kernel, list) else kernel // 2
        a = {"kernel": kernel, "stride": stride, "padding": padding, "filters": filters}
        if groups != 1:
            a["groups"] = groups
        if fn:
            a["fn"] = fn
        return self.add("Conv", "Conv", [] if src is None else [src], **a)

    def act(self, src, fn="relu", op="Relu"):
        return self.add(op, "Relu", [src], fn=fn)

    def pool(self, src, kernel=2, stride=None):
        return self.add("MaxPool", "Pool", [src], kernel=kernel, stride=kernel if stride is None else stride)

    def up(self, src, scale=2):
        return self.add("Upsample", "Upsample", [src], scale=scale)

    def cat(self, srcs):
        return self.add("Concat", "Concat", srcs)

    def add_(self, srcs, fn=None, op="Add"):
        return self.add(op, "Add", srcs, **({"fn": fn} if fn else {}))

    def gpool(self, src):
        return self.add("GlobalAveragePool", "GlobalPool", [src])

    def doc(self):
        return {
            "name": self.name,
            "input": {"id": self.input, "shape": self.shape, "word_length": self.word_length},
            "vertices": self.vertices,
            "edges": self.edges,
        }

    def counts(self):
        return len(self.vertices), sum(1 for v in self.vertices if v["kind"] == "Conv")


def unet():
    b = Builder("unet", [3, 368, 480])
    widths = [64, 128, 256, 512, 1024]
    skips = []
    x = None
    for i, w in enumerate(widths):
        x = b.act(b.conv(x, w))
        x = b.act(b.conv(x, w))
        if i < 4:
            skips.append(x)
            x = b.pool(x)
    for w, skip in zip(reversed(widths[:4]), reversed(skips)):
        x = b.conv(b.up(x), w, kernel=1)
        x = b.cat([skip, x])
        x = b.act(b.conv(x, w))
        x = b.act(b.conv(x, w))
    b.conv(x, 32, kernel=1)
    return b


def unet3d():
    b = Builder("unet3d", [4, 155, 240, 240])
    widths = [16, 32, 64, 128, 256]
    skips = []
    x = None
    for i, w in enumerate(widths):
        a = b.act(b.conv(x, w))
        x = b.act(b.conv(a, w))
        if i >= 3:
            x = b.add_([a, x])
        if i < 4:
            skips.append(x)
            x = b.pool(x, kernel=[1, 2, 2])
    for w, skip in zip(reversed(widths[:4]), reversed(skips)):
        x = b.cat([skip, b.up(x, scale=[1, 2, 2])])
        x = b.act(b.conv(x, w))
        x = b.act(b.conv(x, w))
    b.act(b.conv(x, 4, kernel=1), fn="sigmoid", op="Sigmoid")
    return b


def yolov8n():
    b = Builder("yolov8n", [3, 640, 640])

    # activations after stride, SPPF and C2f projection convs are explicit vertices;
    # bottleneck and head convs carry theirs fused
    def conv(x, c, k=3, s=1, explicit=True):
        y = b.conv(x, c, kernel=k, stride=s, fn=None if explicit else "silu")
        return b.act(y, fn="silu", op="Silu") if explicit else y

    def c2f(x, c, n, shortcut):
        y = conv(x, c, 1)
        parts = [y]
        h = y
        for _ in range(n):
            t = conv(conv(h, c, explicit=False), c, explicit=False)
            h = b.add_([h, t]) if shortcut else t
            parts.append(h)
        return conv(b.cat(parts), c, 1)

    def sppf(x, c):
        y = conv(x, c // 2, 1)
        pools = [y]
        for _ in range(3):
            pools.append(b.add("MaxPool", "Pool", [pools[-1]], kernel=5, stride=1, padding=2))
        return conv(b.cat(pools), c, 1)

    x = conv(None, 16, 3, 2)
    x = conv(x, 32, 3, 2)
    x = c2f(x, 32, 1, True)
    x = conv(x, 64, 3, 2)
    p3 = x = c2f(x, 64, 2, True)
    x = conv(x, 128, 3, 2)
    p4 = x = c2f(x, 128, 2, True)
    x = conv(x, 256, 3, 2)
    x = c2f(x, 256, 1, True)
    p5 = x = sppf(x, 256)

    h4 = x = c2f(b.cat([b.up(x), p4]), 128, 1, False)
    o3 = x = c2f(b.cat([b.up(x), p3]), 64, 1, False)
    o4 = x = c2f(b.cat([conv(x, 64, 3, 2), h4]), 128, 1, False)
    o5 = c2f(b.cat([conv(x, 128, 3, 2), p5]), 256, 1, False)

    for o in [o3, o4, o5]:
        box = b.conv(conv(conv(o, 64, explicit=False), 64, explicit=False), 64, kernel=1)
        cls = b.conv(conv(conv(o, 80, explicit=False), 80, explicit=False), 80, kernel=1)
        b.cat([box, cls])
    return b


def x3dm():
    b = Builder("x3dm", [3, 16, 256, 256])
    x = b.conv(None, 24, kernel=[1, 3, 3], stride=[1, 2, 2], padding=[0, 1, 1])
    x = b.conv(x, 24, kernel=[5, 1, 1], padding=[2, 0, 0], groups=24)
    x = b.act(b.add("BatchNormalization", "Relu", [x], fn="batchnorm"))
    # (width, inner width, blocks, squeeze-excite width)
    stages = [(24, 54, 3, 8), (48, 108, 5, 8), (96, 216, 11, 16), (192, 432, 7, 32)]

    def bn(v):
        return b.add("BatchNormalization", "Relu", [v], fn="batchnorm")

    size = [16, 128, 128]
    for width, inner, blocks, se_c in stages:
        size = [16, size[1] // 2, size[2] // 2]
        for k in range(blocks):
            first = k == 0
            stride = [1, 2, 2] if first else 1
            shortcut = bn(b.conv(x, width, kernel=1, stride=stride)) if first else x
            y = b.act(bn(b.conv(x, inner, kernel=1)))
            y = bn(b.conv(y, inner, kernel=3, stride=stride, groups=inner))
            se = k % 2 == 0
            if se:
                g = b.gpool(y)
                g = b.act(b.conv(g, se_c, kernel=1))
                g = b.act(b.conv(g, inner, kernel=1), fn="sigmoid", op="Sigmoid")
                g = b.up(g, scale=list(size))
                y = b.add_([y, g], fn="mul", op="Mul")
                s = b.act(y, fn="sigmoid", op="Sigmoid")
                y = b.add_([y, s], fn="mul", op="Mul")
            else:
                y = b.act(y, fn="swish", op="Swish")
            y = bn(b.conv(y, width, kernel=1))
            x = b.act(b.add_([shortcut, y]))
    x = b.act(bn(b.conv(x, 432, kernel=1)))
    b.gpool(x)
    return b


def linear():
    b = Builder("linear", [8, 16, 16])
    x = b.conv(None, 8, kernel=3)
    x = b.act(x)
    x = b.conv(x, 8, kernel=3)
    x = b.act(x)
    x = b.pool(x)
    b.act(x)
    return b


def diamond():
    b = Builder("diamond", [8, 16, 16])
    a = b.conv(None, 8, kernel=1)
    l = b.conv(a, 8, kernel=3)
    r = b.act(a)
    b.add_([l, r])
    return b


def long_skip():
    b = Builder("long_skip", [8, 16, 16])
    x = b.act(b.conv(None, 8, kernel=3))
    s = x
    x = b.pool(x)
    x = b.act(b.conv(x, 16, kernel=3))
    x = b.act(b.conv(x, 16, kernel=3))
    x = b.conv(b.up(x), 8, kernel=1)
    x = b.cat([s, x])
    b.conv(x, 4, kernel=1)
    return b


MODELS = {
    "unet": (unet, 53, 23),
    "unet3d": (unet3d, 52, 19),
    "yolov8n": (yolov8n, 115, 63),
    "x3dm": (x3dm, 396, 115),
    "linear": (linear, None, None),
    "diamond": (diamond, None, None),
    "long_skip": (long_skip, None, None),
}

VU9P = {"dsp": 6840, "lut": 1182240, "ff": 2364480, "bram18k": 4320, "uram": 960}
COMMON = {"reconfig_time_s": 0.06, "dma_burst_words": 64, "dma_latency_cycles": 512, "alpha_random": 2.0}
DEVICES = {
    "zcu102": dict(freq_mhz=200.0, dsp=2520, lut=274080, ff=548160, bram18k=1824, uram=0,
                   bandwidth_gbps=153.6, max_dma_ports=2),
    "u200": dict(freq_mhz=250.0, **VU9P, bandwidth_gbps=614.4, max_dma_ports=4),
    "vcu1525": dict(freq_mhz=200.0, **VU9P, bandwidth_gbps=614.4, max_dma_ports=4),
    "vcu118": dict(freq_mhz=250.0, **VU9P, bandwidth_gbps=307.2, max_dma_ports=2),
}


def main():
    os.makedirs(os.path.join(ROOT, "models"), exist_ok=True)
    os.makedirs(os.path.join(ROOT, "devices"), exist_ok=True)
    for name, (fn, layers, convs) in MODELS.items():
        b = fn()
        got = b.counts()
        if layers is not None and got != (layers, convs):
            sys.exit(f"{name}: {got[0]} layers / {got[1]} conv, expected {layers} / {convs}")
        with open(os.path.join(ROOT, "models", f"{name}.json"), "w") as f:
            json.dump(b.doc(), f, indent=1)
            f.write("\n")
        print(f"{name}: {got[0]} layers, {got[1]} conv")
    for name, d in DEVICES.items():
        doc = {"name": name, **d, **COMMON}
        with open(os.path.join(ROOT, "devices", f"{name}.json"), "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")


if __name__ == "__main__":
    main()
