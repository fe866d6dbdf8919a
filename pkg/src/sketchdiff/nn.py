"""Small sequential networks: dense, strided 2-D convolution, pointwise
nonlinearities, and a time/class conditioning injection layer.

A Network is an ordered list of layers plus a named parameter collection.
The graph is rebuilt on every forward pass; parameters are persistent leaves.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import GradNode, ShapeError

TIME_EMBED_DIM = 32


def sinusoidal_embedding(t, dim: int = TIME_EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (len(t), dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _he_init(rng, shape, fan_in):
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


def orthogonal_rows(rng, rows: int, cols: int) -> np.ndarray:
    """Matrix with orthonormal rows (rows <= cols required)."""
    if rows > cols:
        raise ValueError(f"orthogonal_rows: need rows <= cols, got {rows} > {cols}")
    a = rng.normal(size=(cols, rows))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q.T


class Dense:
    def __init__(self, in_dim, out_dim, *, rng=None, name="dense", init=None):
        self.in_dim, self.out_dim, self.name = in_dim, out_dim, name
        w = init if init is not None else _he_init(rng, (in_dim, out_dim), in_dim)
        self.w = ad.parameter(w, f"{name}.w")
        self.b = ad.parameter(np.zeros(out_dim), f"{name}.b")

    def __call__(self, x: GradNode, ctx) -> GradNode:
        if x.value.ndim != 2 or x.value.shape[1] != self.in_dim:
            raise ShapeError(
                f"layer {self.name}: expected input (batch, {self.in_dim}), got {x.value.shape}"
            )
        return ad.add(ad.matmul(x, self.w), self.b)

    def params(self):
        return [self.w, self.b]

    def spec(self):
        return {"kind": "dense", "in_dim": self.in_dim, "out_dim": self.out_dim, "name": self.name}


class Conv2d:
    def __init__(self, in_ch, out_ch, ksize, *, stride=1, pad=0, rng=None, name="conv", init=None):
        self.in_ch, self.out_ch, self.ksize = in_ch, out_ch, ksize
        self.stride, self.pad, self.name = stride, pad, name
        k = init if init is not None else _he_init(rng, (out_ch, in_ch, ksize, ksize), in_ch * ksize * ksize)
        self.k = ad.parameter(k, f"{name}.k")
        self.b = ad.parameter(np.zeros((1, out_ch, 1, 1)), f"{name}.b")

    def __call__(self, x: GradNode, ctx) -> GradNode:
        if x.value.ndim != 4 or x.value.shape[1] != self.in_ch:
            raise ShapeError(
                f"layer {self.name}: expected input (batch, {self.in_ch}, H, W), got {x.value.shape}"
            )
        return ad.add(ad.conv2d(x, self.k, stride=self.stride, pad=self.pad), self.b)

    def params(self):
        return [self.k, self.b]

    def spec(self):
        return {
            "kind": "conv2d",
            "in_ch": self.in_ch,
            "out_ch": self.out_ch,
            "ksize": self.ksize,
            "stride": self.stride,
            "pad": self.pad,
            "name": self.name,
        }


class Activation:
    FUNCS = {"relu": ad.relu, "tanh": ad.tanh}

    def __init__(self, kind: str, name="act"):
        if kind not in self.FUNCS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind, self.name = kind, name

    def __call__(self, x: GradNode, ctx) -> GradNode:
        return self.FUNCS[self.kind](x)

    def params(self):
        return []

    def spec(self):
        return {"kind": "activation", "fn": self.kind, "name": self.name}


class Inject:
    """Adds a learned projection of the sinusoidal time embedding, and
    optionally a learned class embedding, to every spatial position."""

    def __init__(self, channels, *, num_classes=None, rng=None, name="inject", init=None, class_init=None):
        self.channels, self.num_classes, self.name = channels, num_classes, name
        w = init if init is not None else _he_init(rng, (TIME_EMBED_DIM, channels), TIME_EMBED_DIM)
        self.w = ad.parameter(w, f"{name}.time_w")
        self.b = ad.parameter(np.zeros(channels), f"{name}.time_b")
        if num_classes is not None:
            tbl = class_init if class_init is not None else rng.normal(0.0, 0.1, (num_classes, channels))
            self.table = ad.parameter(tbl, f"{name}.class_table")
        else:
            self.table = None

    def __call__(self, x: GradNode, ctx) -> GradNode:
        if x.value.ndim != 4 or x.value.shape[1] != self.channels:
            raise ShapeError(
                f"layer {self.name}: expected input (batch, {self.channels}, H, W), got {x.value.shape}"
            )
        t = ctx.get("t")
        if t is None:
            raise ValueError(f"layer {self.name}: a time index is required for this network")
        b = x.value.shape[0]
        t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.int64)), (b,))
        emb = ad.constant(sinusoidal_embedding(t))
        cond = ad.add(ad.matmul(emb, self.w), self.b)
        y = ctx.get("y")
        if self.table is not None and y is not None:
            y = np.broadcast_to(np.atleast_1d(np.asarray(y, dtype=np.intp)), (b,))
            if y.min() < 0 or y.max() >= self.num_classes:
                raise ValueError(f"layer {self.name}: class label out of range 0..{self.num_classes - 1}")
            cond = ad.add(cond, ad.gather_rows(self.table, y))
        return ad.add(x, ad.reshape(cond, (b, self.channels, 1, 1)))

    def params(self):
        ps = [self.w, self.b]
        if self.table is not None:
            ps.append(self.table)
        return ps

    def spec(self):
        return {"kind": "inject", "channels": self.channels, "num_classes": self.num_classes, "name": self.name}


class Flatten:
    def __init__(self, name="flatten"):
        self.name = name

    def __call__(self, x: GradNode, ctx) -> GradNode:
        b = x.value.shape[0]
        return ad.reshape(x, (b, int(np.prod(x.value.shape[1:]))))

    def params(self):
        return []

    def spec(self):
        return {"kind": "flatten", "name": self.name}


_LAYER_KINDS = {"dense", "conv2d", "activation", "inject", "flatten"}


class Network:
    """An ordered stack of layers over a named float64 parameter collection."""

    def __init__(self, layers, meta=None):
        self.layers = list(layers)
        self.meta = dict(meta or {})
        names = [p.name for layer in self.layers for p in layer.params()]
        if len(names) != len(set(names)):
            raise ValueError("duplicate parameter names in network")

    def params(self) -> dict:
        out = {}
        for layer in self.layers:
            for p in layer.params():
                out[p.name] = p
        return out

    def num_params(self) -> int:
        return sum(p.value.size for p in self.params().values())

    def forward(self, x, t=None, y=None, upto=None) -> GradNode:
        node = ad.as_node(x)
        ctx = {"t": t, "y": y}
        layers = self.layers if upto is None else self.layers[:upto]
        for layer in layers:
            node = layer(node, ctx)
        if not np.all(np.isfinite(node.value)):
            raise FloatingPointError("network forward produced non-finite values")
        return node

    def clone(self) -> "Network":
        net = Network.from_spec(self.arch_spec(), self.meta)
        theirs = net.params()
        for name, p in self.params().items():
            theirs[name].value = p.value.copy()
        return net

    def freeze(self):
        for p in self.params().values():
            p.requires_grad = False
        return self

    def param_digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.params()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params()[name].value).tobytes())
        return h.hexdigest()

    def arch_spec(self) -> list:
        return [layer.spec() for layer in self.layers]

    @staticmethod
    def from_spec(spec: list, meta=None) -> "Network":
        rng = np.random.default_rng(0)  # placeholder weights, overwritten on load
        layers = []
        for s in spec:
            kind = s["kind"]
            if kind not in _LAYER_KINDS:
                raise ValueError(f"unknown layer kind {kind!r}")
            if kind == "dense":
                layers.append(Dense(s["in_dim"], s["out_dim"], rng=rng, name=s["name"]))
            elif kind == "conv2d":
                layers.append(
                    Conv2d(s["in_ch"], s["out_ch"], s["ksize"], stride=s["stride"], pad=s["pad"], rng=rng, name=s["name"])
                )
            elif kind == "activation":
                layers.append(Activation(s["fn"], name=s["name"]))
            elif kind == "inject":
                layers.append(Inject(s["channels"], num_classes=s["num_classes"], rng=rng, name=s["name"]))
            elif kind == "flatten":
                layers.append(Flatten(name=s["name"]))
        return Network(layers, meta)


def forward(net: Network, x, t=None, y=None) -> GradNode:
    return net.forward(x, t=t, y=y)


def make_eps_net(seed: int, *, channels: int = 16, num_classes=None) -> Network:
    """Noise-prediction network for 32x32 single-channel images."""
    rng = np.random.default_rng(seed)
    c = channels
    layers = [
        Conv2d(1, c, 3, pad=1, rng=rng, name="eps0"),
        Inject(c, num_classes=num_classes, rng=rng, name="eps_cond"),
        Activation("relu", name="eps_a0"),
        Conv2d(c, c, 3, pad=1, rng=rng, name="eps1"),
        Activation("relu", name="eps_a1"),
        Conv2d(c, c, 3, pad=1, rng=rng, name="eps2"),
        Activation("relu", name="eps_a2"),
        Conv2d(c, 1, 3, pad=1, rng=rng, name="eps3"),
    ]
    return Network(layers, meta={"kind": "eps", "channels": c, "num_classes": num_classes})


def make_classifier(seed: int, *, num_classes: int = 4, feature_dim: int = 64) -> Network:
    """Noise-aware shape classifier; the tanh penultimate layer doubles as
    the 64-dim image feature embedding."""
    rng = np.random.default_rng(seed)
    layers = [
        Conv2d(1, 16, 3, stride=2, pad=1, rng=rng, name="clf0"),
        Inject(16, rng=rng, name="clf_cond"),
        Activation("relu", name="clf_a0"),
        Conv2d(16, 32, 3, stride=2, pad=1, rng=rng, name="clf1"),
        Activation("relu", name="clf_a1"),
        Conv2d(32, 32, 3, stride=2, pad=1, rng=rng, name="clf2"),
        Activation("relu", name="clf_a2"),
        Flatten(name="clf_flat"),
        Dense(32 * 4 * 4, feature_dim, rng=rng, name="clf_fc"),
        Activation("tanh", name="clf_feat"),
        Dense(feature_dim, num_classes, rng=rng, name="clf_out"),
    ]
    return Network(layers, meta={"kind": "classifier", "num_classes": num_classes, "feature_dim": feature_dim})
