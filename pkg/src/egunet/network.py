"""Two-stream unmixing network: endmember stream plus unmixing/reconstruction stream.

The endmember stream (``e``) maps pseudo-pure signatures to one-hot-like
abundances. The unmixing/reconstruction stream (``ur``) encodes pixels to
abundances and decodes them back to spectra. Encoder blocks listed in
``sharing`` are built from the *same* :class:`~egunet.nn.Param` objects in
both streams, so they stay bit-identical through training and receive the
sum of both streams' gradients.

Two variants:

``pw``
    Pixel-wise, fully connected. All four encoder blocks are shared.
``ss``
    Spatial-spectral. The ur stream takes the whole image through 5x5 and
    3x3 convolutions with average pooling; only blocks 3 and 4 are shared.
"""

from dataclasses import dataclass

import numpy as np

from .nn import (
    Activation,
    AvgPool2D,
    BatchNorm,
    ConfigError,
    Conv2D,
    Deconv2D,
    Dense,
    Dropout,
    Sequential,
    ShapeError,
)

VARIANTS = ("pw", "ss")
ABLATIONS = ("full", "ur_only", "e_only")
LOSS_EPS = 1e-12


@dataclass(frozen=True)
class Widths:
    encoder: tuple = (128, 64)
    decoder: tuple = (64, 128, 192)


class EGUNet:
    """Parameters and layer stacks of both streams.

    Attributes
    ----------
    e_blocks, ur_encoder, ur_decoder : list of Sequential
        Four blocks each.
    sharing : list of (int, int)
        1-based (endmember block, ur block) pairs that alias parameters.
    bn_stats : {"shared", "stream"}
        Whether the batch-norm layers of shared blocks also share their
        running statistics (one buffer updated by both streams) or keep one
        buffer per stream. With per-stream buffers the ur encoder is
        evaluated at inference under statistics the endmember stream never
        saw, which undoes most of the guidance.
    """

    def __init__(self, bands, classes, variant="pw", ablation="full", widths=Widths(),
                 dropout_keep=0.9, seed=0, bn_stats="shared"):
        if variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {ablation!r}")
        if not (bands > classes >= 2):
            raise ConfigError(f"need bands > classes >= 2, got B={bands}, C={classes}")
        self.bands, self.classes = int(bands), int(classes)
        self.variant, self.ablation = variant, ablation
        self.widths = widths
        self.dropout_keep = dropout_keep
        self.seed = seed
        if bn_stats not in ("shared", "stream"):
            raise ConfigError(f"bn_stats must be 'shared' or 'stream', got {bn_stats!r}")
        self.bn_stats = bn_stats
        self.epoch = 0
        self.trained = False
        init_rng = np.random.default_rng([seed, 0])
        self.dropout_rng = np.random.default_rng([seed, 1])
        if variant == "pw":
            self._build_pw(init_rng)
        else:
            self._build_ss(init_rng)
        # both encoders read raw spectra; no gradient is needed below them
        self.e_blocks[0].layers[0].input_grad = False
        self.ur_encoder[0].layers[0].input_grad = False

    # -- construction -------------------------------------------------------

    def _shared_blocks(self):
        if self.ablation == "ur_only":
            return ()
        return (1, 2, 3, 4) if self.variant == "pw" else (3, 4)

    def _running(self, bn):
        if bn is None or self.bn_stats == "stream":
            return None
        return bn.running_mean, bn.running_var

    def _dropout(self):
        return Dropout(self.dropout_keep, self.dropout_rng)

    def _build_pw(self, rng):
        B, C = self.bands, self.classes
        h1, h2 = self.widths.encoder
        plan = [(B, h1, "tanh", True), (h1, h2, "tanh", False), (h2, C, "relu", False)]

        def encoder(share_from=None):
            blocks = []
            for i, (fi, fo, act, drop) in enumerate(plan):
                src = share_from[i].layers if share_from else None
                dense = Dense(fi, fo, rng, *(src[0].params() if src else ()))
                bn = BatchNorm(fo, gamma=src[1].gamma if src else None,
                               beta=src[1].beta if src else None,
                               running=self._running(src[1] if src else None))
                layers = [dense, bn] + ([self._dropout()] if drop else []) + [Activation(act)]
                blocks.append(Sequential(layers))
            src = share_from[3].layers[0].params() if share_from else ()
            blocks.append(Sequential([Dense(C, C, rng, *src), Activation("softmax")]))
            return blocks

        self.e_blocks = encoder()
        shared = self._shared_blocks()
        if shared:
            self.ur_encoder = encoder(share_from=self.e_blocks)
        else:
            self.ur_encoder = encoder()
        self.sharing = [(i, i) for i in shared]
        dims = [C, *self.widths.decoder, B]
        self.ur_decoder = [
            Sequential([Dense(dims[i], dims[i + 1], rng), BatchNorm(dims[i + 1]), Activation("sigmoid")])
            for i in range(4)
        ]

    def _build_ss(self, rng):
        B, C = self.bands, self.classes
        h1, h2 = self.widths.encoder
        self.e_blocks = [
            Sequential([Conv2D(1, 1, B, h1, rng), BatchNorm(h1), self._dropout(), Activation("tanh")]),
            Sequential([Conv2D(1, 1, h1, h2, rng), BatchNorm(h2), Activation("tanh")]),
            Sequential([Conv2D(1, 1, h2, C, rng), BatchNorm(C), Activation("relu")]),
            Sequential([Conv2D(1, 1, C, C, rng), Activation("softmax")]),
        ]
        shared = self._shared_blocks()
        self.sharing = [(i, i) for i in shared]
        e3, e4 = self.e_blocks[2].layers, self.e_blocks[3].layers
        conv3 = Conv2D(1, 1, h2, C, rng, *(e3[0].params() if shared else ()))
        bn3 = BatchNorm(C, gamma=e3[1].gamma if shared else None, beta=e3[1].beta if shared else None,
                        running=self._running(e3[1] if shared else None))
        # 1x1 deconv filter (1, 1, C, C) aliases the 1x1 conv filter of the same shape
        deconv4 = Deconv2D(1, 1, C, C, rng, *(e4[0].params() if shared else ()))
        self.ur_encoder = [
            Sequential([Conv2D(5, 5, B, h1, rng), BatchNorm(h1), self._dropout(), AvgPool2D(),
                        Activation("tanh")]),
            Sequential([Conv2D(3, 3, h1, h2, rng), BatchNorm(h2), AvgPool2D(), Activation("tanh")]),
            Sequential([conv3, bn3, AvgPool2D(), Activation("relu")]),
            Sequential([deconv4, Activation("softmax")]),
        ]
        d1, d2, d3 = self.widths.decoder
        plan = [(1, C, d1), (1, d1, d2), (3, d2, d3), (5, d3, B)]
        self.ur_decoder = [
            Sequential([Deconv2D(k, k, ci, co, rng), BatchNorm(co), Activation("sigmoid")])
            for k, ci, co in plan
        ]

    # -- parameter views ----------------------------------------------------

    def params(self):
        """Unique parameters in declaration order (e blocks, ur encoder, ur decoder)."""
        seen, out = set(), []
        for block in self.e_blocks + self.ur_encoder + self.ur_decoder:
            for p in block.params():
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    def e_params(self):
        return Sequential(self.e_blocks).params()

    def ur_params(self):
        return Sequential(self.ur_encoder + self.ur_decoder).params()

    def batchnorms(self):
        return [layer for block in self.e_blocks + self.ur_encoder + self.ur_decoder
                for layer in block.layers if isinstance(layer, BatchNorm)]

    def aliased_pairs(self):
        """(e param, ur param) pairs for every shared block, in block order."""
        pairs = []
        for ei, ui in self.sharing:
            pairs.extend(zip(self.e_blocks[ei - 1].params(), self.ur_encoder[ui - 1].params()))
        return pairs

    def buffers(self):
        """Unique batch-norm running statistics in declaration order."""
        seen, out = set(), []
        for bn in self.batchnorms():
            for buf in (bn.running_mean, bn.running_var):
                if id(buf) not in seen:
                    seen.add(id(buf))
                    out.append(buf)
        return out

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def reseed_dropout(self, seed):
        """Reset the dropout stream (all dropout layers draw from one generator)."""
        self.dropout_rng = np.random.default_rng(seed)
        for block in self.e_blocks + self.ur_encoder:
            for layer in block.layers:
                if isinstance(layer, Dropout):
                    layer.rng = self.dropout_rng

    def n_parameters(self, which="all"):
        plist = {"all": self.params, "e": self.e_params, "ur": self.ur_params}[which]()
        return int(sum(p.value.size for p in plist))

    def config(self):
        return {
            "variant": self.variant,
            "ablation": self.ablation,
            "B": self.bands,
            "C": self.classes,
            "widths": {"encoder": list(self.widths.encoder), "decoder": list(self.widths.decoder)},
            "dropout_keep": self.dropout_keep,
            "sharing": [list(p) for p in self.sharing],
            "bn_stats": self.bn_stats,
            "epoch": self.epoch,
            "seed": self.seed,
        }


def build_network(bands, classes, variant="pw", ablation="full", widths=Widths(), dropout_keep=0.9,
                  seed=0, bn_stats="shared"):
    return EGUNet(bands, classes, variant, ablation, widths, dropout_keep, seed, bn_stats)


# ---------------------------------------------------------------------------
# forward / backward


def _run(blocks, x, train):
    for block in blocks:
        x = block.forward(x, train)
    return x


def _run_back(blocks, g):
    for block in reversed(blocks):
        g = block.backward(g)
        if g is None:
            break
    return g


def _mode(mode):
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    return mode == "train"


def e_net_forward(signatures, net, mode="infer"):
    """Abundances predicted by the endmember stream for ``N_e x B`` signatures."""
    x = np.asarray(signatures, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.bands:
        raise ShapeError(f"expected N_e x {net.bands} signatures, got {x.shape}")
    train = _mode(mode)
    if net.variant == "ss":
        return _run(net.e_blocks, x[:, None, None, :], train)[:, 0, 0, :]
    return _run(net.e_blocks, x, train)


def e_net_backward(net, grad_pred):
    g = np.asarray(grad_pred, dtype=np.float64)
    if net.variant == "ss":
        g = g[:, None, None, :]
    _run_back(net.e_blocks, g)


def ur_net_forward(X, net, mode="infer"):
    """Encode to abundances and decode to reconstructed spectra.

    ``pw`` takes an ``N x B`` pixel matrix. ``ss`` takes one whole image,
    ``H x W x B`` (or ``1 x H x W x B``), and returns maps of the same
    spatial size.
    """
    X = np.asarray(X, dtype=np.float64)
    train = _mode(mode)
    if net.variant == "pw":
        if X.ndim != 2 or X.shape[1] != net.bands:
            raise ShapeError(f"pw stream expects N x {net.bands} pixels, got {X.shape}")
        A = _run(net.ur_encoder, X, train)
        return A, _run(net.ur_decoder, A, train)
    if X.ndim == 4:
        if X.shape[0] != 1:
            raise ShapeError("ss stream takes a single whole image")
        X = X[0]
    if X.ndim != 3 or X.shape[2] != net.bands:
        raise ShapeError(f"ss stream expects H x W x {net.bands}, got {X.shape}")
    A = _run(net.ur_encoder, X[None], train)
    Xh = _run(net.ur_decoder, A, train)
    return A[0], Xh[0]


def ur_net_backward(net, grad_xhat, grad_abund=None):
    g = np.asarray(grad_xhat, dtype=np.float64)
    if net.variant == "ss":
        g = g[None]
    ga = _run_back(net.ur_decoder, g)
    if grad_abund is not None:
        ga = ga + (grad_abund[None] if net.variant == "ss" else grad_abund)
    _run_back(net.ur_encoder, ga)


# ---------------------------------------------------------------------------
# losses


def loss_e(pred, labels, return_grad=False):
    """Binary cross-entropy summed over classes, averaged over signatures.

    Predictions are clamped to ``[1e-12, 1 - 1e-12]``; the gradient is zero
    where the clamp is active.
    """
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if pred.shape != labels.shape:
        raise ShapeError(f"pred {pred.shape} vs labels {labels.shape}")
    n = pred.shape[0]
    p = np.clip(pred, LOSS_EPS, 1.0 - LOSS_EPS)
    loss = -np.sum(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)) / n
    if not return_grad:
        return float(loss)
    inside = (pred > LOSS_EPS) & (pred < 1.0 - LOSS_EPS)
    grad = -(labels / p - (1.0 - labels) / (1.0 - p)) / n * inside
    return float(loss), grad


def loss_ur(X, X_hat, return_grad=False):
    """Squared reconstruction error normalised by the number of entries (N*B)."""
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape:
        raise ShapeError(f"X {X.shape} vs X_hat {X_hat.shape}")
    diff = X_hat - X
    loss = float(np.mean(diff * diff))
    if not return_grad:
        return loss
    return loss, 2.0 * diff / diff.size
