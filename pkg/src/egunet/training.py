"""Joint training of both streams and abundance inference."""

import logging
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .data import HsiCube
from .network import (
    ABLATIONS,
    VARIANTS,
    Widths,
    build_network,
    e_net_backward,
    e_net_forward,
    loss_e,
    loss_ur,
    ur_net_backward,
    ur_net_forward,
)
from .nn import Adam, ConfigError, NonFiniteError

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """A loss became NaN or infinite."""

    def __init__(self, epoch, lr, loss_e, loss_ur):
        super().__init__(f"non-finite loss at epoch {epoch} (lr={lr:.3g}, "
                         f"L_E={loss_e}, L_UR={loss_ur})")
        self.epoch, self.lr = epoch, lr


@dataclass
class TrainConfig:
    epochs: int = 200
    base_lr: float = 0.1
    power: float = 0.99
    dropout_keep: float = 0.9
    seed: int = 0
    variant: str = "pw"
    ablation: str = "full"
    batch_size: int | None = None  # None -> number of bundle signatures

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss_e: float
    loss_ur: float
    loss_o: float
    lr: float


def _pixels(cube):
    data = cube.data if isinstance(cube, HsiCube) else np.asarray(cube, dtype=np.float64)
    if data.ndim != 3:
        raise ConfigError(f"cube must be H x W x B, got {data.shape}")
    return data


def sample_batch(n, batch, rng):
    """Uniform pixel sample without replacement (at least 2 for batch norm)."""
    return rng.choice(n, size=min(max(batch, 2), n), replace=False)


def train(cube, bundle, config=TrainConfig(), widths=Widths(), net=None, callback=None):
    """Train a network on ``cube`` guided by ``bundle``.

    One epoch is one optimizer step: the endmember stream sees the full
    bundle (``N_e`` signatures) and the ur stream sees a uniform sample of
    ``N_e`` pixels (``pw``) or the whole image (``ss``). Shared blocks
    receive the sum of both streams' gradients.

    Returns ``(net, records)`` with one :class:`EpochRecord` per epoch.
    """
    data = _pixels(cube)
    H, W, B = data.shape
    signatures = np.asarray(bundle.signatures, dtype=np.float64)
    labels = np.asarray(bundle.labels, dtype=np.float64)
    C = labels.shape[1]
    if signatures.shape[1] != B:
        raise ConfigError(f"bundle has {signatures.shape[1]} bands, cube has {B}")
    if net is None:
        net = build_network(B, C, config.variant, config.ablation, widths, config.dropout_keep,
                            config.seed)
    elif (net.variant, net.ablation) != (config.variant, config.ablation):
        raise ConfigError("network variant/ablation differ from the training config")

    use_e = config.ablation != "ur_only"
    use_ur = config.ablation != "e_only"
    pixels = data.reshape(-1, B)
    batch = config.batch_size or signatures.shape[0]
    params = (net.params() if use_ur and use_e else net.ur_params() if use_ur else net.e_params())
    opt = Adam(params, base_lr=config.base_lr, power=config.power,
               max_iter=config.epochs)
    rng = np.random.default_rng([config.seed, 2])

    records = []
    for epoch in range(1, config.epochs + 1):
        lr = opt.lr
        opt.zero_grad()
        le = lu = 0.0
        try:
            if use_e:
                pred = e_net_forward(signatures, net, "train")
                le, g = loss_e(pred, labels, return_grad=True)
                e_net_backward(net, g)
            if use_ur:
                if config.variant == "pw":
                    X = pixels[sample_batch(len(pixels), batch, rng)]
                else:
                    X = data
                _, X_hat = ur_net_forward(X, net, "train")
                lu, g = loss_ur(X, X_hat, return_grad=True)
                ur_net_backward(net, g)
        except NonFiniteError as exc:
            raise TrainingDiverged(epoch, lr, le, lu) from exc
        if not (math.isfinite(le) and math.isfinite(lu)):
            raise TrainingDiverged(epoch, lr, le, lu)
        opt.step()
        records.append(EpochRecord(epoch, le, lu, le + lu, lr))
        net.epoch = epoch
        if callback is not None:
            callback(records[-1])
        if epoch == 1 or epoch % 50 == 0:
            log.debug("epoch %d L_E=%.5f L_UR=%.6f lr=%.4g", epoch, le, lu, lr)
    net.trained = True
    return net, records


def infer_abundances(cube, net):
    """Per-pixel abundances (H x W x C) from the trained encoder in inference mode.

    The ur encoder is used, except for the ``e_only`` ablation where the
    endmember stream is applied pixel by pixel.
    """
    if not net.trained:
        warnings.warn("inferring abundances with an untrained network", RuntimeWarning, stacklevel=2)
    data = _pixels(cube)
    H, W, B = data.shape
    if net.ablation == "e_only":
        return e_net_forward(data.reshape(-1, B), net, "infer").reshape(H, W, -1)
    if net.variant == "pw":
        A, _ = ur_net_forward(data.reshape(-1, B), net, "infer")
        return A.reshape(H, W, -1)
    A, _ = ur_net_forward(data, net, "infer")
    return A


def reconstruct(cube, net):
    data = _pixels(cube)
    H, W, B = data.shape
    if net.variant == "pw":
        _, Xh = ur_net_forward(data.reshape(-1, B), net, "infer")
        return Xh.reshape(H, W, B)
    return ur_net_forward(data, net, "infer")[1]
