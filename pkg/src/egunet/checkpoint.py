"""Network checkpoints and training logs.

A checkpoint uses the dataset container layout with its own magic. Arrays
are the unique parameters (``p000``, ``p001``, ...) followed by the
batch-norm running statistics (``s000``, ...), both in declaration order;
the header carries everything needed to rebuild the network skeleton.
"""

import csv
from pathlib import Path

import numpy as np

from . import io
from .network import EGUNet, Widths

MAGIC = "EGUN"
LOG_FIELDS = ("epoch", "loss_e", "loss_ur", "loss_o", "lr")


def save_checkpoint(path, net, train_config=None):
    arrays = {f"p{i:03d}": p.value for i, p in enumerate(net.params())}
    arrays.update({f"s{i:03d}": buf for i, buf in enumerate(net.buffers())})
    return io.write_container(path, "checkpoint", arrays, magic=MAGIC, network=net.config(),
                              trained=bool(net.trained),
                              train=dict(train_config.to_dict()) if train_config else None)


def load_checkpoint(path):
    """Rebuild the network stored at ``path``; aliasing is restored by construction."""
    header, arrays = io.read_container(path, magic=MAGIC)
    cfg = header["network"]
    widths = Widths(tuple(cfg["widths"]["encoder"]), tuple(cfg["widths"]["decoder"]))
    net = EGUNet(cfg["B"], cfg["C"], cfg["variant"], cfg["ablation"], widths, cfg["dropout_keep"],
                 cfg["seed"], cfg.get("bn_stats", "shared"))
    params, buffers = net.params(), net.buffers()
    n_p = sum(name.startswith("p") for name in arrays)
    n_s = sum(name.startswith("s") for name in arrays)
    if (n_p, n_s) != (len(params), len(buffers)):
        raise io.FormatError(f"{path}: checkpoint holds {n_p} params / {n_s} buffers, "
                             f"network needs {len(params)} / {len(buffers)}")
    for i, p in enumerate(params):
        value = arrays[f"p{i:03d}"]
        if value.shape != p.shape:
            raise io.FormatError(f"{path}: parameter {i} has shape {value.shape}, expected {p.shape}")
        p.value[...] = value
    for i, buf in enumerate(buffers):
        buf[...] = arrays[f"s{i:03d}"]
    net.epoch = int(cfg.get("epoch", 0))
    net.trained = bool(header.get("trained", False))
    return net, header


def write_training_log(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for r in records:
            w.writerow([r.epoch] + [repr(float(getattr(r, k))) for k in LOG_FIELDS[1:]])
    return path


def read_training_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in LOG_FIELDS}
