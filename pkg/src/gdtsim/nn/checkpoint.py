"""Flat binary parameter checkpoints.

Layout (little endian)::

    b"GDTN"  uint32 n_networks
    per network: uint32 n_sizes, uint32 sizes[n_sizes],
                 then float64 W_0 (row-major), b_0, W_1, b_1, ...
"""

import struct

import numpy as np

from ..errors import ShapeError
from .dense import DenseNetwork

MAGIC = b"GDTN"


def save_networks(path, networks):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(networks)))
        for net in networks:
            fh.write(struct.pack("<I", len(net.sizes)))
            fh.write(struct.pack(f"<{len(net.sizes)}I", *net.sizes))
            for p in net.params:
                fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_networks(path, activations=None):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ShapeError("not a parameter checkpoint")
    pos = 4
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    nets = []
    for i in range(count):
        (n_sizes,) = struct.unpack_from("<I", data, pos)
        pos += 4
        sizes = list(struct.unpack_from(f"<{n_sizes}I", data, pos))
        pos += 4 * n_sizes
        acts = activations[i] if activations is not None else None
        net = DenseNetwork(sizes, acts)
        params = []
        for p in net.params:
            n = p.size
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(p.shape)
            params.append(arr.astype(float))
            pos += 8 * n
        net.set_params(params)
        nets.append(net)
    if pos != len(data):
        raise ShapeError("trailing bytes in checkpoint")
    return nets
