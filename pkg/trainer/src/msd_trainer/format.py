"""The MSDW binary weight format and a reference numpy forward pass.

This module is self-contained on purpose: the trainer talks to the core
package only through files, so the byte layout is restated here rather than
imported.  Layout (little-endian):

    magic "MSDW" | version u32 | layer count u32
    per layer: in_dim u32, out_dim u32
    embedding: fourier_features u32, num_classes u32, flags u32, reserved u32
    payload: all weight matrices (row-major float32, layer order),
             then all bias vectors (float32, layer order)

Flag bit 0 enables the skip connection from the input point z to the output.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MSDW"
VERSION = 1
SKIP_FLAG = 1


@dataclass(frozen=True)
class Embedding:
    fourier_features: int
    num_classes: int
    flags: int = SKIP_FLAG
    reserved: int = 0

    @property
    def input_dim(self) -> int:
        # [z, sin/cos Fourier features of log sigma, one-hot class + null slot]
        return 2 + 2 * self.fourier_features + self.num_classes + 1


def write_msdw(path, layer_dims, weights, biases, emb: Embedding,
               sidecar: bool = True):
    """Write weights byte-exactly in the MSDW layout, plus a JSON sidecar."""
    header = bytearray(MAGIC)
    header += struct.pack("<II", VERSION, len(layer_dims))
    for din, dout in layer_dims:
        header += struct.pack("<II", din, dout)
    header += struct.pack("<IIII", emb.fourier_features, emb.num_classes,
                          emb.flags, emb.reserved)
    with open(path, "wb") as f:
        f.write(bytes(header))
        for w in weights:
            f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
        for b in biases:
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
    if sidecar:
        meta = {
            "magic": MAGIC.decode(),
            "version": VERSION,
            "layers": [[int(a), int(b)] for a, b in layer_dims],
            "embedding": {
                "fourier_features": emb.fourier_features,
                "num_classes": emb.num_classes,
                "flags": emb.flags,
                "reserved": emb.reserved,
            },
        }
        with open(str(path) + ".json", "w") as f:
            json.dump(meta, f, indent=2)


def read_msdw(path):
    """Read back an MSDW file -> (layer_dims, weights, biases, Embedding)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError("bad magic: not a weight file")
    off = 4
    version, n_layers = struct.unpack_from("<II", blob, off)
    off += 8
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    dims = []
    for _ in range(n_layers):
        dims.append(struct.unpack_from("<II", blob, off))
        off += 8
    emb = Embedding(*struct.unpack_from("<IIII", blob, off))
    off += 16
    flat = np.frombuffer(blob, dtype="<f4", offset=off)
    weights, biases, pos = [], [], 0
    for din, dout in dims:
        weights.append(flat[pos:pos + din * dout].reshape(dout, din))
        pos += din * dout
    for _, dout in dims:
        biases.append(flat[pos:pos + dout])
        pos += dout
    if pos != len(flat):
        raise ValueError("payload size mismatch")
    return dims, weights, biases, emb


def features(z, sigma, cls, emb: Embedding) -> np.ndarray:
    """Input embedding: z, Fourier features of log sigma, one-hot class."""
    z = np.asarray(z, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), z.shape[:-1])
    ang = np.log(sigma)[..., None] * 2.0 ** np.arange(emb.fourier_features)
    onehot = np.zeros(z.shape[:-1] + (emb.num_classes + 1,))
    onehot[..., emb.num_classes if cls is None else int(cls)] = 1.0
    return np.concatenate([z, np.sin(ang), np.cos(ang), onehot], axis=-1)


def forward(weights, biases, emb: Embedding, z, sigma, cls=None) -> np.ndarray:
    """Reference forward pass: SiLU hidden layers, linear output, skip from z."""
    h = features(z, sigma, cls, emb)
    for w, b in zip(weights[:-1], biases[:-1]):
        h = h @ np.asarray(w, dtype=float).T + np.asarray(b, dtype=float)
        h = h / (1.0 + np.exp(-h))  # SiLU: x * sigmoid(x)
    out = h @ np.asarray(weights[-1], dtype=float).T + np.asarray(
        biases[-1], dtype=float)
    if emb.flags & SKIP_FLAG:
        out = out + np.asarray(z, dtype=float)
    return out
