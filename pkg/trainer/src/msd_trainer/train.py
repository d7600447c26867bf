"""Training loop for the small MLP denoiser.

The target is the clean point: D(u + sigma * eps, sigma) -> u, with sigma
drawn log-uniformly per example.  Class-conditional training uses the label
column of the dataset CSV and randomly drops the label (to the null slot)
so the net also works unconditionally.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .format import Embedding, features, forward, write_msdw

__all__ = ["TrainConfig", "TrainResult", "load_dataset_csv", "train",
           "export_goldens", "GOLDEN_HEADER"]

GOLDEN_HEADER = ["z1", "z2", "sigma", "class", "out1", "out2"]


@dataclass(frozen=True)
class TrainConfig:
    dataset_csv: str
    out_weights: str
    hidden_layers: int = 3
    hidden_width: int = 128
    fourier_features: int = 16
    num_classes: int = 0
    sigma_min: float = 0.01
    sigma_max: float = 3.0
    class_dropout: float = 0.2
    batch_size: int = 512
    steps: int = 4000
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("need at least one hidden unit")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")


@dataclass(frozen=True)
class TrainResult:
    weight_path: str
    curve: list = field(default_factory=list)  # (step, loss)
    final_loss: float = float("nan")


def load_dataset_csv(path):
    """Load the core's dataset CSV: header x,y,label with label optional."""
    pts, labels = [], []
    with open(path) as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:2] != ["x", "y"]:
            raise ValueError(f"unexpected dataset header {header!r}")
        for row in reader:
            pts.append((float(row[0]), float(row[1])))
            if len(row) > 2 and row[2] != "":
                labels.append(int(row[2]))
    pts = np.asarray(pts, dtype=np.float64)
    lab = np.asarray(labels, dtype=int) if len(labels) == len(pts) else None
    return pts, lab


class _Net(torch.nn.Module):
    def __init__(self, emb: Embedding, hidden_layers: int, width: int):
        super().__init__()
        dims = ([emb.input_dim] + [width] * hidden_layers + [2])
        self.layers = torch.nn.ModuleList(
            torch.nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.emb = emb

    def forward(self, feats, z):
        h = feats
        for layer in self.layers[:-1]:
            h = torch.nn.functional.silu(layer(h))
        out = self.layers[-1](h)
        if self.emb.flags & 1:
            out = out + z
        return out


def _batch_features(emb, z, sigma, cls_idx):
    """Torch version of the numpy feature embedding (kept in lockstep)."""
    ang = torch.log(sigma)[:, None] * (2.0 ** torch.arange(
        emb.fourier_features, dtype=z.dtype))
    onehot = torch.zeros(len(z), emb.num_classes + 1, dtype=z.dtype)
    onehot[torch.arange(len(z)), cls_idx] = 1.0
    return torch.cat([z, torch.sin(ang), torch.cos(ang), onehot], dim=1)


def train(cfg: TrainConfig) -> TrainResult:
    """Run the denoising regression and export the weights byte-exactly."""
    pts, labels = load_dataset_csv(cfg.dataset_csv)
    if cfg.num_classes > 0 and labels is None:
        raise ValueError("class-conditional training needs a labeled dataset")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    emb = Embedding(fourier_features=cfg.fourier_features,
                    num_classes=cfg.num_classes)
    net = _Net(emb, cfg.hidden_layers, cfg.hidden_width).double()
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=cfg.steps, eta_min=cfg.lr * 1e-2)
    data = torch.from_numpy(pts)

    curve = []
    loss_val = float("nan")
    for step in range(cfg.steps):
        idx = rng.integers(0, len(pts), size=cfg.batch_size)
        u = data[idx]
        log_s = rng.uniform(np.log(cfg.sigma_min), np.log(cfg.sigma_max),
                            size=cfg.batch_size)
        sigma = torch.from_numpy(np.exp(log_s))
        z = u + sigma[:, None] * torch.randn_like(u)
        if cfg.num_classes > 0:
            cls = torch.from_numpy(labels[idx].copy())
            drop = torch.from_numpy(
                rng.random(cfg.batch_size) < cfg.class_dropout)
            cls = torch.where(drop, torch.full_like(cls, cfg.num_classes), cls)
        else:
            cls = torch.zeros(cfg.batch_size, dtype=torch.long)
        pred = net(_batch_features(emb, z, sigma, cls), z)
        loss = torch.mean((pred - u) ** 2)
        loss_val = loss.detach().item()
        if not np.isfinite(loss_val):
            raise RuntimeError(
                f"training diverged at step {step}: loss={loss_val}, "
                f"lr={cfg.lr}, sigma range=({cfg.sigma_min}, {cfg.sigma_max})")
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if step % 50 == 0 or step == cfg.steps - 1:
            curve.append((step, loss_val))

    dims = [(layer.in_features, layer.out_features) for layer in net.layers]
    weights = [layer.weight.detach().numpy().astype(np.float32)
               for layer in net.layers]
    biases = [layer.bias.detach().numpy().astype(np.float32)
              for layer in net.layers]
    write_msdw(cfg.out_weights, dims, weights, biases, emb)
    return TrainResult(weight_path=cfg.out_weights, curve=curve,
                       final_loss=loss_val)


def write_curve_csv(path, curve):
    with open(path, "w") as f:
        f.write("step,loss\n")
        for step, loss in curve:
            f.write(f"{step},{loss:.17g}\n")


def default_probes(emb: Embedding, n: int = 100, seed: int = 1234):
    """Deterministic golden probes: points in the frame, log-uniform sigma."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.5, 1.5, size=(n, 2))
    sigma = np.exp(rng.uniform(np.log(0.05), np.log(1.0), size=n))
    if emb.num_classes > 0:
        cls = rng.integers(-1, emb.num_classes, size=n)  # -1 = unconditional
    else:
        cls = np.full(n, -1)
    return z, sigma, cls


def export_goldens(path, weights, biases, emb: Embedding, probes):
    """Evaluate the reference forward pass on the probes and write the CSV."""
    z, sigma, cls = probes
    with open(path, "w") as f:
        f.write(",".join(GOLDEN_HEADER) + "\n")
        for i in range(len(z)):
            c = None if cls[i] < 0 else int(cls[i])
            out = forward(weights, biases, emb, z[i], sigma[i], c)
            f.write(f"{z[i, 0]:.17g},{z[i, 1]:.17g},{sigma[i]:.17g},"
                    f"{'' if c is None else c},{out[0]:.17g},{out[1]:.17g}\n")


def read_goldens(path):
    rows = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header != GOLDEN_HEADER:
            raise ValueError(f"unexpected goldens header {header!r}")
        for line in f:
            z1, z2, sigma, c, o1, o2 = line.strip().split(",")
            rows.append((float(z1), float(z2), float(sigma),
                         None if c == "" else int(c), float(o1), float(o2)))
    return rows
