"""Trainer for the small MLP toy denoiser.

Talks to the core analysis package only through files: it reads dataset CSVs
(x,y,label), writes MSDW binary weights plus a JSON sidecar, a training-curve
CSV, and a golden-vectors CSV for cross-implementation forward-pass checks.
"""

from .format import Embedding, write_msdw, read_msdw, forward, features
from .train import (TrainConfig, TrainResult, train, load_dataset_csv,
                    export_goldens, read_goldens, default_probes,
                    write_curve_csv)

__version__ = "0.1.0"
