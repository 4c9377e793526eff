"""Container and on-disk form for sampled hypothesis predictions.

Predictions are an (S, n, k) tensor: S hypotheses evaluated at n test points
with k output channels. Persistence is a long-form CSV with the header
sample,point,channel,value plus a JSON sidecar manifest; values round-trip
exactly via %.17g formatting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError

SOURCES = ("kernel", "neural_net", "exact_oracle")


@dataclass
class HypothesisSamples:
    predictions: np.ndarray  # (S, n, k)
    seed: int
    source: str

    def __post_init__(self) -> None:
        preds = np.asarray(self.predictions, dtype=np.float64)
        if preds.ndim != 3 or preds.shape[0] < 1:
            raise ValueError(f"predictions must be a nonempty (S, n, k) tensor, got {preds.shape}")
        if not np.all(np.isfinite(preds)):
            raise ValueError("predictions contain non-finite entries")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        self.predictions = preds

    @property
    def num_samples(self) -> int:
        return self.predictions.shape[0]


def save_samples(
    samples: HypothesisSamples,
    csv_path: str | Path,
    manifest_path: str | Path | None = None,
    extra_manifest: dict | None = None,
) -> dict:
    """Write the samples CSV (and optional JSON sidecar); returns the manifest."""
    preds = samples.predictions
    S, n, k = preds.shape
    idx = np.arange(preds.size)
    df = pd.DataFrame(
        {
            "sample": idx // (n * k),
            "point": (idx // k) % n,
            "channel": idx % k,
            "value": preds.ravel(),
        }
    )
    df.to_csv(csv_path, index=False, float_format="%.17g")
    manifest = {
        "seed": samples.seed,
        "source": samples.source,
        "S": S,
        "n": n,
        "k": k,
        **(extra_manifest or {}),
    }
    if manifest_path is not None:
        Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_samples(csv_path: str | Path, manifest_path: str | Path | None = None) -> HypothesisSamples:
    """Read samples written by save_samples, restoring the (S, n, k) tensor."""
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise DataError(f"missing samples file: {csv_path}")
    df = pd.read_csv(csv_path)
    expected = ["sample", "point", "channel", "value"]
    if list(df.columns) != expected:
        raise DataError(f"samples CSV columns {list(df.columns)} != {expected}")
    S = int(df["sample"].max()) + 1
    n = int(df["point"].max()) + 1
    k = int(df["channel"].max()) + 1
    if len(df) != S * n * k:
        raise DataError(f"samples CSV has {len(df)} rows, expected dense {S}x{n}x{k}")
    idx = np.arange(len(df))
    canonical = (
        np.array_equal(df["sample"].to_numpy(), idx // (n * k))
        and np.array_equal(df["point"].to_numpy(), (idx // k) % n)
        and np.array_equal(df["channel"].to_numpy(), idx % k)
    )
    values = df["value"].to_numpy()
    if not canonical:
        order = np.lexsort(
            (df["channel"].to_numpy(), df["point"].to_numpy(), df["sample"].to_numpy())
        )
        values = values[order]
    seed, source = 0, "kernel"
    if manifest_path is not None:
        manifest = json.loads(Path(manifest_path).read_text())
        seed = int(manifest.get("seed", 0))
        source = manifest.get("source", "kernel")
        if (manifest.get("S", S), manifest.get("n", n), manifest.get("k", k)) != (S, n, k):
            raise DataError("samples CSV shape disagrees with its manifest")
    return HypothesisSamples(values.reshape(S, n, k), seed=seed, source=source)
