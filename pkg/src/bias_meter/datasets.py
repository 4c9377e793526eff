"""Regression dataset container and its CSV/JSON on-disk form.

A dataset is train/test inputs plus regression targets with a shared output
width k. On disk it is two long-form CSVs (inputs: split,row,col,value and
targets: split,row,channel,value) next to a JSON manifest, so fixtures stay
diffable and language-portable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError

X_CSV = "dataset_X.csv"
Y_CSV = "dataset_Y.csv"
MANIFEST_JSON = "dataset.json"


@dataclass
class Dataset:
    train_X: np.ndarray
    train_Y: np.ndarray
    test_X: np.ndarray
    test_Y: np.ndarray
    name: str = "unnamed"
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for attr in ("train_X", "train_Y", "test_X", "test_Y"):
            arr = np.asarray(getattr(self, attr), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] < 1:
                raise DataError(f"{attr} must be a nonempty 2-D array, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{attr} contains non-finite entries")
            setattr(self, attr, arr)
        if self.train_X.shape[0] != self.train_Y.shape[0]:
            raise DataError("train_X and train_Y row counts differ")
        if self.test_X.shape[0] != self.test_Y.shape[0]:
            raise DataError("test_X and test_Y row counts differ")
        if self.train_X.shape[1] != self.test_X.shape[1]:
            raise DataError("train and test input dimensions differ")
        if self.train_Y.shape[1] != self.test_Y.shape[1]:
            raise DataError("train and test target widths differ")

    @property
    def n_train(self) -> int:
        return self.train_X.shape[0]

    @property
    def n_test(self) -> int:
        return self.test_X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.train_X.shape[1]

    @property
    def output_dim(self) -> int:
        return self.train_Y.shape[1]


def _long_form(train: np.ndarray, test: np.ndarray, value_col: str) -> pd.DataFrame:
    frames = []
    for split, arr in (("train", train), ("test", test)):
        rows, cols = np.divmod(np.arange(arr.size), arr.shape[1])
        frames.append(
            pd.DataFrame(
                {"split": split, "row": rows, value_col: cols, "value": arr.ravel()}
            )
        )
    return pd.concat(frames, ignore_index=True)


def _from_long_form(df: pd.DataFrame, split: str, value_col: str) -> np.ndarray:
    part = df[df["split"] == split]
    if part.empty:
        raise DataError(f"dataset CSV is missing the {split!r} split")
    n_rows = int(part["row"].max()) + 1
    n_cols = int(part[value_col].max()) + 1
    if len(part) != n_rows * n_cols:
        raise DataError(f"dataset CSV {split!r} split is not a dense {n_rows}x{n_cols} grid")
    order = np.lexsort((part[value_col].to_numpy(), part["row"].to_numpy()))
    return part["value"].to_numpy()[order].reshape(n_rows, n_cols)


def save_dataset(data: Dataset, out_dir: str | Path) -> dict:
    """Write dataset CSVs and manifest into out_dir; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _long_form(data.train_X, data.test_X, "col").to_csv(
        out / X_CSV, index=False, float_format="%.17g"
    )
    _long_form(data.train_Y, data.test_Y, "channel").to_csv(
        out / Y_CSV, index=False, float_format="%.17g"
    )
    manifest = {
        "task": data.name,
        "n_train": data.n_train,
        "n_test": data.n_test,
        "input_dim": data.input_dim,
        "output_dim": data.output_dim,
        **data.meta,
    }
    (out / MANIFEST_JSON).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_dataset(in_dir: str | Path) -> Dataset:
    """Read a dataset previously written by save_dataset."""
    src = Path(in_dir)
    for fname in (X_CSV, Y_CSV, MANIFEST_JSON):
        if not (src / fname).exists():
            raise DataError(f"missing dataset file: {src / fname}")
    manifest = json.loads((src / MANIFEST_JSON).read_text())
    xs = pd.read_csv(src / X_CSV)
    ys = pd.read_csv(src / Y_CSV)
    data = Dataset(
        train_X=_from_long_form(xs, "train", "col"),
        train_Y=_from_long_form(ys, "train", "channel"),
        test_X=_from_long_form(xs, "test", "col"),
        test_Y=_from_long_form(ys, "test", "channel"),
        name=manifest.get("task", "unnamed"),
        meta={k: v for k, v in manifest.items() if k not in
              ("task", "n_train", "n_test", "input_dim", "output_dim")},
    )
    if data.n_train != manifest["n_train"] or data.n_test != manifest["n_test"]:
        raise DataError("dataset CSV row counts disagree with the manifest")
    return data
