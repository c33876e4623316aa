"""Versioned JSON model artifacts."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from robustsel.errors import DataError
from robustsel.io import atomic_write_json
from robustsel.ensembles.config import ModelConfig
from robustsel.ensembles.model import TrainedEnsemble, Tree

FORMAT = "robustsel-model"
VERSION = 1


def model_to_dict(model: TrainedEnsemble) -> dict:
    d = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "feature_names": list(model.feature_names),
        "base_score": model.base_score,
        "bin_edges": [e.tolist() for e in model.bin_edges],
        "feature_importances": model.feature_importances.tolist(),
        "trees": [t.to_nested() for t in model.trees],
    }
    if model.tree_features is not None:
        d["tree_features"] = list(model.tree_features)
    if model.shapes is not None:
        d["shapes"] = [s.tolist() for s in model.shapes]
    if "train_loss" in model.metadata:
        d["train_loss"] = list(model.metadata["train_loss"])
    return d


def model_from_dict(d: dict) -> TrainedEnsemble:
    if d.get("format") != FORMAT:
        raise DataError("not a robustsel model artifact")
    if d.get("version") != VERSION:
        raise DataError(f"unsupported model artifact version {d.get('version')}")
    meta = {"train_loss": d["train_loss"]} if "train_loss" in d else {}
    return TrainedEnsemble(
        config=ModelConfig.from_dict(d["config"]),
        feature_names=tuple(d["feature_names"]),
        base_score=float(d["base_score"]),
        trees=[Tree.from_nested(t) for t in d["trees"]],
        bin_edges=[np.asarray(e, dtype=np.float64) for e in d["bin_edges"]],
        feature_importances=np.asarray(d["feature_importances"], dtype=np.float64),
        tree_features=d.get("tree_features"),
        shapes=[np.asarray(s, dtype=np.float64) for s in d["shapes"]] if "shapes" in d else None,
        metadata=meta,
    )


def save_model(model: TrainedEnsemble, path: str | Path) -> None:
    atomic_write_json(path, model_to_dict(model))


def load_model(path: str | Path) -> TrainedEnsemble:
    try:
        with open(path, encoding="utf-8") as fh:
            return model_from_dict(json.load(fh))
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed model artifact {path}: {exc}") from None
