"""Common model surface: prediction entry points and JSON serialisation."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError

_REGISTRY: dict[str, type] = {}


def register(kind: str):
    def deco(cls):
        cls.kind = kind
        _REGISTRY[kind] = cls
        return cls
    return deco


class ClassifierModel:
    """Trained, immutable classifier.

    Subclasses are frozen dataclasses with ``feature_names`` and
    ``n_classes`` fields and implement ``_predict(X)`` and ``_payload()``.
    """

    kind = "abstract"
    feature_names: tuple[str, ...]
    n_classes: int

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise DataError(
                f"model expects {len(self.feature_names)} features, got shape {X.shape}"
            )
        return X

    def predict_many(self, X) -> np.ndarray:
        return self._predict(self._check(X))

    def predict_one(self, row) -> int:
        row = np.asarray(row, dtype=np.float64)
        if row.ndim != 1:
            raise DataError("predict_one expects a single feature vector")
        return int(self.predict_many(row)[0])

    def to_dict(self) -> dict:
        payload = {
            "type": self.kind,
            "feature_names": list(self.feature_names),
            "n_classes": self.n_classes,
        }
        payload.update(self._payload())
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def predict(model: ClassifierModel, row) -> int:
    """Class index for one feature vector (arity must match the model)."""
    return model.predict_one(row)


def model_from_dict(obj: dict) -> ClassifierModel:
    try:
        cls = _REGISTRY[obj["type"]]
    except KeyError:
        raise DataError(f"unknown model type {obj.get('type')!r}") from None
    return cls.from_dict(obj)


def loads(text: str) -> ClassifierModel:
    return model_from_dict(json.loads(text))


def load(path) -> ClassifierModel:
    return loads(Path(path).read_text())
