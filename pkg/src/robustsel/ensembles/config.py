from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Any

FAMILIES = ("random_forest", "levelwise_gbt", "leafwise_gbt", "cyclic_gam")

# Family defaults; None in ModelConfig means "take the family default".
_DEFAULTS: dict[str, dict[str, Any]] = {
    "random_forest": dict(max_features=4, max_depth=12, min_leaf=1, min_gain=0.0,
                          max_bins=256),
    "levelwise_gbt": dict(max_depth=8, min_leaf=1, min_gain=0.01, learning_rate=0.2,
                          feature_subsample=0.8, min_child_weight=1.0, reg_lambda=1.0,
                          max_bins=256),
    "leafwise_gbt": dict(max_depth=-1, max_leaves=15, min_leaf=20, min_gain=0.01,
                         learning_rate=0.1, feature_subsample=0.8, min_child_weight=1e-3,
                         reg_lambda=1.0, goss_top_fraction=0.2, goss_other_fraction=0.1,
                         max_bins=256),
    "cyclic_gam": dict(max_depth=-1, max_leaves=3, min_leaf=2, min_gain=0.0,
                       learning_rate=0.1, min_child_weight=1e-3, reg_lambda=1.0, max_bins=256),
}

# Searched points inside the documented hyperparameter ranges of each family.
DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "random_forest": {"max_depth": [8, 12, 16], "min_leaf": [1, 4]},
    "levelwise_gbt": {"max_depth": [4, 8, 16], "learning_rate": [0.1, 0.2, 0.3],
                      "feature_subsample": [0.7, 0.9]},
    "leafwise_gbt": {"learning_rate": [0.1, 0.2], "feature_subsample": [0.7, 0.8]},
    "cyclic_gam": {"max_leaves": [3, 15], "min_leaf": [1, 2]},
}


@dataclass(frozen=True)
class ModelConfig:
    family: str
    n_estimators: int = 100
    max_features: int | None = None
    max_depth: int | None = None
    min_leaf: int | None = None
    min_gain: float | None = None
    learning_rate: float | None = None
    feature_subsample: float | None = None
    max_leaves: int | None = None
    max_bins: int | None = None
    goss_top_fraction: float | None = None
    goss_other_fraction: float | None = None
    min_child_weight: float | None = None
    reg_lambda: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        for key, val in _DEFAULTS[self.family].items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, val)
        self.validate()

    def validate(self) -> None:
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be non-negative")
        if self.max_depth is not None and self.max_depth < -1:
            raise ValueError("max_depth must be -1 (unlimited) or >= 0")
        if self.min_leaf is not None and self.min_leaf < 1:
            raise ValueError("min_leaf must be at least 1")
        if self.max_bins is not None and not 2 <= self.max_bins <= 256:
            raise ValueError("max_bins must be in [2, 256]")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.feature_subsample is not None and not 0 < self.feature_subsample <= 1:
            raise ValueError("feature_subsample must be in (0, 1]")
        if self.max_leaves is not None and self.max_leaves < 2:
            raise ValueError("max_leaves must be at least 2")
        if self.family == "leafwise_gbt":
            a, b = self.goss_top_fraction, self.goss_other_fraction
            if not (0 <= a < 1 and 0 < b <= 1 and a + b <= 1):
                raise ValueError("GOSS fractions need 0 <= a < 1, 0 < b <= 1, a + b <= 1")

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if getattr(self, f.name) is not None}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ModelConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def expand_grid(family: str, grid: dict[str, list] | None = None, **fixed) -> list[ModelConfig]:
    """All configurations of ``grid`` in row-major order of its keys."""
    grid = DEFAULT_GRIDS[family] if grid is None else grid
    keys = list(grid)
    return [ModelConfig(family=family, **fixed, **dict(zip(keys, combo)))
            for combo in itertools.product(*(grid[k] for k in keys))]
