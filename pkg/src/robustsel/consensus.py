"""Relevance normalization, veto consensus and feature-set artifacts."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from robustsel.errors import DataError, DegenerateError
from robustsel.io import atomic_write_json
from robustsel.selectors import METHOD_VERSIONS, RawScoreVector

DEFAULT_THRESHOLD = 0.01


@dataclass(frozen=True)
class RelevanceVector:
    method: str
    names: tuple[str, ...]
    relevance: np.ndarray

    def __post_init__(self):
        rel = np.asarray(self.relevance, dtype=np.float64).copy()
        rel.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "relevance", rel)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.relevance.tolist()))


def normalize(raw: RawScoreVector) -> RelevanceVector:
    """Rescale scores into fractions of their total."""
    total = float(np.sum(raw.scores))
    if not total > 0:
        raise DegenerateError(f"method {raw.method!r} scored every feature zero")
    return RelevanceVector(raw.method, raw.names, raw.scores / total)


@dataclass(frozen=True)
class RankedFeature:
    name: str
    mean_relevance: float
    per_method: dict[str, float]


@dataclass(frozen=True)
class ConsensusRanking:
    surviving: tuple[RankedFeature, ...]
    vetoed: tuple[tuple[str, tuple[str, ...]], ...]
    threshold: float

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.surviving]


def consensus_rank(vectors: Sequence[RelevanceVector], threshold: float = DEFAULT_THRESHOLD
                   ) -> ConsensusRanking:
    """Veto any feature some method puts below ``threshold``; rank the rest by
    mean relevance (descending, ties by name)."""
    if not vectors:
        raise ValueError("no relevance vectors given")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    universe = set(vectors[0].names)
    for v in vectors[1:]:
        if set(v.names) != universe or len(v.names) != len(vectors[0].names):
            raise DataError(f"method {v.method!r} covers a different feature universe")
    lookups = [v.as_dict() for v in vectors]
    surviving, vetoed = [], []
    for name in vectors[0].names:
        vals = {v.method: lk[name] for v, lk in zip(vectors, lookups)}
        below = tuple(m for m, r in vals.items() if r < threshold)
        if below:
            vetoed.append((name, below))
        else:
            mean = float(np.mean([lk[name] for lk in lookups]))
            surviving.append(RankedFeature(name, mean, vals))
    if not surviving:
        harshest = max(vectors, key=lambda v: int(np.sum(v.relevance < threshold)))
        raise DegenerateError(
            f"every feature was vetoed at threshold {threshold}; method {harshest.method!r} "
            f"put {int(np.sum(harshest.relevance < threshold))} of {len(harshest.names)} below it"
        )
    surviving.sort(key=lambda f: (-f.mean_relevance, f.name))
    vetoed.sort(key=lambda item: item[0])
    return ConsensusRanking(tuple(surviving), tuple(vetoed), threshold)


@dataclass(frozen=True)
class FeatureSetArtifact:
    name: str
    features: tuple[str, ...]
    relevances: dict[str, RankedFeature] = field(default_factory=dict)
    threshold: float | None = None
    method_versions: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not self.features:
            raise DataError(f"feature set {self.name!r} is empty")

    def to_dict(self) -> dict:
        feats = []
        for n in self.features:
            entry: dict = {"name": n}
            if n in self.relevances:
                rf = self.relevances[n]
                entry["mean_relevance"] = rf.mean_relevance
                entry["per_method"] = dict(rf.per_method)
            feats.append(entry)
        return {
            "name": self.name,
            "threshold": self.threshold,
            "method_versions": dict(self.method_versions),
            "features": feats,
        }

    @classmethod
    def from_dict(cls, d: dict) -> FeatureSetArtifact:
        names, rel = [], {}
        for f in d["features"]:
            if isinstance(f, str):
                names.append(f)
                continue
            names.append(f["name"])
            if "mean_relevance" in f:
                rel[f["name"]] = RankedFeature(f["name"], f["mean_relevance"],
                                               dict(f.get("per_method", {})))
        return cls(d["name"], tuple(names), rel, d.get("threshold"),
                   dict(d.get("method_versions", {})))

    def save(self, path: str | Path) -> None:
        atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> FeatureSetArtifact:
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise DataError(f"cannot read feature set {path}: {exc}") from None
        except (KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed feature set {path}: {exc}") from None


def ranking_to_artifact(ranking: ConsensusRanking, name: str = "consensus",
                        methods: Sequence[str] | None = None) -> FeatureSetArtifact:
    if not ranking.surviving:
        raise DegenerateError("ranking has no surviving features")
    methods = methods if methods is not None else list(ranking.surviving[0].per_method)
    return FeatureSetArtifact(
        name=name,
        features=tuple(ranking.names),
        relevances={f.name: f for f in ranking.surviving},
        threshold=ranking.threshold,
        method_versions={m: METHOD_VERSIONS.get(m, "custom") for m in methods},
    )


def export_feature_set(ranking: ConsensusRanking, name: str, path: str | Path) -> FeatureSetArtifact:
    art = ranking_to_artifact(ranking, name)
    art.save(path)
    return art


def intersect_common(rankings: Sequence[ConsensusRanking], name: str = "time_related"
                     ) -> FeatureSetArtifact:
    """Features surviving in every ranking, ordered by mean of their mean
    relevances (ties by name)."""
    if len(rankings) < 2:
        raise ValueError("intersection needs at least two rankings")
    common = set(rankings[0].names)
    for r in rankings[1:]:
        common &= set(r.names)
    if not common:
        raise DegenerateError("no feature survives in every ranking")
    means = {}
    for n in common:
        means[n] = float(np.mean([next(f.mean_relevance for f in r.surviving if f.name == n)
                                  for r in rankings]))
    ordered = sorted(common, key=lambda n: (-means[n], n))
    rel = {n: RankedFeature(n, means[n], {}) for n in ordered}
    return FeatureSetArtifact(name, tuple(ordered), rel, rankings[0].threshold)


# -- the shipped time-related set ------------------------------------------------

def _canon(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.casefold())


def time_related_spec() -> dict:
    with resources.files("robustsel.data").joinpath("time_related.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def time_related_set(available: Sequence[str] | None = None) -> FeatureSetArtifact:
    """The 24 time-related flow features, resolved against ``available``
    column names (CICFlowMeter or HIKARI naming) when given."""
    spec = time_related_spec()
    if available is None:
        return FeatureSetArtifact("time_related", tuple(f["name"] for f in spec["features"]))
    by_canon = {_canon(a): a for a in available}
    resolved, missing = [], []
    for f in spec["features"]:
        hit = next((by_canon[_canon(c)] for c in [f["name"], *f["aliases"]] if _canon(c) in by_canon),
                   None)
        if hit is None:
            missing.append(f["name"])
        else:
            resolved.append(hit)
    if not resolved:
        raise DataError("none of the time-related features are present in the schema; "
                        "supply a feature-set file instead")
    art = FeatureSetArtifact("time_related", tuple(resolved))
    if missing:
        import logging

        logging.getLogger(__name__).warning("time_related: %d feature(s) not in schema: %s",
                                            len(missing), ", ".join(missing))
    return art
