"""Pluggable outcome learners and the cluster-level cross-fitting engine.

Prediction models for the outcome given baseline covariates are fit per
cross-fitting fold on the complementary folds' clusters, then evaluated on
the held-out fold.  With a single fold cross-fitting is disabled and models
are fit in-sample, which is the conventional choice for parametric
adjustment.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .design import StackedCluster
from .errors import (
    DegeneratePeriodWarning,
    SmallFoldWarning,
    TooManyFolds,
    UnknownCluster,
)
from .learners import LinearModel, RandomForest, RegressionTree, StackedEnsemble, _rng
from .trial_core import ClusterData, TrialDataset


class LearnerKind(Enum):
    NONE = "none"
    LINEAR = "linear"
    TREE = "tree"
    FOREST = "forest"
    ENSEMBLE = "ensemble"


class Pooling(Enum):
    PER_PERIOD = "per_period"
    POOLED_WITH_PERIOD_FEATURE = "pooled_with_period_feature"


_DATA_ADAPTIVE = (LearnerKind.TREE, LearnerKind.FOREST, LearnerKind.ENSEMBLE)
_POOLED_KEY = 0  # period key used for pooled / fallback models


@dataclass(frozen=True)
class LearnerSpec:
    """Declarative description of an outcome learner."""

    kind: LearnerKind = LearnerKind.NONE
    max_depth: int = 6
    min_leaf: int = 5
    n_trees: int = 20
    mtry: int | None = None
    bootstrap_seed: int = 0
    members: tuple["LearnerSpec", ...] = ()
    inner_folds: int = 3
    pooling: Pooling = Pooling.PER_PERIOD
    cluster_summaries: bool = False

    def __post_init__(self):
        if self.kind is LearnerKind.ENSEMBLE:
            if not self.members:
                raise ValueError("ensemble spec requires at least one member")
            if self.inner_folds < 2:
                raise ValueError("ensemble inner_folds must be >= 2")

    def to_json(self) -> dict:
        out = {"kind": self.kind.value, "pooling": self.pooling.value, "cluster_summaries": self.cluster_summaries}
        if self.kind in (LearnerKind.TREE, LearnerKind.FOREST):
            out.update(max_depth=self.max_depth, min_leaf=self.min_leaf)
        if self.kind is LearnerKind.FOREST:
            out.update(n_trees=self.n_trees, mtry=self.mtry, bootstrap_seed=self.bootstrap_seed)
        if self.kind is LearnerKind.ENSEMBLE:
            out.update(members=[m.to_json() for m in self.members], inner_folds=self.inner_folds)
        return out

    @classmethod
    def from_json(cls, data: dict | str) -> "LearnerSpec":
        if isinstance(data, str):
            data = json.loads(data)
        data = dict(data)
        kind = LearnerKind(data.pop("kind", "none"))
        members = tuple(cls.from_json(m) for m in data.pop("members", []))
        pooling = Pooling(data.pop("pooling", Pooling.PER_PERIOD.value))
        return cls(kind=kind, members=members, pooling=pooling, **data)


def partition_clusters(cluster_ids, n_folds: int, seed) -> tuple[tuple, ...]:
    """Random partition into folds whose sizes differ by at most one."""
    ids = list(cluster_ids)
    if n_folds < 1:
        raise ValueError("n_folds must be >= 1")
    if n_folds > len(ids):
        raise TooManyFolds(f"{n_folds} folds requested for {len(ids)} clusters")
    rng = _rng((_as_entropy(seed)) + (7,))
    perm = rng.permutation(len(ids))
    base, rem = divmod(len(ids), n_folds)
    folds, start = [], 0
    for m in range(n_folds):
        size = base + (1 if m < rem else 0)
        folds.append(tuple(ids[i] for i in perm[start : start + size]))
        start += size
    return tuple(folds)


def _as_entropy(seed) -> tuple[int, ...]:
    if isinstance(seed, (tuple, list)):
        return tuple(int(v) for v in seed)
    return (int(seed),)


def build_model(spec: LearnerSpec, seed, n_features: int):
    """Instantiate a fresh (unfitted) learner for the given spec."""
    if spec.kind is LearnerKind.LINEAR:
        return LinearModel()
    if spec.kind is LearnerKind.TREE:
        return RegressionTree(spec.max_depth, spec.min_leaf)
    if spec.kind is LearnerKind.FOREST:
        mtry = spec.mtry if spec.mtry is not None else max(1, round(n_features / 3))
        return RandomForest(spec.n_trees, spec.max_depth, spec.min_leaf, mtry,
                            seed=_as_entropy(seed) + (spec.bootstrap_seed,))
    if spec.kind is LearnerKind.ENSEMBLE:
        factories = [
            (lambda s, m=member: build_model(m, s, n_features)) for member in spec.members
        ]
        return StackedEnsemble(factories, spec.inner_folds, seed=_as_entropy(seed))
    raise ValueError(f"no model for learner kind {spec.kind}")


def fit_learner(spec: LearnerSpec, features: np.ndarray, y: np.ndarray, groups, seed):
    """Fit one predictor on training rows; thin wrapper over the primitives."""
    model = build_model(spec, seed, features.shape[1])
    model.fit(features, y, groups=groups)
    return model


@dataclass(frozen=True)
class NuisanceFit:
    """Cross-fitted per-fold, per-period outcome predictors."""

    spec: LearnerSpec
    n_periods: int
    folds: tuple[tuple, ...]
    fold_of: dict = field(default_factory=dict)  # cluster id -> fold index
    models: dict = field(default_factory=dict)  # (fold, period or 0-pooled) -> model
    cluster_means: dict = field(default_factory=dict)  # cluster id -> mean covariate row

    def features(self, cluster_id, periods: np.ndarray, covariate_rows: np.ndarray) -> np.ndarray:
        cols = [np.atleast_2d(covariate_rows)]
        if self.spec.cluster_summaries:
            mean = self.cluster_means[cluster_id]
            cols.append(np.tile(mean, (cols[0].shape[0], 1)))
        if self.spec.pooling is Pooling.POOLED_WITH_PERIOD_FEATURE:
            cols.append(np.asarray(periods, dtype=float).reshape(-1, 1))
        return np.column_stack(cols)

    def predict_rows(self, cluster_id, periods: np.ndarray, covariate_rows: np.ndarray) -> np.ndarray:
        """Predictions for several rows of one cluster."""
        if self.spec.kind is LearnerKind.NONE:
            return np.zeros(len(periods))
        if cluster_id not in self.fold_of:
            raise UnknownCluster(f"cluster {cluster_id!r} not in any cross-fit fold")
        m = self.fold_of[cluster_id]
        feats = self.features(cluster_id, periods, covariate_rows)
        out = np.empty(len(periods))
        if self.spec.pooling is Pooling.POOLED_WITH_PERIOD_FEATURE:
            return self.models[(m, _POOLED_KEY)].predict(feats)
        periods = np.asarray(periods)
        for j in np.unique(periods):
            rows = periods == j
            key = (m, int(j)) if (m, int(j)) in self.models else (m, _POOLED_KEY)
            out[rows] = self.models[key].predict(feats[rows])
        return out


def predict(fit: NuisanceFit, cluster_id, period: int, covariates) -> float:
    """Cross-fitted prediction for a single individual-period cell."""
    x = np.atleast_2d(np.asarray(covariates, dtype=float))
    return float(fit.predict_rows(cluster_id, np.array([period]), x)[0])


def _training_rows(dataset: TrialDataset, cluster_ids) -> tuple[np.ndarray, ...]:
    """Enrolled (covariates, period, y, cluster label) rows for the given clusters."""
    feats, periods, ys, labels = [], [], [], []
    by_id = {c.cluster_id: c for c in dataset.clusters}
    for cid in cluster_ids:
        c = by_id[cid]
        for j in range(1, c.n_periods + 1):
            ks = np.nonzero(c.enrollment[j - 1])[0]
            if ks.size == 0:
                continue
            feats.append(c.covariates[ks])
            periods.append(np.full(ks.size, j))
            ys.append(c.outcomes[j - 1, ks])
            labels.extend([cid] * ks.size)
    if not feats:
        return np.empty((0, dataset.n_covariates)), np.empty(0, dtype=int), np.empty(0), np.empty(0, dtype=object)
    return (
        np.vstack(feats),
        np.concatenate(periods).astype(int),
        np.concatenate(ys),
        np.asarray(labels, dtype=object),
    )


def cross_fit(dataset: TrialDataset, spec: LearnerSpec, n_folds: int = 5, seed=0) -> NuisanceFit:
    """Fit fold-specific outcome predictors on held-out clusters.

    With ``n_folds=1`` the single "fold" is trained on every cluster
    (cross-fitting disabled).  A period absent from a fold's training rows
    falls back to a pooled model fit on all of that fold's rows, with a
    warning.
    """
    ids = [c.cluster_id for c in dataset.clusters]
    folds = partition_clusters(ids, n_folds, seed)
    fold_of = {cid: m for m, fold in enumerate(folds) for cid in fold}
    fit = NuisanceFit(spec=spec, n_periods=dataset.n_periods, folds=folds, fold_of=fold_of)
    if spec.cluster_summaries:
        for c in dataset.clusters:
            fit.cluster_means[c.cluster_id] = c.covariates.mean(axis=0)
    if spec.kind is LearnerKind.NONE:
        return fit

    entropy = _as_entropy(seed)
    for m, fold in enumerate(folds):
        training = ids if n_folds == 1 else [cid for cid in ids if fold_of[cid] != m]
        X, periods, y, labels = _training_rows(dataset, training)
        if spec.kind in _DATA_ADAPTIVE and y.size < 50:
            warnings.warn(
                f"fold {m}: only {y.size} training rows for a data-adaptive learner; "
                "consider parametric adjustment",
                SmallFoldWarning,
            )
        mean_rows = None
        if spec.cluster_summaries:
            mean_rows = np.vstack([fit.cluster_means[cid] for cid in labels])

        def assemble(rows: np.ndarray) -> np.ndarray:
            cols = [X[rows]]
            if mean_rows is not None:
                cols.append(mean_rows[rows])
            if spec.pooling is Pooling.POOLED_WITH_PERIOD_FEATURE:
                cols.append(periods[rows].astype(float).reshape(-1, 1))
            return np.column_stack(cols)

        all_rows = np.arange(y.size)
        if spec.pooling is Pooling.POOLED_WITH_PERIOD_FEATURE:
            fit.models[(m, _POOLED_KEY)] = fit_learner(
                spec, assemble(all_rows), y, labels, entropy + (m, _POOLED_KEY)
            )
            continue
        missing = []
        for j in range(1, dataset.n_periods + 1):
            rows = np.nonzero(periods == j)[0]
            if rows.size == 0:
                missing.append(j)
                continue
            fit.models[(m, j)] = fit_learner(spec, assemble(rows), y[rows], labels[rows], entropy + (m, j))
        if missing:
            warnings.warn(
                f"fold {m}: periods {missing} absent from training; using a pooled fallback",
                DegeneratePeriodWarning,
            )
            fit.models[(m, _POOLED_KEY)] = fit_learner(spec, assemble(all_rows), y, labels, entropy + (m, _POOLED_KEY))
    return fit


def fill_g_hat(stacked: StackedCluster, cluster: ClusterData, fit: NuisanceFit) -> StackedCluster:
    """Attach cross-fitted predictions to a stacked cluster's rows."""
    g = fit.predict_rows(stacked.cluster_id, stacked.periods, cluster.covariates[stacked.individuals])
    return stacked.with_g_hat(g)
