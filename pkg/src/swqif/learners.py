"""Outcome-regression primitives: OLS, CART, cluster-bootstrap forest, stacking.

All learners expose ``fit(X, y, groups=None)`` and ``predict(X)``.  ``groups``
carries a per-row cluster label; resampling (forest bootstrap, stacking
cross-validation) always operates on whole groups because observations are
only independent across clusters.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import EmptyTraining


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    entropy = seed if isinstance(seed, (tuple, list)) else (int(seed),)
    return np.random.default_rng(np.random.SeedSequence([int(v) for v in entropy]))


class LinearModel:
    """Ordinary least squares with intercept; pseudo-inverse on rank deficiency."""

    def __init__(self):
        self.coef_ = None

    def fit(self, X, y, groups=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            raise EmptyTraining("no rows to fit")
        design = np.column_stack([np.ones(len(y)), X])
        self.coef_, *_ = np.linalg.lstsq(design, y, rcond=None)
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        return self.coef_[0] + X @ self.coef_[1:]


class MeanModel:
    """Intercept-only fallback."""

    def __init__(self):
        self.value_ = 0.0

    def fit(self, X, y, groups=None):
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            raise EmptyTraining("no rows to fit")
        self.value_ = float(y.mean())
        return self

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.value_)


def _candidate_thresholds(col: np.ndarray, max_bins: int) -> np.ndarray:
    """Split candidates for one feature: midpoints between distinct values,
    thinned to quantile cut points when there are many."""
    uniq = np.unique(col)
    if uniq.size <= 1:
        return np.empty(0)
    if uniq.size <= max_bins:
        return (uniq[:-1] + uniq[1:]) / 2.0
    qs = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1])
    return np.unique(qs)


class RegressionTree:
    """CART regression tree: greedy axis-aligned splits minimizing the sum of
    squared errors over precomputed candidate thresholds.

    With few distinct feature values the candidate set is exact (all
    midpoints); dense features are thinned to ``max_bins`` quantile cuts.
    """

    def __init__(self, max_depth: int = 6, min_leaf: int = 5, mtry: int | None = None, max_bins: int = 64):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.max_bins = max_bins
        self.nodes_: list[tuple] = []

    def fit(self, X, y, groups=None, rng=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            raise EmptyTraining("no rows to fit")
        n, q = X.shape
        rng = _rng(rng) if rng is not None else None
        thresholds = [_candidate_thresholds(X[:, f], self.max_bins) for f in range(q)]
        # bin index = number of thresholds strictly below the value, so a
        # split at threshold t sends bins <= index(t) left
        bins = np.empty((n, q), dtype=np.int32)
        for f in range(q):
            bins[:, f] = np.searchsorted(thresholds[f], X[:, f], side="left")

        nodes: list[list] = []
        stack = [(np.arange(n), 0, None, None)]  # rows, depth, parent id, side
        while stack:
            rows, depth, parent, side = stack.pop()
            node_id = len(nodes)
            if parent is not None:
                nodes[parent][3 if side == "L" else 4] = node_id
            split = None
            if depth < self.max_depth and rows.size >= 2 * self.min_leaf:
                split = self._best_split(bins, thresholds, y, rows, rng)
            if split is None:
                nodes.append(["leaf", float(y[rows].mean())])
            else:
                f, t_idx = split
                go_left = bins[rows, f] <= t_idx
                nodes.append(["split", f, float(thresholds[f][t_idx]), -1, -1])
                stack.append((rows[~go_left], depth + 1, node_id, "R"))
                stack.append((rows[go_left], depth + 1, node_id, "L"))
        self.nodes_ = [tuple(nd) for nd in nodes]
        return self

    def _best_split(self, bins, thresholds, y, rows, rng):
        n = rows.size
        yv = y[rows]
        total, total_sq = yv.sum(), (yv * yv).sum()
        parent_sse = total_sq - total * total / n
        q = bins.shape[1]
        if self.mtry is not None and rng is not None and self.mtry < q:
            features = np.sort(rng.choice(q, size=self.mtry, replace=False))
        else:
            features = range(q)
        best = None
        best_sse = parent_sse - 1e-12
        for f in features:
            nb = thresholds[f].size + 1
            if nb < 2:
                continue
            b = bins[rows, f]
            cnt = np.bincount(b, minlength=nb).astype(float)
            s = np.bincount(b, weights=yv, minlength=nb)
            sq = np.bincount(b, weights=yv * yv, minlength=nb)
            nl = np.cumsum(cnt)[:-1]
            sl = np.cumsum(s)[:-1]
            ql = np.cumsum(sq)[:-1]
            nr = n - nl
            ok = (nl >= self.min_leaf) & (nr >= self.min_leaf)
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                sse = (ql - sl * sl / nl) + ((total_sq - ql) - (total - sl) ** 2 / nr)
            sse[~ok] = np.inf
            i = int(np.argmin(sse))
            if sse[i] < best_sse:
                best_sse = sse[i]
                best = (f, i)
        return best

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node_id, rows = stack.pop()
            node = self.nodes_[node_id]
            if node[0] == "leaf":
                out[rows] = node[1]
                continue
            _, f, thr, left, right = node
            go_left = X[rows, f] <= thr
            if go_left.any():
                stack.append((left, rows[go_left]))
            if not go_left.all():
                stack.append((right, rows[~go_left]))
        return out


class RandomForest:
    """Average of CART trees fit on cluster-level bootstrap resamples."""

    def __init__(self, n_trees: int = 20, max_depth: int = 6, min_leaf: int = 5,
                 mtry: int | None = None, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.seed = seed
        self.trees_: list[RegressionTree] = []

    def fit(self, X, y, groups=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            raise EmptyTraining("no rows to fit")
        if groups is None:
            groups = np.arange(len(y))
        groups = np.asarray(groups)
        uniq, inverse = np.unique(groups, return_inverse=True)
        rows_by_group = [np.nonzero(inverse == g)[0] for g in range(uniq.size)]
        entropy = self.seed if isinstance(self.seed, (tuple, list)) else (int(self.seed),)
        self.trees_ = []
        for t in range(self.n_trees):
            rng = _rng(tuple(entropy) + (t,))
            sampled = rng.integers(0, uniq.size, size=uniq.size)
            rows = np.concatenate([rows_by_group[g] for g in sampled])
            tree = RegressionTree(self.max_depth, self.min_leaf, self.mtry)
            tree.fit(X[rows], y[rows], rng=rng)
            self.trees_.append(tree)
        return self

    def predict(self, X):
        preds = np.stack([tree.predict(X) for tree in self.trees_])
        return preds.mean(axis=0)


def simplex_weights(predictions: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Minimize ||predictions @ w - y||^2 over the probability simplex.

    Solved exactly by enumerating supports and solving the sum-to-one
    equality-constrained least squares on each; feasible only for the small
    member counts used here.
    """
    Z = np.atleast_2d(np.asarray(predictions, dtype=float))
    y = np.asarray(y, dtype=float)
    L = Z.shape[1]
    if L > 12:
        raise ValueError("simplex_weights supports at most 12 members")
    best_w, best_loss = None, np.inf
    for size in range(1, L + 1):
        for support in itertools.combinations(range(L), size):
            Zs = Z[:, support]
            G = Zs.T @ Zs
            kkt = np.zeros((size + 1, size + 1))
            kkt[:size, :size] = 2.0 * G
            kkt[:size, size] = 1.0
            kkt[size, :size] = 1.0
            rhs = np.concatenate([2.0 * Zs.T @ y, [1.0]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            w = sol[:size]
            if np.any(w < -1e-10):
                continue
            w = np.clip(w, 0.0, None)
            w = w / w.sum()
            loss = float(np.sum((Zs @ w - y) ** 2))
            if loss < best_loss - 1e-12:
                best_loss = loss
                best_w = np.zeros(L)
                best_w[list(support)] = w
    return best_w


class StackedEnsemble:
    """Simplex-constrained stacking of member learners.

    Member out-of-fold predictions come from an inner cross-validation over
    cluster groups; the final members are refit on all rows and combined with
    the stacking weights.
    """

    def __init__(self, member_factories, inner_folds: int = 3, seed=0):
        self.member_factories = list(member_factories)
        self.inner_folds = inner_folds
        self.seed = seed
        self.members_: list = []
        self.weights_: np.ndarray | None = None
        self.cv_losses_: np.ndarray | None = None

    def fit(self, X, y, groups=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            raise EmptyTraining("no rows to fit")
        if groups is None:
            groups = np.arange(len(y))
        groups = np.asarray(groups)
        uniq, inverse = np.unique(groups, return_inverse=True)
        entropy = self.seed if isinstance(self.seed, (tuple, list)) else (int(self.seed),)
        rng = _rng(tuple(entropy) + (90,))
        n_folds = min(self.inner_folds, uniq.size)
        fold_of_group = np.floor_divide(np.arange(uniq.size) * n_folds, uniq.size)
        fold_of_group = fold_of_group[rng.permutation(uniq.size)]
        fold_of_row = fold_of_group[inverse]

        L = len(self.member_factories)
        oof = np.zeros((len(y), L))
        for fold in range(n_folds):
            holdout = fold_of_row == fold
            if not holdout.any() or holdout.all():
                continue
            for m, factory in enumerate(self.member_factories):
                model = factory(tuple(entropy) + (m, fold))
                model.fit(X[~holdout], y[~holdout], groups=groups[~holdout])
                oof[holdout, m] = model.predict(X[holdout])
        self.weights_ = simplex_weights(oof, y)
        self.cv_losses_ = np.array([np.sum((oof[:, m] - y) ** 2) for m in range(L)])
        self.members_ = []
        for m, factory in enumerate(self.member_factories):
            model = factory(tuple(entropy) + (m, n_folds))
            model.fit(X, y, groups=groups)
            self.members_.append(model)
        return self

    def predict(self, X):
        preds = np.stack([m.predict(X) for m in self.members_], axis=1)
        return preds @ self.weights_
