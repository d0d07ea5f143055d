"""Q-function regressors for batch value iteration.

All models share the same interface: fit on (state, action) rows with scalar
targets, predict values for (state, action) queries, and serialize to plain
JSON so fitted policies survive a round trip exactly.  The tree ensemble is a
self-contained implementation of totally randomized trees (random split
feature, random threshold between the observed minimum and maximum).
"""
from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from ..core import as_generator


class QModel(ABC):
    @abstractmethod
    def fit(self, states: np.ndarray, actions: np.ndarray, targets: np.ndarray, rng) -> None:
        ...

    @abstractmethod
    def predict(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def to_json_dict(self) -> dict:
        ...


def _xy(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.concatenate([np.asarray(states, dtype=float),
                           np.asarray(actions, dtype=float)], axis=1)


class TabularMeanRegressor(QModel):
    """Cell means over integer (state, action) pairs; unseen cells predict 0."""

    def __init__(self):
        self.cells: dict[tuple[int, int], float] = {}

    @staticmethod
    def _keys(states, actions) -> list[tuple[int, int]]:
        s = np.asarray(states)[:, 0]
        a = np.asarray(actions)[:, 0]
        return [(int(round(si)), int(round(ai))) for si, ai in zip(s, a)]

    def fit(self, states, actions, targets, rng=None) -> None:
        groups: dict[tuple[int, int], list[float]] = {}
        for key, y in zip(self._keys(states, actions), np.asarray(targets, dtype=float)):
            groups.setdefault(key, []).append(float(y))
        self.cells = {key: float(np.mean(ys)) for key, ys in groups.items()}

    def predict(self, states, actions) -> np.ndarray:
        return np.array([self.cells.get(key, 0.0) for key in self._keys(states, actions)])

    def to_json_dict(self) -> dict:
        cells = sorted((s, a, q) for (s, a), q in self.cells.items())
        return {"kind": "tabular_mean", "cells": [[s, a, q] for s, a, q in cells]}

    @staticmethod
    def from_json_dict(d: dict) -> "TabularMeanRegressor":
        m = TabularMeanRegressor()
        m.cells = {(int(s), int(a)): float(q) for s, a, q in d["cells"]}
        return m


class KnnRegressor(QModel):
    """Mean of the k nearest training targets (Euclidean over [s, a] rows).

    Neighbor ties at equal distance resolve to the lowest training index.
    """

    def __init__(self, k: int = 5):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)
        self.x: np.ndarray | None = None
        self.y: np.ndarray | None = None

    def fit(self, states, actions, targets, rng=None) -> None:
        self.x = _xy(states, actions)
        self.y = np.asarray(targets, dtype=float).copy()
        if len(self.x) < 1:
            raise ValueError("need at least one training row")

    def predict(self, states, actions) -> np.ndarray:
        if self.x is None:
            raise RuntimeError("predict before fit")
        q = _xy(states, actions)
        k = min(self.k, len(self.x))
        out = np.empty(len(q))
        step = max(1, 2_000_000 // max(len(self.x), 1))
        for i0 in range(0, len(q), step):
            i1 = min(i0 + step, len(q))
            diff = q[i0:i1, None, :] - self.x[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            # stable argsort keeps the lowest index among exact distance ties
            idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
            out[i0:i1] = self.y[idx].mean(axis=1)
        return out

    def to_json_dict(self) -> dict:
        return {"kind": "knn", "k": self.k, "x": self.x.tolist(), "y": self.y.tolist()}

    @staticmethod
    def from_json_dict(d: dict) -> "KnnRegressor":
        m = KnnRegressor(d["k"])
        m.x = np.array(d["x"], dtype=float)
        m.y = np.array(d["y"], dtype=float)
        return m


class _Tree:
    """Flat-array binary tree; feature == -1 marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=int)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=int)
        self.right = np.asarray(right, dtype=int)
        self.value = np.asarray(value, dtype=float)

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(len(x))
        node = np.zeros(len(x), dtype=int)
        active = np.arange(len(x))
        while active.size:
            nd = node[active]
            leaf = self.feature[nd] < 0
            done = active[leaf]
            out[done] = self.value[node[done]]
            active = active[~leaf]
            nd = node[active]
            go_left = x[active, self.feature[nd]] < self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return out


def _build_tree(x: np.ndarray, y: np.ndarray, min_samples_split: int, g) -> _Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    # iterative depth-first build; stack holds (node_id, row indices)
    root = new_node()
    stack = [(root, np.arange(len(x)))]
    while stack:
        node_id, idx = stack.pop()
        rows = x[idx]
        lo = rows.min(axis=0)
        hi = rows.max(axis=0)
        splittable = np.flatnonzero(lo < hi)
        if len(idx) < min_samples_split or splittable.size == 0 or np.all(y[idx] == y[idx[0]]):
            value[node_id] = float(np.mean(y[idx]))
            continue
        f = int(splittable[g.integers(splittable.size)])
        thr = float(g.uniform(lo[f], hi[f]))
        while not (lo[f] < thr < hi[f]):
            thr = float(g.uniform(lo[f], hi[f]))
        mask = rows[:, f] < thr
        feature[node_id] = f
        threshold[node_id] = thr
        left_id = new_node()
        right_id = new_node()
        left[node_id] = left_id
        right[node_id] = right_id
        stack.append((right_id, idx[~mask]))
        stack.append((left_id, idx[mask]))
    return _Tree(feature, threshold, left, right, value)


class ExtraTreesRegressor(QModel):
    """Ensemble of totally randomized trees; prediction is the tree mean."""

    def __init__(self, n_estimators: int = 50, min_samples_split: int = 10):
        if n_estimators < 1 or min_samples_split < 2:
            raise ValueError("need n_estimators >= 1 and min_samples_split >= 2")
        self.n_estimators = int(n_estimators)
        self.min_samples_split = int(min_samples_split)
        self.trees: list[_Tree] = []

    def fit(self, states, actions, targets, rng) -> None:
        g = as_generator(rng)
        x = _xy(states, actions)
        y = np.asarray(targets, dtype=float)
        self.trees = [_build_tree(x, y, self.min_samples_split, g)
                      for _ in range(self.n_estimators)]

    def predict(self, states, actions) -> np.ndarray:
        if not self.trees:
            raise RuntimeError("predict before fit")
        x = _xy(states, actions)
        acc = np.zeros(len(x))
        for tree in self.trees:
            acc += tree.predict(x)
        return acc / len(self.trees)

    def to_json_dict(self) -> dict:
        return {
            "kind": "extra_trees",
            "n_estimators": self.n_estimators,
            "min_samples_split": self.min_samples_split,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in self.trees
            ],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "ExtraTreesRegressor":
        m = ExtraTreesRegressor(d["n_estimators"], d["min_samples_split"])
        m.trees = [_Tree(t["feature"], t["threshold"], t["left"], t["right"], t["value"])
                   for t in d["trees"]]
        return m


class LinearQModel(QModel):
    """q(s, a) = w . phi(s, a) over a finite action grid; used by LSPI."""

    def __init__(self, basis, action_grid):
        self.basis = basis
        self.action_grid = np.asarray(action_grid, dtype=float)
        self.weights: np.ndarray | None = None

    def _action_index(self, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=float)
        idx = np.empty(len(actions), dtype=int)
        for i, a in enumerate(actions):
            match = np.flatnonzero(np.all(self.action_grid == a, axis=1))
            if match.size == 0:
                raise ValueError(f"action {a} is not a grid row")
            idx[i] = match[0]
        return idx

    def fit(self, states, actions, targets, rng=None) -> None:
        raise NotImplementedError("LinearQModel is fitted by the LSPI solver")

    def predict(self, states, actions) -> np.ndarray:
        if self.weights is None:
            raise RuntimeError("predict before the solver set weights")
        phi = self.basis.features(np.asarray(states, dtype=float), self._action_index(actions))
        return phi @ self.weights

    def to_json_dict(self) -> dict:
        return {
            "kind": "linear",
            "weights": self.weights.tolist(),
            "basis": self.basis.to_json_dict(),
            "action_grid": self.action_grid.tolist(),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "LinearQModel":
        from .policygen import basis_from_json

        m = LinearQModel(basis_from_json(d["basis"]), np.array(d["action_grid"], dtype=float))
        m.weights = np.array(d["weights"], dtype=float)
        return m


_MODEL_KINDS = {
    "tabular_mean": TabularMeanRegressor.from_json_dict,
    "knn": KnnRegressor.from_json_dict,
    "extra_trees": ExtraTreesRegressor.from_json_dict,
    "linear": LinearQModel.from_json_dict,
}


def model_from_json(d: dict) -> QModel:
    kind = d.get("kind")
    if kind not in _MODEL_KINDS:
        raise ValueError(f"unknown Q-model kind {kind!r}")
    return _MODEL_KINDS[kind](d)


def make_regressor(name: str, **kwargs) -> QModel:
    """Build a fresh regressor from its config name."""
    if name == "tabular_mean":
        return TabularMeanRegressor()
    if name == "knn":
        return KnnRegressor(k=kwargs.get("k", 5))
    if name == "extra_trees":
        return ExtraTreesRegressor(
            n_estimators=kwargs.get("n_estimators", 50),
            min_samples_split=kwargs.get("min_samples_split", 10),
        )
    raise ValueError(f"unknown regressor {name!r}")
