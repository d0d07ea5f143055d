"""Data-preparation units: imputation of missing values.

Missing entries are NaN in memory (null in the JSONL form).  Both units treat
a transition as one row [s | a | r | s'] so every column of the dataset is
imputable, and both are the identity on already-complete datasets.
"""
from __future__ import annotations

import numpy as np

from ..core import Dataset, Transition


class ImputationError(ValueError):
    """Raised when a dataset cannot be imputed (no observed values to copy)."""


def _rows(d: Dataset) -> np.ndarray:
    return np.concatenate(
        [d.states(), d.actions(), d.rewards()[:, None], d.next_states()], axis=1)


def _rebuild(d: Dataset, rows: np.ndarray) -> Dataset:
    ds, da = d.state_dim, d.action_dim
    transitions = []
    for tr, row in zip(d.transitions, rows):
        transitions.append(Transition(
            row[:ds], row[ds:ds + da], float(row[ds + da]),
            row[ds + da + 1:], tr.absorbing, tr.last))
    return Dataset(tuple(transitions), d.trajectory_offsets)


def dp_mean_impute(d: Dataset) -> Dataset:
    """Replace each missing entry with the column mean of the observed values."""
    rows = _rows(d)
    missing = np.isnan(rows)
    if not missing.any():
        return d
    for col in range(rows.shape[1]):
        miss = missing[:, col]
        if not miss.any():
            continue
        observed = rows[~miss, col]
        if observed.size == 0:
            raise ImputationError(f"column {col} has no observed values to average")
        rows[miss, col] = observed.mean()
    return _rebuild(d, rows)


def dp_1nn_impute(d: Dataset) -> Dataset:
    """Copy missing entries from the nearest fully-observed row.

    Distance is Euclidean over the coordinates the incomplete row observes;
    ties go to the lowest donor row index.
    """
    rows = _rows(d)
    missing = np.isnan(rows)
    if not missing.any():
        return d
    complete = np.flatnonzero(~missing.any(axis=1))
    if complete.size == 0:
        raise ImputationError("no fully-observed row to copy from")
    donors = rows[complete]
    for i in np.flatnonzero(missing.any(axis=1)):
        observed = ~missing[i]
        diff = donors[:, observed] - rows[i, observed]
        d2 = (diff * diff).sum(axis=1)
        donor = donors[int(np.argmin(d2))]
        rows[i, missing[i]] = donor[missing[i]]
    return _rebuild(d, rows)
