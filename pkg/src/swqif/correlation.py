"""Correlation basis matrices over a cluster's enrolled period-by-individual grid.

Each basis kind is a rule producing a symmetric 0/1-patterned matrix on a
cluster's stacked rows; linear combinations of bases express working
correlation structures such as exchangeable or first-order autoregressive
dependence.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .design import StackedCluster


class BasisKind(Enum):
    IDENTITY = "identity"
    WITHIN_PERIOD_EXCHANGEABLE = "within_period_exchangeable"
    WITHIN_INDIVIDUAL_ACROSS_PERIODS = "within_individual_across_periods"
    CROSS_PERIOD_CROSS_INDIVIDUAL = "cross_period_cross_individual"
    AR1_ADJACENCY = "ar1_adjacency"


def materialize_basis(kind: BasisKind, periods: np.ndarray, individuals: np.ndarray) -> np.ndarray:
    """Basis matrix for the given row layout (periods/individuals per row)."""
    same_period = periods[:, None] == periods[None, :]
    same_indiv = individuals[:, None] == individuals[None, :]
    if kind is BasisKind.IDENTITY:
        out = np.eye(len(periods))
    elif kind is BasisKind.WITHIN_PERIOD_EXCHANGEABLE:
        out = (same_period & ~same_indiv).astype(float)
    elif kind is BasisKind.WITHIN_INDIVIDUAL_ACROSS_PERIODS:
        out = (same_indiv & ~same_period).astype(float)
    elif kind is BasisKind.CROSS_PERIOD_CROSS_INDIVIDUAL:
        out = (~same_indiv & ~same_period).astype(float)
    elif kind is BasisKind.AR1_ADJACENCY:
        adjacent = np.abs(periods[:, None] - periods[None, :]) == 1
        out = (same_indiv & adjacent).astype(float)
    else:
        raise ValueError(f"unknown basis kind {kind}")
    return out


def weighted_basis(kind: BasisKind, cluster: StackedCluster) -> np.ndarray:
    """The basis conjugated by the enrollment/weighting operator.

    Entry (r, c) is ``w_r * w_c * Q[r, c]`` with the per-row inverse
    square-root period-size weights, which is exactly the dense form of the
    selection-weighted quadratic appearing in the estimating functions.
    """
    q = materialize_basis(kind, cluster.periods, cluster.individuals)
    w = cluster.weights
    return q * np.outer(w, w)


def default_basis_set(individual_randomized: bool) -> tuple[BasisKind, ...]:
    """Basis menus matched to the correlation dimensions of each design."""
    if individual_randomized:
        return (
            BasisKind.IDENTITY,
            BasisKind.WITHIN_INDIVIDUAL_ACROSS_PERIODS,
            BasisKind.AR1_ADJACENCY,
        )
    return (
        BasisKind.IDENTITY,
        BasisKind.WITHIN_PERIOD_EXCHANGEABLE,
        BasisKind.WITHIN_INDIVIDUAL_ACROSS_PERIODS,
        BasisKind.CROSS_PERIOD_CROSS_INDIVIDUAL,
    )
