"""Per-cluster stacked design objects for each treatment-effect structure.

For every enrolled individual-period cell the stacked object carries the
treatment design row, its randomization expectation, and the inverse
square-root period-size weight that realizes equal per-period weighting in
the estimating equations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyCluster, PeriodOutOfRange
from .trial_core import NEVER_TREATED, ClusterData, TreatmentStructure


@dataclass(frozen=True)
class DesignConfig:
    structure: TreatmentStructure
    n_periods: int
    sequence_probs: np.ndarray  # length J+1, last entry = never-treated
    include_last_period: bool = False

    def __post_init__(self):
        probs = np.asarray(self.sequence_probs, dtype=float)
        object.__setattr__(self, "sequence_probs", probs)
        probs.setflags(write=False)
        if probs.shape != (self.n_periods + 1,):
            raise ValueError(f"sequence_probs must have length {self.n_periods + 1}")
        if self.include_last_period:
            if self.structure not in (TreatmentStructure.PERIOD, TreatmentStructure.SATURATED):
                raise ValueError("include_last_period only applies to period/saturated structures")
            if probs[-1] <= 0:
                raise ValueError("include_last_period requires a positive never-treated probability")

    @property
    def n_params(self) -> int:
        return param_dim(self.structure, self.n_periods, self.include_last_period)

    def period_range(self) -> range:
        """Periods contributing rows (and coefficients) under this structure."""
        if self.structure in (TreatmentStructure.CONSTANT, TreatmentStructure.DURATION):
            return range(1, self.n_periods + 1)
        last = self.n_periods if self.include_last_period else self.n_periods - 1
        return range(1, last + 1)


def param_dim(structure: TreatmentStructure, n_periods: int, include_last_period: bool = False) -> int:
    """Number of treatment-effect coefficients."""
    J = n_periods
    if structure is TreatmentStructure.CONSTANT:
        return 1
    if structure is TreatmentStructure.DURATION:
        return J
    if structure is TreatmentStructure.PERIOD:
        return (J - 1) + (1 if include_last_period else 0)
    return (J - 1) * J // 2 + (J if include_last_period else 0)


def _saturated_offset(period: int) -> int:
    # block for period j starts after blocks of widths 1, 2, ..., j-1
    return period * (period - 1) // 2


def treatment_row(
    structure: TreatmentStructure,
    n_periods: int,
    sequence: float,
    period: int,
    include_last_period: bool = False,
) -> np.ndarray:
    """Design row for one individual-period cell given the cluster's sequence.

    Constant: the exposure indicator.  Duration: indicator of each exposure
    duration d placed at coordinate d-1.  Period: exposure indicator in the
    period's own coordinate.  Saturated: the duration indicators inside the
    period's block.
    """
    J = n_periods
    p = param_dim(structure, J, include_last_period)
    last = J if structure in (TreatmentStructure.CONSTANT, TreatmentStructure.DURATION) or include_last_period else J - 1
    if not 1 <= period <= last:
        raise PeriodOutOfRange(f"period {period} outside 1..{last} for {structure.value}")
    row = np.zeros(p)
    treated = sequence <= period
    if structure is TreatmentStructure.CONSTANT:
        row[0] = 1.0 if treated else 0.0
    elif structure is TreatmentStructure.DURATION:
        if treated:
            d = period - int(sequence) + 1  # exposure duration, 1..period
            row[d - 1] = 1.0
    elif structure is TreatmentStructure.PERIOD:
        if treated:
            row[period - 1] = 1.0
    else:  # saturated
        if treated:
            d = period - int(sequence) + 1
            row[_saturated_offset(period) + d - 1] = 1.0
    return row


def expected_treatment_row(
    structure: TreatmentStructure,
    n_periods: int,
    sequence_probs: np.ndarray,
    period: int,
    include_last_period: bool = False,
) -> np.ndarray:
    """Randomization expectation of :func:`treatment_row` under the design."""
    sequences = list(range(1, n_periods + 1)) + [NEVER_TREATED]
    out = np.zeros(param_dim(structure, n_periods, include_last_period))
    for z, prob in zip(sequences, np.asarray(sequence_probs, dtype=float)):
        if prob:
            out += prob * treatment_row(structure, n_periods, z, period, include_last_period)
    return out


def param_labels(config: DesignConfig) -> list[str]:
    """Human-readable coefficient labels in design-column order."""
    s, J = config.structure, config.n_periods
    if s is TreatmentStructure.CONSTANT:
        return ["Delta"]
    if s is TreatmentStructure.DURATION:
        return [f"Delta(d={d})" for d in range(1, J + 1)]
    if s is TreatmentStructure.PERIOD:
        return [f"Delta_{j}" for j in config.period_range()]
    return [f"Delta_{j}({d})" for j in config.period_range() for d in range(1, j + 1)]


@dataclass(frozen=True)
class StackedCluster:
    """One cluster's enrolled rows, stacked period-major then individual.

    ``g_hat`` holds cross-fitted outcome predictions; it is zero until filled
    (an all-zero vector is exactly the unadjusted analysis).  ``weights`` are
    N_ij^{-1/2} per row so that ``weights**2`` realizes the per-period
    averaging of the squared-loss criterion.
    """

    cluster_id: str
    periods: np.ndarray  # (R,) int, 1-based period of each row
    individuals: np.ndarray  # (R,) int, population index of each row
    design: np.ndarray  # (R, p)
    design_mean: np.ndarray  # (R, p)
    weights: np.ndarray  # (R,)
    y: np.ndarray  # (R,)
    g_hat: np.ndarray  # (R,)
    dropped_periods: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("periods", "individuals", "design", "design_mean", "weights", "y", "g_hat"):
            getattr(self, name).setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    @property
    def centered(self) -> np.ndarray:
        return self.design - self.design_mean

    def with_g_hat(self, g_hat: np.ndarray) -> "StackedCluster":
        g_hat = np.asarray(g_hat, dtype=float)
        if g_hat.shape != self.y.shape:
            raise ValueError("g_hat must have one entry per stacked row")
        return replace(self, g_hat=g_hat)


def stack_cluster(cluster: ClusterData, config: DesignConfig) -> StackedCluster:
    """Build the stacked design for one cluster.

    Periods with no enrolled individuals contribute no rows; periods outside
    the structure's range are dropped entirely.
    """
    period_rows: list[np.ndarray] = []
    meta: list[tuple[int, np.ndarray, float]] = []
    dropped = []
    for j in config.period_range():
        enrolled = np.nonzero(cluster.enrollment[j - 1])[0]
        if enrolled.size == 0:
            dropped.append(j)
            continue
        meta.append((j, enrolled, enrolled.size))
    if not meta:
        raise EmptyCluster(f"cluster {cluster.cluster_id!r} has no enrolled cells in the estimable period range")

    periods, indivs, w, ys = [], [], [], []
    d_rows, m_rows = [], []
    for j, enrolled, n_ij in meta:
        d = treatment_row(config.structure, config.n_periods, cluster.sequence, j, config.include_last_period)
        m = expected_treatment_row(config.structure, config.n_periods, config.sequence_probs, j, config.include_last_period)
        for k in enrolled:
            periods.append(j)
            indivs.append(int(k))
            w.append(1.0 / np.sqrt(n_ij))
            ys.append(float(cluster.outcomes[j - 1, k]))
            d_rows.append(d)
            m_rows.append(m)
    n = len(ys)
    return StackedCluster(
        cluster_id=cluster.cluster_id,
        periods=np.array(periods, dtype=int),
        individuals=np.array(indivs, dtype=int),
        design=np.array(d_rows),
        design_mean=np.array(m_rows),
        weights=np.array(w),
        y=np.array(ys),
        g_hat=np.zeros(n),
        dropped_periods=tuple(dropped),
    )
