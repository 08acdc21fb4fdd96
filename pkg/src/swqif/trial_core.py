"""Immutable data model for stepped-wedge trial data, validation, and CSV ingestion.

Data are held in long-per-cluster form: each cluster carries its population
covariate matrix, a treatment sequence (the period at which it crosses over,
or ``NEVER_TREATED``), and period-by-individual enrollment/outcome matrices.
Absence of an observation is what defines non-enrollment.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InconsistentSequence, ParseError, SchemaError

#: Sequence value for clusters that never cross over to treatment.  Stored as
#: IEEE infinity so that ordering tests like ``sequence <= period`` stay valid.
NEVER_TREATED: float = math.inf


class TreatmentStructure(Enum):
    """How the treatment effect is allowed to vary over time and exposure."""

    CONSTANT = "constant"
    DURATION = "duration"
    PERIOD = "period"
    SATURATED = "saturated"


@dataclass(frozen=True)
class ClusterData:
    """One cluster's observed data.

    ``covariates`` has one row per population individual; ``enrollment`` and
    ``outcomes`` are period-by-individual matrices (J x N_i).  Outcomes are
    NaN wherever the individual is not enrolled in that period.
    """

    cluster_id: str
    sequence: float  # period in {1..J} or NEVER_TREATED
    covariates: np.ndarray  # (N_i, q) float
    enrollment: np.ndarray  # (J, N_i) bool
    outcomes: np.ndarray  # (J, N_i) float, NaN where not enrolled
    individual_ids: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("covariates", "enrollment", "outcomes"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_population(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_periods(self) -> int:
        return self.enrollment.shape[0]

    @property
    def period_sizes(self) -> np.ndarray:
        """Observed cluster-period sizes N_ij, shape (J,)."""
        return self.enrollment.sum(axis=1)


@dataclass(frozen=True)
class TrialDataset:
    """An ordered collection of clusters sharing J periods and q covariates.

    ``sequence_probs`` is the randomization distribution over sequences
    ``(1, ..., J, never)`` as a length J+1 vector, or None to mark that the
    empirical frequencies should be used.
    """

    clusters: tuple[ClusterData, ...]
    n_periods: int
    sequence_probs: np.ndarray | None = None

    def __post_init__(self):
        if self.sequence_probs is not None:
            self.sequence_probs.setflags(write=False)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_covariates(self) -> int:
        return self.clusters[0].covariates.shape[1] if self.clusters else 0

    def effective_sequence_probs(self) -> np.ndarray:
        """Design probabilities if given, empirical frequencies otherwise."""
        if self.sequence_probs is not None:
            return self.sequence_probs
        return empirical_sequence_probs(self)


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by :func:`validate`."""

    rule: str
    cluster_id: str | None = None
    period: int | None = None
    individual: int | None = None
    message: str = ""

    def __str__(self):
        where = [p for p in (self.cluster_id, self.period, self.individual) if p is not None]
        loc = f" at ({', '.join(str(w) for w in where)})" if where else ""
        return f"{self.rule}{loc}: {self.message}"


def validate(dataset: TrialDataset) -> list[Violation]:
    """Check every dataset invariant; returns an empty list iff all hold."""
    out: list[Violation] = []
    probs = dataset.sequence_probs
    if probs is not None:
        if probs.shape != (dataset.n_periods + 1,):
            out.append(Violation("ProbShapeViolation", message=f"expected length {dataset.n_periods + 1}, got {probs.shape}"))
        else:
            if np.any(probs < 0):
                out.append(Violation("ProbNegativeViolation", message="sequence probabilities must be nonnegative"))
            if abs(float(probs.sum()) - 1.0) > 1e-12:
                out.append(Violation("ProbSumViolation", message=f"sequence probabilities sum to {probs.sum():.6g}"))

    q = dataset.n_covariates
    sequences = set()
    for c in dataset.clusters:
        if c.n_periods != dataset.n_periods:
            out.append(Violation("PeriodCountViolation", c.cluster_id, message=f"cluster has {c.n_periods} periods, dataset has {dataset.n_periods}"))
        if c.covariates.shape[1] != q:
            out.append(Violation("CovariateDimViolation", c.cluster_id, message=f"covariate dimension {c.covariates.shape[1]} != {q}"))
        if c.n_population < 1:
            out.append(Violation("EmptyPopulationViolation", c.cluster_id, message="cluster has no individuals"))
        if not np.all(np.isfinite(c.covariates)):
            out.append(Violation("NonFiniteCovariate", c.cluster_id, message="covariates must be finite"))
        seq_ok = c.sequence == NEVER_TREATED or (
            float(c.sequence).is_integer() and 1 <= c.sequence <= dataset.n_periods
        )
        if not seq_ok:
            out.append(Violation("SequenceRangeViolation", c.cluster_id, message=f"sequence {c.sequence} not in 1..{dataset.n_periods} or never-treated"))
        sequences.add(c.sequence)
        if c.enrollment.shape != c.outcomes.shape:
            out.append(Violation("ShapeMismatchViolation", c.cluster_id, message="enrollment and outcomes shapes differ"))
            continue
        enrolled = c.enrollment
        finite = np.isfinite(c.outcomes)
        for j, k in zip(*np.nonzero(~enrolled & finite)):
            out.append(Violation("OrphanOutcome", c.cluster_id, int(j) + 1, int(k), "outcome present where not enrolled"))
        for j, k in zip(*np.nonzero(enrolled & ~finite)):
            out.append(Violation("MissingOutcome", c.cluster_id, int(j) + 1, int(k), "enrolled cell lacks a finite outcome"))
    if len(sequences) < 2:
        out.append(Violation("SingleSequenceViolation", message="at least two distinct sequences are required for a contrast"))
    return out


def empirical_sequence_probs(dataset: TrialDataset) -> np.ndarray:
    """Observed sequence frequencies over (1..J, never-treated)."""
    counts = np.zeros(dataset.n_periods + 1)
    for c in dataset.clusters:
        if c.sequence == NEVER_TREATED:
            counts[-1] += 1
        else:
            counts[int(c.sequence) - 1] += 1
    return counts / dataset.n_clusters


DEFAULT_SCHEMA = {
    "cluster": "cluster",
    "period": "period",
    "individual": "individual",
    "z": "z",
    "y": "y",
    "covariates": None,  # default: every x1..xq style column found in the header
}


def _parse_sequence(token: str) -> float:
    if token.strip().lower() in ("inf", "+inf", "infinity", "never"):
        return NEVER_TREATED
    try:
        z = float(token)
    except ValueError as exc:
        raise ParseError(f"bad sequence value {token!r}") from exc
    if not z.is_integer() or z < 1:
        raise ParseError(f"sequence must be a positive integer or 'inf', got {token!r}")
    return z


def ingest_csv(
    path,
    schema: dict | None = None,
    n_periods: int | None = None,
    sequence_probs: np.ndarray | None = None,
) -> TrialDataset:
    """Read a long-format CSV (one row per observed individual-period).

    Missing (cluster, period, individual) rows mean the individual was not
    enrolled in that period.  Rows with period 0 (a pre-randomization
    baseline) are ignored; baseline measurements intended as covariates must
    be supplied as covariate columns.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        col = {}
        for key in ("cluster", "period", "individual", "z", "y"):
            name = schema[key]
            if name not in header:
                raise SchemaError(f"{path}: missing required column {name!r}")
            col[key] = header.index(name)
        cov_names = schema["covariates"]
        if cov_names is None:
            known = {schema[k] for k in ("cluster", "period", "individual", "z", "y")}
            cov_names = [h for h in header if h not in known]
        for name in cov_names:
            if name not in header:
                raise SchemaError(f"{path}: missing covariate column {name!r}")
        cov_idx = [header.index(n) for n in cov_names]

        # cluster -> {"z": float, "indiv": {id: covariates}, "cells": {(period, id): y}}
        raw: dict[str, dict] = {}
        max_period = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            cid = row[col["cluster"]].strip()
            try:
                period = int(row[col["period"]])
                y = float(row[col["y"]])
                x = tuple(float(row[i]) for i in cov_idx)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            z = _parse_sequence(row[col["z"]])
            ind = row[col["individual"]].strip()
            if period == 0:
                continue
            if period < 0:
                raise ParseError(f"{path}:{lineno}: negative period {period}")
            max_period = max(max_period, period)
            rec = raw.setdefault(cid, {"z": z, "indiv": {}, "cells": {}})
            if rec["z"] != z:
                raise InconsistentSequence(f"{path}:{lineno}: cluster {cid!r} has sequences {rec['z']} and {z}")
            if ind in rec["indiv"] and rec["indiv"][ind] != x:
                raise ParseError(f"{path}:{lineno}: individual {cid!r}/{ind!r} has conflicting covariates")
            rec["indiv"].setdefault(ind, x)
            if (period, ind) in rec["cells"]:
                raise ParseError(f"{path}:{lineno}: duplicate row for cluster {cid!r}, period {period}, individual {ind!r}")
            rec["cells"][(period, ind)] = y

    if not raw:
        raise ParseError(f"{path}: no data rows")
    J = n_periods if n_periods is not None else max_period
    clusters = []
    for cid in sorted(raw, key=str):
        rec = raw[cid]
        ids = sorted(rec["indiv"], key=str)
        pos = {ind: k for k, ind in enumerate(ids)}
        n = len(ids)
        cov = np.array([rec["indiv"][ind] for ind in ids], dtype=float).reshape(n, len(cov_idx))
        enrolled = np.zeros((J, n), dtype=bool)
        outcomes = np.full((J, n), np.nan)
        for (period, ind), y in rec["cells"].items():
            if period > J:
                raise ParseError(f"{path}: cluster {cid!r} has period {period} > J={J}")
            enrolled[period - 1, pos[ind]] = True
            outcomes[period - 1, pos[ind]] = y
        clusters.append(ClusterData(cid, rec["z"], cov, enrolled, outcomes, tuple(ids)))
    return TrialDataset(tuple(clusters), J, sequence_probs)


def export_csv(dataset: TrialDataset, path, schema: dict | None = None) -> None:
    """Write one row per enrolled individual-period; inverse of :func:`ingest_csv`."""
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    cov_names = schema["covariates"]
    if cov_names is None:
        cov_names = [f"x{i + 1}" for i in range(dataset.n_covariates)]
    header = [schema["cluster"], schema["period"], schema["individual"], schema["z"], schema["y"], *cov_names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for c in dataset.clusters:
            z = "inf" if c.sequence == NEVER_TREATED else str(int(c.sequence))
            ids = c.individual_ids or tuple(str(k) for k in range(c.n_population))
            for j in range(c.n_periods):
                for k in np.nonzero(c.enrollment[j])[0]:
                    writer.writerow(
                        [c.cluster_id, j + 1, ids[k], z, repr(float(c.outcomes[j, k]))]
                        + [repr(float(v)) for v in c.covariates[k]]
                    )
