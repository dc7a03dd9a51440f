"""Design-matrix construction with named columns and categorical blocks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ColumnMismatch, ConstantColumn


@dataclass(frozen=True)
class PredictorSpec:
    """One model predictor: a numeric column or a categorical column to
    be expanded into indicators against its most frequent category."""

    name: str
    categorical: bool = False


@dataclass
class DesignMatrix:
    X: np.ndarray                 # (n, p), float64, no intercept column
    columns: list                 # expanded column names
    groups: dict                  # predictor name -> list of column indices
    references: dict = field(default_factory=dict)  # categorical -> ref level
    n_excluded: int = 0           # rows dropped for missing values
    row_index: np.ndarray = None  # positions of kept rows in the input

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, predictors):
        """New DesignMatrix restricted to the named predictors."""
        idx = []
        groups = {}
        for name in predictors:
            if name not in self.groups:
                raise ColumnMismatch(name)
            groups[name] = list(range(len(idx),
                                      len(idx) + len(self.groups[name])))
            idx.extend(self.groups[name])
        return DesignMatrix(
            X=self.X[:, idx],
            columns=[self.columns[i] for i in idx],
            groups=groups,
            references={k: v for k, v in self.references.items()
                        if k in groups},
            n_excluded=self.n_excluded,
            row_index=self.row_index,
        )


def build_design(frame: pd.DataFrame, predictors,
                 allow_constant=False) -> DesignMatrix:
    """Expand a data frame into a named design matrix.

    Complete-case: rows with a missing value in any used column are
    dropped and counted.  Constant expanded columns are rejected unless
    ``allow_constant`` (screening treats them as unstable fits instead).
    """
    names = [p.name for p in predictors]
    used = frame[names]
    keep = ~used.isna().any(axis=1)
    kept = used.loc[keep]
    cols = []
    col_names = []
    groups = {}
    references = {}
    for spec in predictors:
        series = kept[spec.name]
        start = len(cols)
        if spec.categorical:
            levels = series.value_counts(sort=True)
            # reference = most frequent; deterministic tie-break by label
            ref = sorted(levels.index,
                         key=lambda v: (-levels[v], str(v)))[0]
            references[spec.name] = ref
            others = sorted((lv for lv in levels.index if lv != ref),
                            key=str)
            for lv in others:
                cols.append((series == lv).to_numpy(dtype=np.float64))
                col_names.append(f"{spec.name}[{lv}]")
        else:
            cols.append(series.to_numpy(dtype=np.float64))
            col_names.append(spec.name)
        groups[spec.name] = list(range(start, len(cols)))
    X = (np.column_stack(cols) if cols
         else np.empty((int(keep.sum()), 0), dtype=np.float64))
    if not allow_constant:
        for j, cname in enumerate(col_names):
            if X.shape[0] and np.ptp(X[:, j]) == 0:
                raise ConstantColumn(cname)
    return DesignMatrix(X=X, columns=col_names, groups=groups,
                        references=references,
                        n_excluded=int((~keep).sum()),
                        row_index=np.flatnonzero(keep.to_numpy()))
