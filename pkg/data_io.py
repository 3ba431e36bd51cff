"""
Datasets In and Out
Synthetic generators for the simulation designs, CSV ingestion of real data and
CSV emission of datasets and experiment results

CSV files are UTF-8, comma-separated, with a header row and '.' as decimal point.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from dp_primitives import RandomSource
from errors import (InvalidConfig, InvalidSpec, MissingColumn, MoreThanTwoGroups,
                    ParseError, ResultsWriteError)
from linear_model import Dataset, GroupedDataset

logger = logging.getLogger(__name__)

RESULTS_HEADER = ["tester", "n", "rho", "delta", "alpha", "K", "trials",
                  "reject_rate", "stderr"]

AnyDataset = Union[Dataset, GroupedDataset]


# ---------------------------------------------------------------------------
# Distributions of the independent variable
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise InvalidSpec(f"Normal sd must be positive, got {self.sd}")

    def sample(self, rng: RandomSource, size) -> np.ndarray:
        return rng.normal(self.mean, self.sd, size)

    @property
    def expected(self) -> float:
        return self.mean

    @property
    def variance(self) -> float:
        return self.sd ** 2


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidSpec(f"Uniform needs lo < hi, got [{self.lo}, {self.hi}]")

    def sample(self, rng: RandomSource, size) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size)

    @property
    def expected(self) -> float:
        return (self.lo + self.hi) / 2

    @property
    def variance(self) -> float:
        return (self.hi - self.lo) ** 2 / 12


@dataclass(frozen=True)
class Exponential:
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidSpec(f"Exponential scale must be positive, got {self.scale}")

    def sample(self, rng: RandomSource, size) -> np.ndarray:
        return rng.exponential(self.scale, size)

    @property
    def expected(self) -> float:
        return self.scale

    @property
    def variance(self) -> float:
        return self.scale ** 2


@dataclass(frozen=True)
class LogNormal:
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidSpec(f"LogNormal sigma must be positive, got {self.sigma}")

    def sample(self, rng: RandomSource, size) -> np.ndarray:
        return rng.lognormal(self.mu, self.sigma, size)

    @property
    def expected(self) -> float:
        return float(np.exp(self.mu + self.sigma ** 2 / 2))

    @property
    def variance(self) -> float:
        return float((np.exp(self.sigma ** 2) - 1) * np.exp(2 * self.mu + self.sigma ** 2))


XDistribution = Union[Normal, Uniform, Exponential, LogNormal]


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureSpec:
    """Second line of a mixture design"""
    slope2: float          # slope of group 2 (group 1 uses GeneratorSpec.slope)
    frac1: float = 0.5     # share of rows in group 1, in (0, 1)


@dataclass(frozen=True)
class GeneratorSpec:
    """
    Synthetic design: y = intercept + slope * x + N(0, sigma_e^2)

    With a mixture, both groups pass through the origin and group g uses its own slope.
    """
    x_dist: XDistribution = Normal(0.5, 1.0)
    slope: float = 1.0                     # beta1
    intercept: float = 0.0                 # beta2, linear designs only
    sigma_e: float = 0.35                  # noise standard deviation
    n: int = 500                           # rows
    mixture: Optional[MixtureSpec] = None

    def __post_init__(self):
        if self.n < 4:
            raise InvalidSpec(f"n must be at least 4, got {self.n}")
        if not (np.isfinite(self.sigma_e) and self.sigma_e >= 0):
            raise InvalidSpec(f"sigma_e must be a nonnegative real, got {self.sigma_e}")
        if self.mixture is not None:
            if not 0 < self.mixture.frac1 < 1:
                raise InvalidSpec(f"frac1 must be in (0, 1), got {self.mixture.frac1}")
            if self.n1 < 2 or self.n - self.n1 < 2:
                raise InvalidSpec(f"mixture groups too small: {self.n1} and {self.n - self.n1}")

    @property
    def n1(self) -> Optional[int]:
        if self.mixture is None:
            return None
        return int(np.floor(self.mixture.frac1 * self.n))

    def null(self) -> "GeneratorSpec":
        """Same design with the null hypothesis made true"""
        if self.mixture is None:
            return replace(self, slope=0.0)
        return replace(self, mixture=replace(self.mixture, slope2=self.slope))

    def with_n(self, n: int) -> "GeneratorSpec":
        return replace(self, n=n)


def generate_batch(spec: GeneratorSpec, size: int,
                   rng: RandomSource) -> Tuple[np.ndarray, np.ndarray]:
    """size independent datasets as (size, n) arrays of x and y"""
    x = spec.x_dist.sample(rng, (size, spec.n))
    e = rng.normal(0.0, spec.sigma_e, (size, spec.n))
    if spec.mixture is None:
        return x, spec.intercept + spec.slope * x + e
    slopes = np.where(np.arange(spec.n) < spec.n1, spec.slope, spec.mixture.slope2)
    return x, slopes * x + e


def generate(spec: GeneratorSpec, rng: RandomSource) -> AnyDataset:
    """One dataset drawn from spec; GroupedDataset for mixture designs"""
    x, y = generate_batch(spec, 1, rng)
    if spec.mixture is None:
        return Dataset(x[0], y[0])
    return GroupedDataset(x[0], y[0], spec.n1)


def subsample(data: AnyDataset, fraction: float, rng: RandomSource) -> AnyDataset:
    """
    Keep a random fraction of rows (per group for grouped data), preserving row order
    """
    if not 0 < fraction <= 1:
        raise InvalidConfig(f"fraction must be in (0, 1], got {fraction}")

    def pick(lo: int, hi: int) -> np.ndarray:
        keep = max(1, int(round(fraction * (hi - lo))))
        return lo + np.sort(rng.choice(hi - lo, size=keep, replace=False))

    if isinstance(data, GroupedDataset):
        i1, i2 = pick(0, data.n1), pick(data.n1, data.n)
        idx = np.concatenate([i1, i2])
        return GroupedDataset(data.x[idx], data.y[idx], i1.size)
    idx = pick(0, data.n)
    return Dataset(data.x[idx], data.y[idx])


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _numeric_column(df: pd.DataFrame, column: str) -> np.ndarray:
    raw = df[column].str.strip()
    bad = ~np.isfinite(pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float))
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise ParseError(f"cannot parse {df[column].iloc[row]!r} as a real number",
                         row=row + 1, column=column)
    # correctly rounded, so %.17g output reads back bit-exact
    return raw.astype(float).to_numpy()


def read_csv(path, x_col: str = "x", y_col: str = "y",
             group_col: Optional[str] = None) -> AnyDataset:
    """
    Read a dataset from CSV

    Args:
        path: CSV file with a header row
        x_col: Column holding the independent variable
        y_col: Column holding the dependent variable
        group_col: Optional label column; the first label seen becomes group 1

    Returns:
        Dataset, or GroupedDataset when group_col is given

    Raises:
        ParseError: malformed file or a value that is not a real number
        MissingColumn: a named column is absent from the header
        MoreThanTwoGroups: group_col holds more than two labels
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path} is empty")
    except pd.errors.ParserError as exc:
        raise ParseError(f"{path}: {exc}")

    wanted = [x_col, y_col] + ([group_col] if group_col else [])
    for column in wanted:
        if column not in df.columns:
            raise MissingColumn(f"column {column!r} not found; header is {list(df.columns)}")
    if len(df) == 0:
        raise ParseError(f"{path} has a header but no data rows")

    x = _numeric_column(df, x_col)
    y = _numeric_column(df, y_col)
    logger.info("read %d rows from %s (x=%s, y=%s)", len(df), path, x_col, y_col)
    if not group_col:
        return Dataset(x, y)

    labels = df[group_col].to_numpy()
    seen = pd.unique(labels)
    if len(seen) > 2:
        raise MoreThanTwoGroups(f"column {group_col!r} has {len(seen)} labels: "
                                f"{list(seen[:5])}")
    if len(seen) < 2:
        raise InvalidConfig(f"column {group_col!r} has a single label {seen[0]!r}")
    first = labels == seen[0]
    order = np.concatenate([np.flatnonzero(first), np.flatnonzero(~first)])
    return GroupedDataset(x[order], y[order], int(first.sum()))


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def _write_frame(df: pd.DataFrame, path, **kwargs) -> None:
    try:
        df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8", **kwargs)
    except OSError as exc:
        raise ResultsWriteError(f"cannot write {path}: {exc}") from exc


def write_dataset_csv(data: AnyDataset, path, x_col: str = "x", y_col: str = "y",
                      group_col: str = "group") -> None:
    """Write data with 17 significant digits so read_csv gives back the same floats"""
    frame = {x_col: data.x, y_col: data.y}
    if isinstance(data, GroupedDataset):
        frame[group_col] = np.where(np.arange(data.n) < data.n1, 1, 2)
    _write_frame(pd.DataFrame(frame), path, float_format="%.17g")


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.6g" % value
    return str(value)


def write_results_csv(rows: Iterable, path) -> None:
    """
    Write rejection estimates, one row per record in the order given

    Each record provides as_row() -> dict keyed by RESULTS_HEADER. Reals use
    6 significant digits; a missing value (e.g. delta for a rank test) is empty.
    """
    records = [[_fmt(row.as_row()[key]) for key in RESULTS_HEADER] for row in rows]
    df = pd.DataFrame(records, columns=RESULTS_HEADER, dtype=str)
    _write_frame(df, path)
    logger.info("wrote %d result rows to %s", len(records), Path(path))


def write_table_csv(records: Sequence[dict], path) -> None:
    """Write flat dict records (keys of the first record give the header) like results"""
    columns = list(records[0]) if records else []
    df = pd.DataFrame([[_fmt(r[c]) for c in columns] for r in records],
                      columns=columns, dtype=str)
    _write_frame(df, path)


def read_results_csv(path) -> pd.DataFrame:
    """Read a file written by write_results_csv (empty cells become NaN)"""
    try:
        return pd.read_csv(path, dtype={"tester": str})
    except pd.errors.ParserError as exc:
        raise ParseError(f"{path}: {exc}")


if __name__ == "__main__":
    print("=" * 60)
    print("SYNTHETIC DATA")
    print("=" * 60)

    rng = RandomSource(seed=5)
    spec = GeneratorSpec(Normal(0.5, 1.0), slope=1.0, sigma_e=0.35, n=1000)
    d = generate(spec, rng)
    print(f"\nLinear: n={d.n}, mean x={d.x.mean():.3f}, corr={np.corrcoef(d.x, d.y)[0, 1]:.3f}")

    mix = GeneratorSpec(Uniform(-1, 1), slope=-1.0, sigma_e=1.0, n=200,
                        mixture=MixtureSpec(slope2=1.0, frac1=1 / 8))
    g = generate(mix, rng)
    print(f"Mixture: n1={g.n1}, n2={g.n2}")
