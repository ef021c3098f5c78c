"""
Latency statistics as four columns: avg, max, min and standard deviation, in milliseconds
with six decimals.

The standard deviation is the population one (ddof=0).
"""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from cubesat_fsw.utils.error_handling import ArtifactIOError, StatsError

STATS_COLUMNS = ["name", "avg_ms", "max_ms", "min_ms", "std_ms", "count"]
TABLE_ROWS = [("avg.(ms)", "avg_ms"), ("max.(ms)", "max_ms"), ("min.(ms)", "min_ms"), ("st.d.(ms)", "std_ms")]


@dataclass(frozen=True)
class LatencyStats:
    name: str
    avg_ms: float
    max_ms: float
    min_ms: float
    std_ms: float
    count: int

    def as_row(self) -> List[str]:
        return [self.name, f"{self.avg_ms:.6f}", f"{self.max_ms:.6f}", f"{self.min_ms:.6f}",
                f"{self.std_ms:.6f}", str(self.count)]


def compute_stats(samples_us: Sequence[int], name: str = "samples") -> LatencyStats:
    """samples in microseconds; rounded to 6 decimals of a millisecond."""
    if len(samples_us) == 0:
        raise StatsError(f"no samples for {name}")
    values = np.asarray(samples_us, dtype=np.float64) / 1000.0
    avg = round(float(values.mean()), 6)
    low = round(float(values.min()), 6)
    high = round(float(values.max()), 6)
    # rounding can push the mean a hair past an extreme when all samples are equal
    avg = min(max(avg, low), high)
    return LatencyStats(
        name=name,
        avg_ms=avg,
        max_ms=high,
        min_ms=low,
        std_ms=round(float(values.std(ddof=0)), 6),
        count=int(values.size),
    )


def stats_by_name(samples: Dict[str, Sequence[int]], names: Iterable[str] = None) -> List[LatencyStats]:
    """One entry per name with at least one sample, in the given or sorted order."""
    ordered = list(names) if names is not None else sorted(samples)
    return [compute_stats(samples[name], name) for name in ordered if samples.get(name)]


def write_stats_csv(entries: Sequence[LatencyStats], path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(STATS_COLUMNS)
            writer.writerows(entry.as_row() for entry in entries)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write stats to {path}: {exc}") from exc
    return path


def read_samples_csv(path: Union[str, Path]) -> Dict[str, List[int]]:
    """
    Reads latency samples for `stats`. Two layouts are accepted:
    a `name,latency_us` table, or a single column of microsecond values.
    """
    path = Path(path)
    samples: Dict[str, List[int]] = {}
    try:
        with path.open(newline="") as handle:
            rows = [row for row in csv.reader(handle) if row and not row[0].startswith("#")]
    except OSError as exc:
        raise ArtifactIOError(f"cannot read samples {path}: {exc}") from exc
    if rows and not _is_number(rows[0][-1]):
        rows = rows[1:]
    for row in rows:
        name, value = (row[0], row[1]) if len(row) > 1 else (path.stem, row[0])
        try:
            samples.setdefault(name, []).append(int(float(value)))
        except ValueError as exc:
            raise ArtifactIOError(f"{path}: not a latency value: {value!r}") from exc
    return samples


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def format_table(entries: Sequence[LatencyStats]) -> str:
    """Statistics as rows and one column per topic."""
    if not entries:
        return "(no samples)"
    names = [entry.name for entry in entries]
    width = max(12, *(len(name) for name in names)) + 2
    lines = ["".ljust(10) + "".join(name.rjust(width) for name in names)]
    for label, attribute in TABLE_ROWS:
        values = "".join(f"{getattr(entry, attribute):.6f}".rjust(width) for entry in entries)
        lines.append(label.ljust(10) + values)
    lines.append("count".ljust(10) + "".join(str(entry.count).rjust(width) for entry in entries))
    return "\n".join(lines)
