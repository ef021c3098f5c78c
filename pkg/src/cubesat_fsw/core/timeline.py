"""
Append-only run timeline and its CSV form.

Rows are ordered by (time, seq); seq is a per-timeline counter, so the order in which
rows are recorded within one instant is preserved. `detail` holds space separated
`key=value` tokens so checks can parse rows back without a second schema.
"""
import csv
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple, Union

from cubesat_fsw.utils.error_handling import ArtifactIOError

COLUMNS = ["time_us", "node", "event_kind", "detail"]


class EventKind(str, Enum):
    STATE_CHANGE = "state_change"
    PUBLISH = "publish"
    DELIVER = "deliver"
    GRANT = "grant"
    ACQUIRE = "acquire"
    RELEASE = "release"
    PROBE = "probe"
    TIMEOUT = "timeout"
    RESTART = "restart"
    REBOOT = "reboot"
    FRAME_OUT = "frame_out"
    LOG = "log"


@dataclass(frozen=True)
class TimelineEvent:
    time: int
    seq: int
    node: str
    event_kind: str
    detail: str

    @property
    def fields(self) -> Dict[str, str]:
        return parse_detail(self.detail)

    def as_row(self) -> List[str]:
        return [str(self.time), self.node, self.event_kind, self.detail]


def format_detail(text: str = "", **fields) -> str:
    tokens = [text] if text else []
    tokens.extend(f"{key}={value}" for key, value in fields.items())
    return " ".join(tokens)


def parse_detail(detail: str) -> Dict[str, str]:
    parsed = {}
    for token in detail.split():
        if "=" in token:
            key, value = token.split("=", 1)
            parsed[key] = value
    return parsed


class Timeline:
    def __init__(self, clock: Callable[[], int], scenario: str = "adhoc", seed: int = 0,
                 mode: str = "deterministic"):
        self._clock = clock
        self.scenario = scenario
        self.seed = seed
        self.mode = mode
        self._events: List[TimelineEvent] = []
        self._seq = 0
        self._lock = threading.Lock()

    @property
    def header(self) -> str:
        return f"# scenario={self.scenario} seed={self.seed} mode={self.mode}"

    @property
    def events(self) -> List[TimelineEvent]:
        return list(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def record(self, node: str, kind: EventKind, text: str = "", /, **fields) -> TimelineEvent:
        with self._lock:
            self._seq += 1
            event = TimelineEvent(
                time=self._clock(),
                seq=self._seq,
                node=node,
                event_kind=kind.value if isinstance(kind, EventKind) else str(kind),
                detail=format_detail(text, **fields),
            )
            self._events.append(event)
            return event

    def select(self, kind: Optional[EventKind] = None, node: Optional[str] = None,
               text: Optional[str] = None, **fields) -> List[TimelineEvent]:
        """Rows matching kind, node, a detail prefix word and exact field values."""
        kind_value = kind.value if isinstance(kind, EventKind) else kind
        matched = []
        for event in self._events:
            if kind_value is not None and event.event_kind != kind_value:
                continue
            if node is not None and event.node != node:
                continue
            if text is not None and not event.detail.startswith(text):
                continue
            if fields:
                parsed = event.fields
                if any(parsed.get(k) != str(v) for k, v in fields.items()):
                    continue
            matched.append(event)
        return matched

    def rows(self) -> List[List[str]]:
        return [event.as_row() for event in self._events]


@dataclass
class TimelineDiff:
    equal: bool
    row: Optional[int] = None
    a_row: Optional[List[str]] = None
    b_row: Optional[List[str]] = None

    def describe(self) -> str:
        if self.equal:
            return "equal"
        return f"first divergence at row {self.row}: {self.a_row} != {self.b_row}"


def export_timeline(timeline: Timeline, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            handle.write(timeline.header + "\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(COLUMNS)
            writer.writerows(timeline.rows())
    except OSError as exc:
        raise ArtifactIOError(f"cannot write timeline to {path}: {exc}") from exc
    return path


def load_timeline(path: Union[str, Path]) -> Tuple[str, List[List[str]]]:
    """Returns (header line, data rows) of an exported timeline."""
    path = Path(path)
    try:
        with path.open(newline="") as handle:
            header = handle.readline().rstrip("\n")
            reader = csv.reader(handle)
            columns = next(reader, None)
            if columns != COLUMNS:
                raise ArtifactIOError(f"{path} is not a timeline file (columns {columns})")
            return header, [row for row in reader]
    except OSError as exc:
        raise ArtifactIOError(f"cannot read timeline {path}: {exc}") from exc


def _rows_of(source: Union[Timeline, str, Path]) -> List[List[str]]:
    if isinstance(source, Timeline):
        return source.rows()
    return load_timeline(source)[1]


def diff_timeline(a: Union[Timeline, str, Path], b: Union[Timeline, str, Path]) -> TimelineDiff:
    """Compares data rows; the header line (scenario, seed, mode) is not compared."""
    rows_a, rows_b = _rows_of(a), _rows_of(b)
    for index, (row_a, row_b) in enumerate(zip(rows_a, rows_b), start=1):
        if row_a != row_b:
            return TimelineDiff(equal=False, row=index, a_row=row_a, b_row=row_b)
    if len(rows_a) != len(rows_b):
        index = min(len(rows_a), len(rows_b)) + 1
        return TimelineDiff(
            equal=False,
            row=index,
            a_row=rows_a[index - 1] if len(rows_a) >= index else None,
            b_row=rows_b[index - 1] if len(rows_b) >= index else None,
        )
    return TimelineDiff(equal=True)


def intervals(events: Iterable[TimelineEvent], opens: Callable[[TimelineEvent], bool],
              closes: Callable[[TimelineEvent], bool], end_time: int) -> List[Tuple[int, int]]:
    """Pairs opening and closing rows into [start, end) intervals; open tails end at end_time."""
    spans = []
    start = None
    for event in events:
        if start is None and opens(event):
            start = event.time
        elif start is not None and closes(event):
            spans.append((start, event.time))
            start = None
    if start is not None:
        spans.append((start, end_time))
    return spans
