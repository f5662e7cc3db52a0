"""Delay-matrix ingestion and delay-class assignment.

A delay matrix holds one-way delays in milliseconds between every pair of
emulated nodes. The pipeline is: load (or subsample) a matrix, optionally
inflate it by a global factor, quantize entries to multiples of a quantum,
then group unordered node pairs by quantized delay into classes. Each class
receives an integer mark: classes are sorted by delay ascending and the mark
is the 1-based position in that order. Marks later drive both the firewall
marking rules and the queueing-tree filters.

All operations are pure; matrices and class maps are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import IO, Iterator, Mapping, Sequence, Union

import numpy as np

from .errors import ConfigError, ShapeError, SizeError, SymmetryError

ROUNDING_MODES = ("nearest-half-up", "floor", "ceil")

Factor = Union[int, float, Fraction]


def _freeze(entries: np.ndarray) -> np.ndarray:
    # Always copy: freezing a caller-owned array in place would be a surprise.
    out = np.array(entries, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DelayMatrix:
    """Symmetric n-by-n matrix of one-way delays in milliseconds."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        e = _freeze(self.entries)
        object.__setattr__(self, "entries", e)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ShapeError(f"expected a square matrix, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("matrix contains NaN or infinite entries")
        if np.any(e < 0):
            raise ValueError("matrix contains negative delays")
        if np.any(np.diag(e) != 0):
            raise ValueError("matrix diagonal must be all zeros")
        if not np.array_equal(e, e.T):
            i, j = np.argwhere(e != e.T)[0]
            raise SymmetryError(
                f"entry [{i}][{j}]={e[i, j]} differs from [{j}][{i}]={e[j, i]}"
            )

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def max_delay_ms(self) -> float:
        return float(self.entries.max()) if self.n else 0.0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DelayMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)


@dataclass(frozen=True)
class QuantizationPolicy:
    """How raw delays are mapped onto the discrete class grid."""

    quantum_ms: int = 10
    rounding: str = "nearest-half-up"
    drop_zero_class: bool = True

    def __post_init__(self) -> None:
        if self.quantum_ms < 1:
            raise ConfigError(f"quantum_ms must be >= 1, got {self.quantum_ms}")
        if self.rounding not in ROUNDING_MODES:
            raise ConfigError(
                f"unknown rounding mode {self.rounding!r}; expected one of {ROUNDING_MODES}"
            )


# An unordered node pair, stored as IP strings ordered by numeric address.
IpPair = tuple[str, str]


def _ip_key(ip: str) -> int:
    return int(ipaddress.IPv4Address(ip))


def make_pair(a: str, b: str) -> IpPair:
    """Normalize an unordered pair to (lower-IP, higher-IP) numeric order."""
    if _ip_key(a) == _ip_key(b):
        raise ConfigError(f"a pair needs two distinct addresses, got {a} twice")
    return (a, b) if _ip_key(a) < _ip_key(b) else (b, a)


@dataclass(frozen=True)
class DelayClass:
    """A set of unordered IP pairs sharing one quantized delay."""

    mark: int
    delay_ms: int
    pairs: tuple[IpPair, ...]

    def __post_init__(self) -> None:
        if self.mark < 1:
            raise ConfigError(f"mark must be positive, got {self.mark}")
        if self.delay_ms < 0:
            raise ConfigError(f"delay_ms must be non-negative, got {self.delay_ms}")


@dataclass(frozen=True)
class DelayClassMap:
    """Ordered delay classes with contiguous marks 1..K and disjoint pair sets."""

    classes: tuple[DelayClass, ...]

    def __post_init__(self) -> None:
        seen: set[IpPair] = set()
        prev_delay = -1
        for i, cls in enumerate(self.classes):
            if cls.mark != i + 1:
                raise ConfigError(
                    f"marks must be contiguous from 1; position {i} has mark {cls.mark}"
                )
            if cls.delay_ms <= prev_delay:
                raise ConfigError(
                    f"class delays must strictly increase with mark; "
                    f"mark {cls.mark} has delay {cls.delay_ms} after {prev_delay}"
                )
            prev_delay = cls.delay_ms
            for pair in cls.pairs:
                if pair in seen:
                    raise ConfigError(f"pair {pair} appears in more than one class")
                seen.add(pair)

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self) -> Iterator[DelayClass]:
        return iter(self.classes)

    def class_delays(self) -> dict[int, int]:
        """Mark-to-delay map consumed by the queueing-tree planner."""
        return {c.mark: c.delay_ms for c in self.classes}

    def all_pairs(self) -> set[IpPair]:
        return {p for c in self.classes for p in c.pairs}

    def to_json_dict(self) -> dict:
        return {
            "classes": [
                {"mark": c.mark, "delay_ms": c.delay_ms, "pairs": [list(p) for p in c.pairs]}
                for c in self.classes
            ]
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "DelayClassMap":
        classes = tuple(
            DelayClass(
                mark=int(c["mark"]),
                delay_ms=int(c["delay_ms"]),
                pairs=tuple(make_pair(p[0], p[1]) for p in c["pairs"]),
            )
            for c in data["classes"]
        )
        return cls(classes=classes)


def load_matrix(source: Union[str, Path, IO[str]], fmt: str = "auto") -> DelayMatrix:
    """Parse a delay matrix from text, one row per line.

    Cells are decimal milliseconds separated by whitespace or commas; with
    fmt="auto" the delimiter is detected from the first data line. Trailing
    whitespace and blank lines are tolerated.
    """
    if fmt not in ("auto", "whitespace", "csv"):
        raise ConfigError(f"unknown matrix format {fmt!r}")
    if hasattr(source, "read"):
        text = source.read()  # type: ignore[union-attr]
    else:
        text = Path(source).read_text()

    rows: list[list[float]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if fmt == "auto":
            fmt = "csv" if "," in line else "whitespace"
        cells = line.split(",") if fmt == "csv" else line.split()
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ValueError(f"line {line_no}: non-numeric cell ({exc})") from None

    if not rows:
        raise ShapeError("matrix source contains no rows")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ShapeError(f"row {i} has {len(row)} cells, expected {width}")
    if len(rows) != width:
        raise ShapeError(f"matrix is {len(rows)}x{width}, expected square")
    return DelayMatrix(np.array(rows, dtype=np.float64))


def subsample(m: DelayMatrix, count: int, seed: int) -> DelayMatrix:
    """Principal submatrix on `count` indices drawn uniformly without replacement.

    The draw is seeded and deterministic; indices are kept in ascending order
    so a full-size subsample reproduces the input exactly.
    """
    if count < 1:
        raise SizeError(f"count must be positive, got {count}")
    if count > m.n:
        raise SizeError(f"cannot select {count} of {m.n} nodes")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(m.n, size=count, replace=False))
    return DelayMatrix(m.entries[np.ix_(idx, idx)])


def inflate(m: DelayMatrix, factor: Factor) -> DelayMatrix:
    """Multiply every delay by a positive factor; structure is preserved."""
    if factor <= 0:
        raise ValueError(f"inflation factor must be positive, got {factor}")
    return DelayMatrix(m.entries * float(factor))


def quantize(m: DelayMatrix, policy: QuantizationPolicy) -> np.ndarray:
    """Map each entry to an integer multiple of the quantum.

    nearest-half-up rounds .5 steps away from zero (25ms at quantum 10 gives
    30ms); floor and ceil snap down or up. Idempotent on its own output.
    """
    q = policy.quantum_ms
    ratio = m.entries / q
    if policy.rounding == "nearest-half-up":
        steps = np.floor(ratio + 0.5)
    elif policy.rounding == "floor":
        steps = np.floor(ratio)
    else:
        steps = np.ceil(ratio)
    return (steps.astype(np.int64)) * q


def build_classes(
    quantized: np.ndarray,
    ips: Mapping[int, str] | Sequence[str],
    policy: QuantizationPolicy,
) -> DelayClassMap:
    """Group unordered node pairs by quantized delay and assign marks.

    One class per distinct delay value, sorted ascending; the mark is the
    1-based position in that order. Zero-delay pairs are omitted when the
    policy drops the zero class (their traffic takes the default no-delay
    path, which is behaviorally identical).
    """
    q = np.asarray(quantized)
    n = q.shape[0]
    if isinstance(ips, Mapping):
        ip_list = [ips.get(i) for i in range(n)]
        if any(v is None for v in ip_list):
            missing = [i for i, v in enumerate(ip_list) if v is None]
            raise ConfigError(f"ips missing node indices {missing}")
    else:
        ip_list = list(ips)
        if len(ip_list) != n:
            raise ConfigError(f"need {n} addresses, got {len(ip_list)}")
    for ip in ip_list:
        ipaddress.IPv4Address(ip)  # raises on malformed input
    if len(set(ip_list)) != n:
        dupes = sorted({ip for ip in ip_list if ip_list.count(ip) > 1})
        raise ConfigError(f"duplicate node addresses: {dupes}")

    by_delay: dict[int, list[IpPair]] = {}
    for i in range(n):
        for j in range(i + 1, n):
            d = int(q[i, j])
            if d == 0 and policy.drop_zero_class:
                continue
            by_delay.setdefault(d, []).append(make_pair(ip_list[i], ip_list[j]))

    classes = []
    for mark, delay in enumerate(sorted(by_delay), start=1):
        pairs = sorted(by_delay[delay], key=lambda p: (_ip_key(p[0]), _ip_key(p[1])))
        classes.append(DelayClass(mark=mark, delay_ms=delay, pairs=tuple(pairs)))
    return DelayClassMap(classes=tuple(classes))
