"""Two-level prio/netem queueing tree: planning, emission, and verification.

Marked packets are sorted twice: a root prio qdisc dispatches on the mark
into one of b bands, and a second-level prio qdisc under each band dispatches
into one of b sub-bands, whose leaf is a netem qdisc applying the class
delay. With at most 16 bands per prio qdisc, two levels give b*b leaves; one
leaf (the rightmost path) is reserved for unmarked traffic and applies no
delay, so up to 255 delay classes fit.

Handles follow the tc syntax: the root is "1:", the second-level qdisc under
band i is "1<hex(i)>:", and bands are "<handle>:<hex(band)>" with lowercase
hex digits. Filter handles carry the decimal mark. The same tree is applied
to every virtual interface; delays act on traffic egressing the bridge
toward each container.

verify_plan is an independent oracle: it re-parses emitted firewall and tc
scripts from text and simulates every directed packet (set-membership mark
lookup, then root-to-leaf filter routing), checking the reached delay
against the class map.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping

from .delay_model import DelayClassMap
from .errors import CapacityError, ConfigError, ParseError
from .script import CommandScript

MAX_BANDS = 16
MAX_CLASSES = MAX_BANDS * MAX_BANDS - 1
FILTER_PRIO_MARKED = 10
FILTER_PRIO_DEFAULT = 20


def _hex(value: int) -> str:
    return format(value, "x")


def compute_bands(class_count: int) -> int:
    """Minimal band count b with b*b >= class_count + 1, at least 2."""
    if class_count < 1:
        raise ConfigError(f"class_count must be >= 1, got {class_count}")
    if class_count > MAX_CLASSES:
        raise CapacityError(
            f"{class_count} classes exceed the {MAX_CLASSES} the two-level tree "
            "can hold; use a coarser quantum to reduce the class count"
        )
    b = math.isqrt(class_count + 1)
    if b * b < class_count + 1:
        b += 1
    return max(2, b)


def leaf_position(mark: int, b: int) -> tuple[int, int]:
    """First- and second-level band (f, s) for a mark; never the default slot."""
    if mark < 1:
        raise ConfigError(f"mark must be positive, got {mark}")
    if not 2 <= b <= MAX_BANDS:
        raise ConfigError(f"bands must be in 2..{MAX_BANDS}, got {b}")
    if mark >= b * b:
        raise CapacityError(f"mark {mark} does not fit a {b}x{b} tree (max {b * b - 1})")
    f = (mark - 1) // b + 1
    s = (mark - 1) % b + 1
    return f, s


@dataclass(frozen=True)
class QdiscTreePlan:
    """Resolved tree layout for one interface: leaves keyed by mark."""

    veth: str
    bands: int
    leaves: Mapping[int, tuple[int, int, int]]  # mark -> (f, s, delay_ms)

    def __post_init__(self) -> None:
        b = self.bands
        if not 2 <= b <= MAX_BANDS:
            raise ConfigError(f"bands must be in 2..{MAX_BANDS}, got {b}")
        if b * b < len(self.leaves) + 1:
            raise CapacityError(
                f"{len(self.leaves)} classes plus the default leaf do not fit "
                f"{b}x{b} bands"
            )
        for mark, (f, s, _delay) in self.leaves.items():
            expect = leaf_position(mark, b)
            if (f, s) != expect:
                raise ConfigError(f"mark {mark} must sit at {expect}, got {(f, s)}")
            if (f, s) == (b, b):
                raise ConfigError(f"mark {mark} occupies the default slot ({b}, {b})")

    @property
    def default_path(self) -> tuple[int, int]:
        return (self.bands, self.bands)


def plan_tree(class_delays: Mapping[int, int], veth: str, b: int) -> QdiscTreePlan:
    leaves = {
        mark: (*leaf_position(mark, b), delay_ms)
        for mark, delay_ms in sorted(class_delays.items())
    }
    return QdiscTreePlan(veth=veth, bands=b, leaves=leaves)


def emit_tc_script(class_delays: Mapping[int, int], veth: str, b: int) -> CommandScript:
    """Emit the tree for one interface.

    Order: root prio, the b second-level prio qdiscs, then per class
    (ascending mark) its netem leaf plus the two fw filters routing the mark
    root-to-leaf, and finally the two catch-all filters steering unmarked
    traffic down the rightmost (no-delay) path. Line count is 1 + b + 3K + 2.
    """
    if not veth or veth != veth.strip():
        raise ConfigError(f"invalid interface name {veth!r}")
    plan = plan_tree(class_delays, veth, b)
    lines = [f"tc qdisc add dev {veth} root handle 1: prio bands {b}"]
    for i in range(1, b + 1):
        lines.append(
            f"tc qdisc add dev {veth} parent 1:{_hex(i)} handle 1{_hex(i)}: prio bands {b}"
        )
    for mark in sorted(plan.leaves):
        f, s, delay_ms = plan.leaves[mark]
        lines.append(
            f"tc qdisc add dev {veth} parent 1{_hex(f)}:{_hex(s)} netem delay {delay_ms}ms"
        )
        lines.append(
            f"tc filter add dev {veth} protocol ip parent 1: "
            f"prio {FILTER_PRIO_MARKED} handle {mark} fw classid 1:{_hex(f)}"
        )
        lines.append(
            f"tc filter add dev {veth} protocol ip parent 1{_hex(f)}: "
            f"prio {FILTER_PRIO_MARKED} handle {mark} fw classid 1{_hex(f)}:{_hex(s)}"
        )
    lines.append(
        f"tc filter add dev {veth} protocol all parent 1: "
        f"prio {FILTER_PRIO_DEFAULT} matchall classid 1:{_hex(b)}"
    )
    lines.append(
        f"tc filter add dev {veth} protocol all parent 1{_hex(b)}: "
        f"prio {FILTER_PRIO_DEFAULT} matchall classid 1{_hex(b)}:{_hex(b)}"
    )
    return CommandScript(lines=tuple(lines), phase="tc")


# --- offline verification -------------------------------------------------

_NFT_TABLE = re.compile(r"^nft add table ip (\w+)$")
_NFT_CHAIN = re.compile(r"^nft add chain (\w+) (\w+) \{ type filter hook forward priority 0 \\; \}$")
_NFT_SET = re.compile(r"^nft add set (\w+) (\w+) \{ type ipv4_addr \. ipv4_addr \\; \}$")
_NFT_ELEMENT = re.compile(r"^nft add element (\w+) (\w+) \{ (.*) \}$")
_NFT_RULE = re.compile(
    r"^nft add rule (\w+) (\w+) ip saddr \. ip daddr @(\w+) meta mark set (\d+)$"
)
_TC_ROOT = re.compile(r"^tc qdisc add dev (\S+) root handle 1: prio bands (\d+)$")
_TC_SECOND = re.compile(
    r"^tc qdisc add dev (\S+) parent 1:([0-9a-f]+) handle (1[0-9a-f]+): prio bands (\d+)$"
)
_TC_NETEM = re.compile(
    r"^tc qdisc add dev (\S+) parent ([0-9a-f]+):([0-9a-f]+) netem delay (\d+)ms$"
)
_TC_FW_FILTER = re.compile(
    r"^tc filter add dev (\S+) protocol ip parent ([0-9a-f]+): "
    r"prio (\d+) handle (\d+) fw classid ([0-9a-f]+):([0-9a-f]+)$"
)
_TC_MATCHALL = re.compile(
    r"^tc filter add dev (\S+) protocol all parent ([0-9a-f]+): "
    r"prio (\d+) matchall classid ([0-9a-f]+):([0-9a-f]+)$"
)


@dataclass(frozen=True)
class Mismatch:
    mark: int | None
    pair: tuple[str, str] | None
    expected_delay_ms: int | None
    actual_delay_ms: int | None
    detail: str


@dataclass(frozen=True)
class VerificationReport:
    pairs_checked: int
    mismatches: tuple[Mismatch, ...]
    default_path_ok: bool
    default_path_detail: str

    @property
    def ok(self) -> bool:
        return not self.mismatches and self.default_path_ok

    def mismatched_marks(self) -> set[int]:
        return {m.mark for m in self.mismatches if m.mark is not None}


class _NftState:
    def __init__(self) -> None:
        self.sets: dict[str, set[tuple[str, str]]] = {}
        self.rules: list[tuple[str, int]] = []  # (set name, mark), in order
        self._mark_cache: dict[tuple[str, str], int] | None = None

    def mark_of(self, src: str, dst: str) -> int | None:
        if self._mark_cache is None:
            # first matching rule wins, so earlier rules must not be overwritten
            cache: dict[tuple[str, str], int] = {}
            for set_name, mark in self.rules:
                for pair in self.sets.get(set_name, ()):
                    cache.setdefault(pair, mark)
            self._mark_cache = cache
        return self._mark_cache.get((src, dst))


def _parse_nft(script: CommandScript) -> _NftState:
    state = _NftState()
    for line_no, line in enumerate(script, start=1):
        if _NFT_TABLE.match(line) or _NFT_CHAIN.match(line):
            continue
        if m := _NFT_SET.match(line):
            state.sets[m.group(2)] = set()
            continue
        if m := _NFT_ELEMENT.match(line):
            set_name, body = m.group(2), m.group(3)
            if set_name not in state.sets:
                raise ParseError("element insertion into undeclared set", line_no, line)
            for element in body.split(", "):
                parts = element.split(" . ")
                if len(parts) != 2:
                    raise ParseError("malformed set element", line_no, line)
                state.sets[set_name].add((parts[0], parts[1]))
            continue
        if m := _NFT_RULE.match(line):
            if m.group(3) not in state.sets:
                raise ParseError("rule references undeclared set", line_no, line)
            state.rules.append((m.group(3), int(m.group(4))))
            continue
        raise ParseError("unrecognized firewall command", line_no, line)
    return state


class _TcState:
    def __init__(self) -> None:
        self.bands: int | None = None
        self.child_of_band: dict[tuple[str, str], str] = {}  # (parent, band) -> handle
        self.netem: dict[tuple[str, str], int] = {}  # (qdisc handle, band) -> delay
        self.fw: dict[str, dict[int, tuple[str, str]]] = {}  # parent -> mark -> classid
        self.matchall: dict[str, tuple[str, str]] = {}  # parent -> classid

    def route(self, mark: int | None) -> tuple[int | None, str]:
        """Follow filters from the root; return (delay, detail).

        Unmatched routing returns delay None; a leaf band without a netem
        qdisc is the no-delay plain queue, i.e. delay 0.
        """
        handle = "1"
        for level in ("root", "second"):
            target = None
            if mark is not None:
                target = self.fw.get(handle, {}).get(mark)
            if target is None:
                target = self.matchall.get(handle)
            if target is None:
                return None, f"no filter matched mark {mark} at qdisc {handle}:"
            major, minor = target
            if major != handle:
                return None, (
                    f"filter at qdisc {handle}: targets foreign qdisc {major}:{minor}"
                )
            if level == "root":
                child = self.child_of_band.get((major, minor))
                if child is None:
                    return None, f"no qdisc attached under band {major}:{minor}"
                handle = child
            else:
                delay = self.netem.get((major, minor), 0)
                return delay, f"leaf {major}:{minor}"
        raise AssertionError("unreachable")


def _parse_tc(script: CommandScript) -> _TcState:
    state = _TcState()
    for line_no, line in enumerate(script, start=1):
        if m := _TC_ROOT.match(line):
            state.bands = int(m.group(2))
            continue
        if m := _TC_SECOND.match(line):
            band, handle = m.group(2), m.group(3)
            if handle != "1" + band:
                raise ParseError("second-level handle does not encode its band", line_no, line)
            state.child_of_band[("1", band)] = handle
            continue
        if m := _TC_NETEM.match(line):
            state.netem[(m.group(2), m.group(3))] = int(m.group(4))
            continue
        if m := _TC_FW_FILTER.match(line):
            parent, mark = m.group(2), int(m.group(4))
            state.fw.setdefault(parent, {})[mark] = (m.group(5), m.group(6))
            continue
        if m := _TC_MATCHALL.match(line):
            state.matchall[m.group(2)] = (m.group(4), m.group(5))
            continue
        raise ParseError("unrecognized tc command", line_no, line)
    if state.bands is None:
        raise ParseError("script has no root prio qdisc", 0, "")
    return state


def verify_plan(
    nft: CommandScript, tc: CommandScript, classes: DelayClassMap
) -> VerificationReport:
    """Simulate every directed pair through both scripts and check delays.

    For each ordered (src, dst) of every class: resolve the mark by set
    membership, then walk root and second-level filters to the reached leaf,
    and compare the netem delay there with the class delay. Separately checks
    that unmarked traffic lands on the no-delay default leaf.
    """
    nft_state = _parse_nft(nft)
    tc_state = _parse_tc(tc)
    mismatches: list[Mismatch] = []
    pairs_checked = 0

    for cls in classes:
        for lo, hi in cls.pairs:
            for src, dst in ((lo, hi), (hi, lo)):
                pairs_checked += 1
                mark = nft_state.mark_of(src, dst)
                if mark != cls.mark:
                    mismatches.append(
                        Mismatch(
                            mark=cls.mark,
                            pair=(src, dst),
                            expected_delay_ms=cls.delay_ms,
                            actual_delay_ms=None,
                            detail=f"marked {mark} instead of {cls.mark}",
                        )
                    )
                    continue
                delay, detail = tc_state.route(mark)
                if delay != cls.delay_ms:
                    mismatches.append(
                        Mismatch(
                            mark=cls.mark,
                            pair=(src, dst),
                            expected_delay_ms=cls.delay_ms,
                            actual_delay_ms=delay,
                            detail=detail,
                        )
                    )

    default_delay, default_detail = tc_state.route(None)
    b = tc_state.bands
    default_ok = default_delay == 0 and default_detail.endswith(
        f"leaf 1{_hex(b)}:{_hex(b)}"
    )
    if default_delay != 0:
        default_detail = f"unmarked traffic delayed ({default_detail})"
    return VerificationReport(
        pairs_checked=pairs_checked,
        mismatches=tuple(mismatches),
        default_path_ok=default_ok,
        default_path_detail=default_detail,
    )
