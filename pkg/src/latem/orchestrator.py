"""Phased startup orchestration: batch planning, plan building, execution.

A startup plan is an ordered list of steps, each carrying a command script:
host preflight gates, batched container launches sized by the RAM model,
interface inventory, static FDB entries, per-container neighbor sysctls,
firewall marking, per-interface queueing trees, and finally the signal
phases that unfreeze the node agents (staggered, because kernel-side setup
of thousands of connections serializes on shared locks).

Interface names are only known once containers run, so plans carry
`{veth:<node>}` placeholders; apply mode resolves them from the gathered
inventory before running the dependent steps. Dry-run mode writes every
script to a file and touches nothing.
"""

from __future__ import annotations

import json
import re
import shlex
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from . import sys_preflight
from .adapters import RuntimeAdapter
from .autoarpd import emit_neigh_sysctls
from .delay_model import DelayClassMap
from .errors import ConfigError, InfeasibleError, InventoryError, ValidationError
from .link_layer import MacPattern, emit_fdb_script, mac_for_ip
from .manifest import ExperimentManifest, NodeSpec, ResourceModel, render_number
from .nft_planner import emit_nft_script
from .script import CommandScript
from .tc_planner import compute_bands, emit_tc_script
from .topology import neighbor_lists, nws_graph, random_graph

NODE_SPEC_ENV = "LATEM_NODE_SPEC"

STEP_PREFLIGHT = "preflight"
STEP_LAUNCH = "launch"
STEP_GATHER = "gather"
STEP_FDB = "fdb"
STEP_NEIGH = "neigh-sysctls"
STEP_NFT = "nft"
STEP_TC = "tc"
STEP_SIGNAL = "signal"
STEP_HOST_SCRIPT = "host-script"
STEP_STATS = "stats"

STATS_COMMAND = "docker stats --no-stream --format '{{.Name}},{{.MemUsage}}'"


def veth_token(node_name: str) -> str:
    return f"{{veth:{node_name}}}"


# --- batched scale-out ------------------------------------------------------


@dataclass(frozen=True)
class BatchSchedule:
    """Launch batches sized so startup never pushes RAM past the cap."""

    batches: tuple[int, ...]
    occupancy_after: tuple[Fraction, ...]  # steady occupancy once a batch settles
    peak_during: tuple[Fraction, ...]  # occupancy while a batch is starting
    unscheduled: int
    cap: Fraction

    def __post_init__(self) -> None:
        for peak in self.peak_during:
            if peak > self.cap:
                raise InfeasibleError(f"batch peak {peak} exceeds cap {self.cap}")

    @property
    def total_scheduled(self) -> int:
        return sum(self.batches)


def plan_batches(
    total_nodes: int,
    resources: ResourceModel,
    paper_rounding: bool = False,
) -> BatchSchedule:
    """Batch sizes under the RAM model, in exact rational arithmetic.

    The first batch fills the cap at the startup footprint; each later batch
    fills whatever the settled (steady) footprint of the running nodes leaves
    free. With paper_rounding, the settled occupancy is rounded to a whole
    percent before sizing the next batch, reproducing hand calculations done
    on rounded percentages.
    """
    cap = resources.ram_cap_fraction
    startup = resources.per_node_startup_fraction
    steady = resources.per_node_steady_fraction
    if not startup >= steady > 0:
        raise ConfigError(
            f"need per-node startup >= steady > 0, got {startup} and {steady}"
        )
    if startup > cap:
        raise InfeasibleError(
            f"a single node's startup footprint {startup} exceeds the cap {cap}"
        )
    batches: list[int] = []
    after: list[Fraction] = []
    peaks: list[Fraction] = []
    started = 0
    remaining = total_nodes
    while remaining > 0:
        occupied = started * steady
        if paper_rounding:
            occupied = Fraction(round(occupied * 100), 100)
        size = min(remaining, int((cap - occupied) // startup))
        if size <= 0:
            break
        batches.append(size)
        peaks.append(occupied + size * startup)
        started += size
        remaining -= size
        after.append(started * steady)
    return BatchSchedule(
        batches=tuple(batches),
        occupancy_after=tuple(after),
        peak_during=tuple(peaks),
        unscheduled=remaining,
        cap=cap,
    )


# --- interface inventory ----------------------------------------------------


@dataclass(frozen=True)
class InterfaceRecord:
    node: str
    veth: str
    mac: str
    ip: str


@dataclass(frozen=True)
class InterfaceInventory:
    records: tuple[InterfaceRecord, ...]
    warnings: tuple[str, ...] = ()

    def veth_of(self) -> dict[str, str]:
        return {r.node: r.veth for r in self.records}


_IP_LINK_LINE = re.compile(r"^(\d+):\s+([^:@\s]+)")


def gather_interfaces(
    adapter: RuntimeAdapter,
    nodes: Sequence[tuple[str, str]],
    pattern: MacPattern = MacPattern(),
    container_iface: str = "eth0",
) -> InterfaceInventory:
    """Discover each container's host-side veth, MAC, and IP.

    The container's interface reports the peer ifindex (`iflink`), which maps
    to the host-side veth name via one `ip -o link show` listing.
    """
    if not nodes:
        return InterfaceInventory(records=(), warnings=("no nodes to inventory",))
    listing = adapter.run("ip -o link show")
    if not listing.ok:
        raise InventoryError(f"cannot list host links: {listing.stderr or listing.stdout}")
    host_links: dict[int, str] = {}
    for line in listing.stdout.splitlines():
        if m := _IP_LINK_LINE.match(line.strip()):
            host_links[int(m.group(1))] = m.group(2)

    records = []
    warnings = []
    for name, ip in nodes:
        iflink = adapter.run(
            f"docker exec {name} cat /sys/class/net/{container_iface}/iflink"
        )
        if not iflink.ok or not iflink.stdout.strip().isdigit():
            raise InventoryError(f"node {name!r}: cannot read peer ifindex")
        peer = int(iflink.stdout.strip())
        veth = host_links.get(peer)
        if veth is None:
            raise InventoryError(
                f"node {name!r}: no host link with ifindex {peer} (stale inventory?)"
            )
        mac_out = adapter.run(
            f"docker exec {name} cat /sys/class/net/{container_iface}/address"
        )
        mac = mac_out.stdout.strip().lower() if mac_out.ok else ""
        expected = mac_for_ip(ip, pattern)
        if mac != expected:
            warnings.append(
                f"node {name!r}: MAC {mac or '?'} does not match pattern-derived {expected}"
            )
        records.append(InterfaceRecord(node=name, veth=veth, mac=mac, ip=ip))
    return InterfaceInventory(records=tuple(records), warnings=tuple(warnings))


# --- plan construction -------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    index: int
    name: str
    kind: str
    script: CommandScript
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PhasedPlan:
    experiment: str
    steps: tuple[PlanStep, ...]

    def steps_of_kind(self, kind: str) -> tuple[PlanStep, ...]:
        return tuple(s for s in self.steps if s.kind == kind)


_TIMER_REF = re.compile(r"\{timer:([A-Za-z0-9_.-]+)\}")


def _render_arg(arg: str, manifest: ExperimentManifest) -> str:
    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in manifest.timers:
            raise ValidationError(f"arg references undeclared timer {name!r}")
        return render_number(manifest.timers[name].value)

    return _TIMER_REF.sub(sub, arg)


def _node_overlays(manifest: ExperimentManifest) -> dict[str, dict[str, list[str]]]:
    """Per-node neighbor lists for every declared overlay network."""
    ids = {i: node.name for i, node in enumerate(manifest.nodes)}
    out: dict[str, dict[str, list[str]]] = {node.name: {} for node in manifest.nodes}
    for role, spec in sorted(manifest.networks.items()):
        if spec.kind == "nws":
            g = nws_graph(len(manifest.nodes), spec.k, float(spec.p), spec.seed)
        else:
            g = random_graph(len(manifest.nodes), spec.degree, spec.seed)
        for name, nbrs in neighbor_lists(g, ids).items():
            out[name][role] = nbrs
    return out


def _node_spec_env(
    node: NodeSpec,
    manifest: ExperimentManifest,
    overlays: Mapping[str, Mapping[str, list[str]]],
) -> str:
    signal_phases = [
        p.name
        for p in manifest.phases
        if p.action == "signal" and node in manifest.nodes_for_target(p.target)
    ]
    spec = {
        "name": node.name,
        "ip": node.ip,
        "signal_phases": signal_phases,
        "processes": [
            {
                "binary": proc.binary,
                "args": [_render_arg(a, manifest) for a in proc.args],
                "start_phase": proc.start_phase,
            }
            for proc in node.processes
        ],
        "neighbors": {role: list(nbrs) for role, nbrs in sorted(overlays[node.name].items())},
        "timers": {name: render_number(t.value) for name, t in sorted(manifest.timers.items())},
    }
    return json.dumps(spec, sort_keys=True, separators=(",", ":"))


def _launch_line(node: NodeSpec, manifest: ExperimentManifest, env_json: str) -> str:
    mac = mac_for_ip(node.ip)
    return (
        f"docker run -d --name {node.name} --hostname {node.name} "
        f"--network {manifest.runtime.bridge} --ip {node.ip} --mac-address {mac} "
        f"--cap-add NET_ADMIN --env {NODE_SPEC_ENV}={shlex.quote(env_json)} "
        f"{node.image}"
    )


def build_startup_plan(
    manifest: ExperimentManifest,
    classes: DelayClassMap | None = None,
    bands: int | None = None,
    inventory: InterfaceInventory | None = None,
    per_node: sys_preflight.PerNodeUsage = sys_preflight.PerNodeUsage(),
    paper_rounding: bool = False,
) -> PhasedPlan:
    """Assemble the fixed-order startup plan for a manifest.

    Order: preflight, batched launches, interface inventory, FDB, neighbor
    sysctls, firewall marking, per-interface trees, then the manifest's
    signal and host-script phases. Marking always precedes tree setup, and
    both precede any signal. `classes` must be supplied when the manifest has
    a delay section (the CLI computes it from the matrix file); without a
    delay section the marking and tree steps are omitted entirely.
    """
    if manifest.delay is not None and classes is None:
        raise ConfigError(
            "manifest declares a delay section but no delay classes were supplied"
        )
    veth_by_node = inventory.veth_of() if inventory is not None else {}

    def veth_for(node: NodeSpec) -> str:
        return veth_by_node.get(node.name, veth_token(node.name))

    steps: list[PlanStep] = []

    def add(name: str, kind: str, script: CommandScript, **metadata) -> None:
        steps.append(
            PlanStep(index=len(steps), name=name, kind=kind, script=script,
                     metadata=metadata)
        )

    plan = sys_preflight.recommend(max(len(manifest.nodes), 1), per_node)
    add(
        STEP_PREFLIGHT,
        STEP_PREFLIGHT,
        CommandScript(lines=sys_preflight.emit_audit_commands(plan), phase=STEP_PREFLIGHT),
        node_count=len(manifest.nodes),
    )

    overlays = _node_overlays(manifest)
    launch_phases = [p for p in manifest.phases if p.action == "launch"]
    for phase in launch_phases:
        targets = manifest.nodes_for_target(phase.target)
        if manifest.resources is not None:
            schedule = plan_batches(len(targets), manifest.resources, paper_rounding)
            if schedule.unscheduled:
                raise InfeasibleError(
                    f"RAM model cannot host {len(targets)} nodes: "
                    f"{schedule.unscheduled} nodes do not fit under the cap"
                )
        else:
            schedule = None
        sizes = schedule.batches if schedule else (len(targets),)
        offset = 0
        for batch_no, size in enumerate(sizes, start=1):
            batch_nodes = targets[offset : offset + size]
            offset += size
            lines = tuple(
                _launch_line(node, manifest, _node_spec_env(node, manifest, overlays))
                for node in batch_nodes
            )
            add(
                f"launch-{phase.name}-b{batch_no:02d}",
                STEP_LAUNCH,
                CommandScript(lines=lines, phase=phase.name),
                phase=phase.name,
                batch=batch_no,
                nodes=[n.name for n in batch_nodes],
            )
        if phase.capture_stats:
            add(
                f"stats-{phase.name}",
                STEP_STATS,
                CommandScript(lines=(STATS_COMMAND,), phase=phase.name),
                checkpoint=phase.name,
            )

    iface = manifest.runtime.container_iface
    gather_lines = tuple(
        f"docker exec {n.name} cat /sys/class/net/{iface}/{leaf}"
        for n in manifest.nodes
        for leaf in ("iflink", "address")
    ) + (("ip -o link show",) if manifest.nodes else ())
    add(
        STEP_GATHER,
        STEP_GATHER,
        CommandScript(lines=gather_lines, phase=STEP_GATHER),
        nodes=[(n.name, n.ip) for n in manifest.nodes],
        container_iface=iface,
    )

    add(
        STEP_FDB,
        STEP_FDB,
        emit_fdb_script([(n.ip, veth_for(n)) for n in manifest.nodes]),
    )

    neigh_lines = tuple(
        f"docker exec {n.name} {line}"
        for n in manifest.nodes
        for line in emit_neigh_sysctls(iface)
    )
    add(STEP_NEIGH, STEP_NEIGH, CommandScript(lines=neigh_lines, phase=STEP_NEIGH))

    if manifest.delay is not None and classes is not None and len(classes) > 0:
        add(STEP_NFT, STEP_NFT, emit_nft_script(classes), class_count=len(classes))
        b = bands if bands is not None else compute_bands(len(classes))
        delays = classes.class_delays()
        tc_lines: list[str] = []
        veths = []
        for node in manifest.nodes:
            veth = veth_for(node)
            veths.append(veth)
            tc_lines.extend(emit_tc_script(delays, veth, b))
        add(
            STEP_TC,
            STEP_TC,
            CommandScript(lines=tuple(tc_lines), phase=STEP_TC),
            veths=veths,
            bands=b,
        )

    for phase in manifest.phases:
        if phase.action == "signal":
            targets = manifest.nodes_for_target(phase.target)
            stagger_s = phase.stagger_ms / 1000
            lines: list[str] = []
            offsets: list[float] = []
            for i, node in enumerate(targets):
                if i > 0 and stagger_s > 0:
                    lines.append(f"sleep {render_number(stagger_s)}")
                offsets.append(float(i * stagger_s))
                lines.append(f"docker kill -s {phase.signal} {node.name}")
            add(
                f"signal-{phase.name}",
                STEP_SIGNAL,
                CommandScript(lines=tuple(lines), phase=phase.name),
                phase=phase.name,
                signal=phase.signal,
                offsets_s=offsets,
            )
        elif phase.action == "run-host-script":
            add(
                f"host-{phase.name}",
                STEP_HOST_SCRIPT,
                CommandScript(lines=phase.script, phase=phase.name),
                phase=phase.name,
            )
        if phase.capture_stats and phase.action != "launch":
            add(
                f"stats-{phase.name}",
                STEP_STATS,
                CommandScript(lines=(STATS_COMMAND,), phase=phase.name),
                checkpoint=phase.name,
            )

    return PhasedPlan(experiment=manifest.name, steps=tuple(steps))


def delay_classes_for_manifest(
    manifest: ExperimentManifest, base_dir: str | Path = "."
) -> tuple[DelayClassMap, int]:
    """Load the manifest's matrix and derive its class map and band count.

    The matrix is subsampled (seeded) down to the node count when larger,
    inflated by the accumulated factor, then quantized under the manifest's
    policy. Relative matrix paths resolve against base_dir.
    """
    from . import delay_model

    if manifest.delay is None:
        raise ConfigError("manifest has no delay section")
    d = manifest.delay
    path = Path(d.matrix_path)
    if not path.is_absolute():
        path = Path(base_dir) / path
    matrix = delay_model.load_matrix(path)
    n = len(manifest.nodes)
    if matrix.n < n:
        raise ConfigError(f"matrix has {matrix.n} nodes but manifest declares {n}")
    if matrix.n > n:
        matrix = delay_model.subsample(matrix, n, d.subsample_seed)
    if d.inflation_factor != 1:
        matrix = delay_model.inflate(matrix, d.inflation_factor)
    policy = delay_model.QuantizationPolicy(
        quantum_ms=d.quantum_ms, rounding=d.rounding, drop_zero_class=d.drop_zero_class
    )
    quantized = delay_model.quantize(matrix, policy)
    classes = delay_model.build_classes(quantized, manifest.node_ips(), policy)
    bands = compute_bands(len(classes)) if len(classes) else 2
    return classes, bands


# --- execution ----------------------------------------------------------------


@dataclass(frozen=True)
class CommandOutcome:
    line: str
    exit_code: int
    stdout: str = ""


@dataclass(frozen=True)
class StepResult:
    name: str
    kind: str
    status: str  # written | ok | failed | skipped
    commands: tuple[CommandOutcome, ...] = ()
    detail: str = ""


@dataclass(frozen=True)
class ExecutionReport:
    mode: str
    steps: tuple[StepResult, ...]
    out_dir: str | None = None
    inventory: InterfaceInventory | None = None

    @property
    def ok(self) -> bool:
        return all(s.status in ("ok", "written") for s in self.steps)


_VETH_TOKEN = re.compile(r"\{veth:([^{}]+)\}")


def _substitute(line: str, veths: Mapping[str, str]) -> str:
    def sub(m: re.Match) -> str:
        node = m.group(1)
        if node not in veths:
            raise InventoryError(f"no gathered veth for node {node!r}")
        return veths[node]

    return _VETH_TOKEN.sub(sub, line)


def execute(
    plan: PhasedPlan,
    mode: str,
    adapter: RuntimeAdapter | None = None,
    out_dir: str | Path | None = None,
    tc_parallelism: int = 1,
    pattern: MacPattern = MacPattern(),
) -> ExecutionReport:
    """Run a plan in dry-run or apply mode.

    Dry-run writes each step's script to `<index>-<name>.sh` under out_dir
    and performs no other action; output is byte-deterministic. Apply runs
    steps in order through the adapter, stopping at the first failing
    command; later steps are reported as skipped. The gather step resolves
    veth placeholders for everything after it. tc lines may run with bounded
    parallelism when requested; results are merged back in line order.
    """
    if mode not in ("dry-run", "apply"):
        raise ConfigError(f"mode must be 'dry-run' or 'apply', got {mode!r}")

    if mode == "dry-run":
        if out_dir is None:
            raise ConfigError("dry-run needs an output directory")
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        results = []
        for step in plan.steps:
            path = root / f"{step.index:02d}-{step.name}.sh"
            path.write_text(step.script.text())
            results.append(
                StepResult(name=step.name, kind=step.kind, status="written",
                           detail=str(path))
            )
        return ExecutionReport(mode=mode, steps=tuple(results), out_dir=str(root))

    if adapter is None:
        raise ConfigError("apply mode needs a runtime adapter")
    results = []
    veths: dict[str, str] = {}
    inventory: InterfaceInventory | None = None
    failed = False
    for step in plan.steps:
        if failed:
            results.append(StepResult(name=step.name, kind=step.kind, status="skipped"))
            continue
        if step.kind == STEP_GATHER:
            try:
                inventory = gather_interfaces(
                    adapter,
                    [tuple(pair) for pair in step.metadata.get("nodes", [])],
                    pattern=pattern,
                    container_iface=step.metadata.get("container_iface", "eth0"),
                )
            except InventoryError as exc:
                failed = True
                results.append(
                    StepResult(name=step.name, kind=step.kind, status="failed",
                               detail=str(exc))
                )
                continue
            veths.update(inventory.veth_of())
            results.append(
                StepResult(name=step.name, kind=step.kind, status="ok",
                           detail="; ".join(inventory.warnings))
            )
            continue

        try:
            lines = [_substitute(line, veths) for line in step.script]
        except InventoryError as exc:
            failed = True
            results.append(
                StepResult(name=step.name, kind=step.kind, status="failed",
                           detail=str(exc))
            )
            continue

        outcomes: list[CommandOutcome] = []
        if step.kind == STEP_TC and tc_parallelism > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=tc_parallelism) as pool:
                parallel = list(pool.map(adapter.run, lines))
            outcomes = [
                CommandOutcome(l, r.exit_code, r.stdout) for l, r in zip(lines, parallel)
            ]
            step_failed = any(r.exit_code != 0 for r in parallel)
        else:
            step_failed = False
            for line in lines:
                result = adapter.run(line)
                outcomes.append(CommandOutcome(line, result.exit_code, result.stdout))
                if result.exit_code != 0:
                    step_failed = True
                    break
        if step_failed:
            failed = True
            results.append(
                StepResult(name=step.name, kind=step.kind, status="failed",
                           commands=tuple(outcomes))
            )
        else:
            results.append(
                StepResult(name=step.name, kind=step.kind, status="ok",
                           commands=tuple(outcomes))
            )
    return ExecutionReport(mode=mode, steps=tuple(results), inventory=inventory)
