"""Node selection and contiguous layer-range placement.

Given a fleet snapshot and a model too large for the parent node, pick the
cheapest nearby children until their combined free memory covers the model,
then hand each chosen node the longest run of consecutive layers that fits
its memory. All ordering rules are total, so the same inputs always produce
the same placement.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from . import cnn, resources
from .errors import (
    InfeasiblePartition,
    InsufficientResources,
    NoRoute,
    ShapeMismatch,
)

# probe size used to price one transfer on a link when ordering candidates
COMM_PROBE_BYTES = 1 << 20

ACTIVATION_BYTES = 4  # float32 elements crossing a cut


@dataclass(frozen=True)
class NodeProfile:
    """One simulated IoT device."""

    id: str
    mem_free_bytes: int
    speed_flops_per_sec: float
    workload_frac: float = 0.0
    position: tuple[float, float] = (0.0, 0.0)
    online: bool = True

    def __post_init__(self) -> None:
        if self.mem_free_bytes < 0:
            raise ValueError(f"node {self.id}: mem_free_bytes must be >= 0")
        if not 0.0 <= self.workload_frac <= 1.0:
            raise ValueError(f"node {self.id}: workload_frac must be in [0, 1]")
        if self.speed_flops_per_sec <= 0.0:
            raise ValueError(f"node {self.id}: speed must be positive")


@dataclass(frozen=True)
class LinkProfile:
    """Bidirectional link between two nodes."""

    a: str
    b: str
    latency_sec: float
    bandwidth_bytes_per_sec: float

    def __post_init__(self) -> None:
        if self.latency_sec < 0.0:
            raise ValueError(f"link {self.a}-{self.b}: latency must be >= 0")
        if self.bandwidth_bytes_per_sec <= 0.0:
            raise ValueError(f"link {self.a}-{self.b}: bandwidth must be positive")

    def transfer_sec(self, n_bytes: int) -> float:
        return self.latency_sec + n_bytes / self.bandwidth_bytes_per_sec


@dataclass
class NetworkScenario:
    """Fleet snapshot: nodes, links, selection radius, parent, node cap."""

    nodes: list[NodeProfile]
    links: list[LinkProfile]
    radius_r: float
    parent_id: str
    max_nodes: int = 4

    def __post_init__(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        if self.parent_id not in set(ids):
            raise ValueError(f"parent {self.parent_id!r} is not in the fleet")
        known = set(ids)
        seen_pairs = set()
        for link in self.links:
            if link.a not in known or link.b not in known:
                raise ValueError(f"link {link.a}-{link.b} references unknown node")
            pair = frozenset((link.a, link.b))
            if pair in seen_pairs:
                raise ValueError(f"duplicate link {link.a}-{link.b}")
            seen_pairs.add(pair)
        self._by_id = {n.id: n for n in self.nodes}
        self._links = {frozenset((l.a, l.b)): l for l in self.links}

    def node(self, node_id: str) -> NodeProfile:
        return self._by_id[node_id]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._by_id

    def link_between(self, a: str, b: str) -> LinkProfile | None:
        return self._links.get(frozenset((a, b)))


@dataclass
class Placement:
    """Contiguous layer ranges per node, in execution order.

    assignments holds (node_id, (start, stop)) with half-open ranges;
    cut_bytes[i] is the activation payload crossing the boundary after
    assignments[i].
    """

    assignments: list[tuple[str, tuple[int, int]]]
    cut_bytes: list[int]
    parent_id: str


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str


def _distance(a: NodeProfile, b: NodeProfile) -> float:
    return math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])


def candidate_order(network: NetworkScenario, parent_id: str,
                    radius_r: float) -> list[NodeProfile]:
    """Online nodes within the radius, parent first, the rest sorted by the
    cost of one probe transfer on their direct parent link, then workload,
    then id. Nodes without a parent link sort last."""
    parent = network.node(parent_id)
    out = [parent]
    rest = []
    for node in network.nodes:
        if node.id == parent_id or not node.online:
            continue
        if _distance(node, parent) > radius_r:
            continue
        link = network.link_between(parent_id, node.id)
        cost = link.transfer_sec(COMM_PROBE_BYTES) if link else math.inf
        rest.append((cost, node.workload_frac, node.id, node))
    rest.sort(key=lambda item: item[:3])
    out.extend(item[3] for item in rest)
    return out


def select_nodes(network: NetworkScenario, parent_id: str, radius_r: float,
                 model_bytes: int, max_nodes: int) -> list[NodeProfile]:
    """Shortest prefix of the candidate order whose combined free memory
    reaches the model's bytes, capped at max_nodes."""
    if not network.has_node(parent_id):
        raise InsufficientResources(f"parent {parent_id!r} is not in the fleet")
    parent = network.node(parent_id)
    if not parent.online:
        raise InsufficientResources(f"parent {parent_id!r} is offline")

    candidates = candidate_order(network, parent_id, radius_r)
    chosen: list[NodeProfile] = []
    cumulative = 0
    for node in candidates:
        if len(chosen) == max_nodes:
            break
        chosen.append(node)
        cumulative += node.mem_free_bytes
        if cumulative >= model_bytes:
            break
    if cumulative < model_bytes:
        raise InsufficientResources(
            f"{len(chosen)} candidate nodes hold {cumulative} bytes,"
            f" model needs {model_bytes}")
    for child in chosen[1:]:
        if network.link_between(parent_id, child.id) is None:
            raise NoRoute(f"chosen child {child.id!r} has no link to the parent")
    return chosen


def _normalize_budgets(nodes) -> list[tuple[str, int]]:
    out = []
    for entry in nodes:
        if isinstance(entry, NodeProfile):
            out.append((entry.id, entry.mem_free_bytes))
        else:
            node_id, free = entry
            out.append((str(node_id), int(free)))
    return out


def partition_layers(spec: cnn.ModelSpec, nodes, *, n_batches: int = 1,
                     batch_size: int = 1, kb_per_param: int = 1) -> Placement:
    """Assign contiguous layer ranges front to back.

    Each node takes the longest prefix of the remaining layers whose
    cumulative bytes fit its free memory, trimmed so every later node can
    still receive at least one layer. A node whose memory cannot hold even
    the next layer is skipped when some later node can hold it; when no
    remaining node can, the partition is infeasible.
    """
    budgets = _normalize_budgets(nodes)
    if not budgets:
        raise InfeasiblePartition("no nodes given")
    per_layer = resources.layer_bytes(spec, n_batches=n_batches,
                                      batch_size=batch_size,
                                      kb_per_param=kb_per_param)
    total = sum(per_layer)
    if sum(free for _, free in budgets) < total:
        raise InfeasiblePartition(
            f"combined free bytes < model bytes ({total})")

    n_layers = len(per_layer)
    assignments: list[tuple[str, tuple[int, int]]] = []
    start = 0
    for j, (node_id, free) in enumerate(budgets):
        if start == n_layers:
            break
        nodes_after = len(budgets) - j - 1
        take = 0
        acc = 0
        while start + take < n_layers and acc + per_layer[start + take] <= free:
            acc += per_layer[start + take]
            take += 1
        take = min(take, max(n_layers - start - nodes_after, 1))
        if take == 0:
            if any(per_layer[start] <= other for _, other in budgets[j + 1:]):
                continue
            raise InfeasiblePartition(
                f"layer {start} ({per_layer[start]} bytes) exceeds every"
                " remaining node's free memory")
        assignments.append((node_id, (start, start + take)))
        start += take
    if start < n_layers:
        raise InfeasiblePartition(
            f"layers {start}..{n_layers - 1} left unassigned after the last node")

    placement = Placement(assignments, [], budgets[0][0])
    placement.cut_bytes = cut_bytes(spec, placement)
    return placement


def cut_bytes(spec: cnn.ModelSpec, placement: Placement) -> list[int]:
    """Bytes of the activation tensor crossing each assignment boundary."""
    shapes = cnn.layer_output_shapes(spec)
    out = []
    for node_idx in range(len(placement.assignments) - 1):
        _, (_, stop) = placement.assignments[node_idx]
        elements = 1
        for extent in shapes[stop - 1]:
            elements *= extent
        out.append(elements * ACTIVATION_BYTES)
    return out


def single_node_placement(spec: cnn.ModelSpec, node_id: str) -> Placement:
    """All layers on one node; used for the on-device reference runs."""
    n_layers = len(cnn.resolve_spec(spec).layers)
    return Placement([(node_id, (0, n_layers))], [], node_id)


def validate_placement(placement: Placement, network: NetworkScenario,
                       spec: cnn.ModelSpec, *, n_batches: int = 1,
                       batch_size: int = 1, kb_per_param: int = 1) -> list[Violation]:
    """Check coverage, contiguity, memory bounds, node status and links.

    Returns every violation found; an empty list means the placement is ok.
    """
    violations: list[Violation] = []
    try:
        per_layer = resources.layer_bytes(spec, n_batches=n_batches,
                                          batch_size=batch_size,
                                          kb_per_param=kb_per_param)
    except ShapeMismatch as exc:
        return [Violation("BadSpec", str(exc))]
    n_layers = len(per_layer)

    if not placement.assignments:
        return [Violation("CoverageGap", "placement assigns no layers")]

    expected = 0
    for node_id, (lo, hi) in placement.assignments:
        if lo >= hi:
            violations.append(Violation("NotContiguous",
                                        f"empty range {lo}..{hi} on {node_id}"))
            continue
        if lo > expected:
            violations.append(Violation(
                "CoverageGap", f"layers {expected}..{lo - 1} are unassigned"))
        elif lo < expected:
            violations.append(Violation(
                "NotContiguous", f"range starting at {lo} overlaps earlier ranges"))
        expected = max(expected, hi)
    if expected < n_layers:
        violations.append(Violation(
            "CoverageGap", f"layers {expected}..{n_layers - 1} are unassigned"))
    if expected > n_layers:
        violations.append(Violation(
            "NotContiguous", f"ranges extend past the last layer ({n_layers - 1})"))

    for node_id, (lo, hi) in placement.assignments:
        if not network.has_node(node_id):
            violations.append(Violation("UnknownNode", f"node {node_id!r} not in fleet"))
            continue
        node = network.node(node_id)
        if not node.online:
            violations.append(Violation("NodeOffline", f"node {node_id!r} is offline"))
        assigned = sum(per_layer[lo:min(hi, n_layers)])
        if assigned > node.mem_free_bytes:
            violations.append(Violation(
                "MemoryExceeded",
                f"node {node_id!r} holds {assigned} bytes, free {node.mem_free_bytes}"))

    for i in range(len(placement.assignments) - 1):
        a = placement.assignments[i][0]
        b = placement.assignments[i + 1][0]
        if network.has_node(a) and network.has_node(b) and a != b:
            if network.link_between(a, b) is None:
                violations.append(Violation(
                    "MissingLink", f"no link between consecutive nodes {a!r} and {b!r}"))
    return violations


# --- JSON interchange ---------------------------------------------------------------

def scenario_to_json(scenario: NetworkScenario) -> dict:
    return {
        "radius_r": scenario.radius_r,
        "parent_id": scenario.parent_id,
        "max_nodes": scenario.max_nodes,
        "nodes": [
            {
                "id": n.id,
                "mem_free_bytes": n.mem_free_bytes,
                "speed_flops_per_sec": n.speed_flops_per_sec,
                "workload_frac": n.workload_frac,
                "position": list(n.position),
                "online": n.online,
            }
            for n in scenario.nodes
        ],
        "links": [
            {
                "a": l.a,
                "b": l.b,
                "latency_sec": l.latency_sec,
                "bandwidth_bytes_per_sec": l.bandwidth_bytes_per_sec,
            }
            for l in scenario.links
        ],
    }


def scenario_from_json(doc: dict) -> NetworkScenario:
    nodes = [
        NodeProfile(
            id=entry["id"],
            mem_free_bytes=int(entry["mem_free_bytes"]),
            speed_flops_per_sec=float(entry["speed_flops_per_sec"]),
            workload_frac=float(entry.get("workload_frac", 0.0)),
            position=tuple(entry.get("position", (0.0, 0.0))),
            online=bool(entry.get("online", True)),
        )
        for entry in doc["nodes"]
    ]
    links = [
        LinkProfile(
            a=entry["a"],
            b=entry["b"],
            latency_sec=float(entry["latency_sec"]),
            bandwidth_bytes_per_sec=float(entry["bandwidth_bytes_per_sec"]),
        )
        for entry in doc["links"]
    ]
    return NetworkScenario(nodes, links, float(doc["radius_r"]),
                           doc["parent_id"], int(doc.get("max_nodes", 4)))


def load_scenario(path) -> NetworkScenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_json(json.load(fh))


def save_scenario(scenario: NetworkScenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_json(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")


def placement_to_json(placement: Placement) -> dict:
    return {
        "parent_id": placement.parent_id,
        "assignments": [
            {"node_id": node_id, "layers": [lo, hi]}
            for node_id, (lo, hi) in placement.assignments
        ],
        "cut_bytes": list(placement.cut_bytes),
    }


def placement_from_json(doc: dict) -> Placement:
    assignments = [(entry["node_id"], (int(entry["layers"][0]), int(entry["layers"][1])))
                   for entry in doc["assignments"]]
    return Placement(assignments, [int(v) for v in doc.get("cut_bytes", [])],
                     doc["parent_id"])


def load_placement(path) -> Placement:
    with open(path, "r", encoding="utf-8") as fh:
        return placement_from_json(json.load(fh))


def save_placement(placement: Placement, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(placement_to_json(placement), fh, indent=2, sort_keys=True)
        fh.write("\n")
