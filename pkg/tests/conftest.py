import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from latem import delay_model as dm

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")

GOLDENS = Path(__file__).parent / "goldens"
FIXTURES = Path(__file__).parent / "fixtures"

# Five nodes, three quantized delay levels (20/30/50 ms at quantum 10).
FIVE_NODE_ENTRIES = np.array(
    [
        [0, 18, 33, 52, 49],
        [18, 0, 28, 54, 16],
        [33, 28, 0, 47, 31],
        [52, 54, 47, 0, 22],
        [49, 16, 31, 22, 0],
    ],
    dtype=float,
)
FIVE_NODE_IPS = ["10.0.0.1", "10.0.0.2", "10.0.0.3", "10.0.0.4", "10.0.0.5"]


@pytest.fixture
def five_node_classes() -> dm.DelayClassMap:
    policy = dm.QuantizationPolicy()
    quantized = dm.quantize(dm.DelayMatrix(FIVE_NODE_ENTRIES), policy)
    return dm.build_classes(quantized, FIVE_NODE_IPS, policy)


def random_symmetric_matrix(rng: np.random.Generator, n: int, max_ms: float = 300.0):
    upper = np.triu(rng.uniform(0, max_ms, size=(n, n)), k=1)
    return dm.DelayMatrix(upper + upper.T)


def random_class_map(seed: int, max_nodes: int = 50) -> dm.DelayClassMap:
    """Seeded random class map over <= max_nodes IPs.

    Delay levels are multiples of 10 in [10, 2550]; the level-pool size varies
    from a handful up to 200, so class counts range from tiny to near the
    two-level tree's capacity.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_nodes + 1))
    pool = int(rng.integers(1, 201))
    levels = rng.choice(np.arange(1, 256) * 10, size=pool, replace=False)
    q = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            q[i, j] = q[j, i] = int(rng.choice(levels))
    ips = [f"10.0.{idx // 250}.{(idx % 250) + 1}" for idx in range(n)]
    return dm.build_classes(q, ips, dm.QuantizationPolicy())


def minimal_manifest_dict(**overrides) -> dict:
    base = {
        "name": "mini",
        "nodes": [
            {
                "name": "node001",
                "ip": "10.1.0.1",
                "image": "latem/node:latest",
                "processes": [
                    {"binary": "nodeproc", "args": ["--peer-file", "/etc/peers"], "start_phase": "start-proc"}
                ],
            },
            {
                "name": "node002",
                "ip": "10.1.0.2",
                "image": "latem/node:latest",
                "roles": ["validator"],
                "processes": [
                    {"binary": "nodeproc", "args": [], "start_phase": "start-proc"}
                ],
            },
        ],
        "phases": [
            {"name": "launch", "action": "launch"},
            {"name": "start-proc", "action": "signal", "signal": "SIGUSR1", "stagger_ms": 500},
        ],
    }
    base.update(overrides)
    return base


def write_manifest(tmp_path: Path, data: dict, name: str = "manifest.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2))
    return path
