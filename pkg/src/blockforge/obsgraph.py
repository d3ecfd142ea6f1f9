"""Object-state features and observation graphs."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .physics import FLOOR_ID, HALF_W, WORLD_H, Body, Kind, Scene, contact_pairs, floor_body

N_FEATURES = 15
EDGE_DIM = 1
GLOBAL_DIM = 1

# column layout of a node feature vector
X, Y, COS, SIN, W, H, VX, VY, VTH, STICKY = range(10)
ONEHOT = {Kind.AVAILABLE: 10, Kind.PLACED: 11, Kind.TARGET_BLOCK: 12, Kind.TARGET_POINT: 12,
          Kind.OBSTACLE: 13, Kind.FLOOR: 11}
PAD = 14

REFERENCE_KINDS = frozenset({Kind.PLACED, Kind.TARGET_BLOCK, Kind.TARGET_POINT, Kind.FLOOR})


class Connectivity(str, enum.Enum):
    SPARSE = "sparse"
    FULL = "full"


def body_feature(body: Body) -> np.ndarray:
    f = np.zeros(N_FEATURES)
    r = body.rect
    f[X], f[Y] = r.cx, r.cy
    f[COS], f[SIN] = 1.0, 0.0
    f[W], f[H] = r.w, r.h
    f[STICKY] = float(body.sticky)
    f[ONEHOT[body.kind]] = 1.0
    return f


def encode_features(scene: Scene) -> tuple[list[int], np.ndarray]:
    """Ids and 15-float feature rows of every non-floor body, in scene order.

    Velocities are always zero and orientation is always (1, 0) because the
    engine is quasi-static.
    """
    bodies = [b for b in scene.bodies if b.kind is not Kind.FLOOR]
    feats = np.array([body_feature(b) for b in bodies]).reshape(len(bodies), N_FEATURES)
    return [b.id for b in bodies], feats


def wants_floor_proxy(scene: Scene, mode: str = "auto") -> bool:
    if mode == "always":
        return True
    if mode == "never":
        return False
    # targets already give first blocks something to reference
    return not scene.targets


@dataclass
class ObsGraph:
    node_ids: np.ndarray  # body id per node (floor proxy has id 0)
    node_kinds: list[Kind]
    nodes: np.ndarray  # (N, 15) raw features
    senders: np.ndarray  # (E,) node indices
    receivers: np.ndarray
    edges: np.ndarray  # (E, EDGE_DIM)
    globals: np.ndarray  # (GLOBAL_DIM,)
    action_edge_index: np.ndarray  # positions in the edge list that index actions

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.senders)

    def edge_ids(self, k: int) -> tuple[int, int]:
        return int(self.node_ids[self.senders[k]]), int(self.node_ids[self.receivers[k]])

    @cached_property
    def action_pairs(self) -> tuple[tuple[int, int], ...]:
        ids = self.node_ids
        idx = self.action_edge_index
        return tuple(zip(ids[self.senders[idx]].tolist(), ids[self.receivers[idx]].tolist()))

    @cached_property
    def action_pair_set(self) -> frozenset:
        return frozenset(self.action_pairs)

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": int(i), "kind": k.value, "features": f.tolist()}
                      for i, k, f in zip(self.node_ids, self.node_kinds, self.nodes)],
            "edges": [[*self.edge_ids(k), self.edges[k].tolist()] for k in range(self.n_edges)],
            "globals": self.globals.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def normalized_nodes(self) -> np.ndarray:
        """Node features with positions and sizes scaled by the world half-extent."""
        out = self.nodes.copy()
        out[:, X] /= HALF_W
        out[:, Y] = (out[:, Y] - WORLD_H / 2) / HALF_W
        out[:, W] /= HALF_W
        out[:, H] /= HALF_W
        return out


def _pairs_sparse(ids: list[int], kinds: list[Kind], contacts: set[tuple[int, int]]) -> set[tuple[int, int]]:
    blocks = {Kind.PLACED, Kind.AVAILABLE}
    pairs = set()
    n = len(ids)
    for a in range(n):
        for b in range(a + 1, n):
            ka, kb = kinds[a], kinds[b]
            if Kind.AVAILABLE in (ka, kb):
                pairs.add((a, b))
            elif (ka in (Kind.TARGET_BLOCK, Kind.TARGET_POINT, Kind.OBSTACLE) and kb in blocks) or \
                    (kb in (Kind.TARGET_BLOCK, Kind.TARGET_POINT, Kind.OBSTACLE) and ka in blocks):
                pairs.add((a, b))
            elif (min(ids[a], ids[b]), max(ids[a], ids[b])) in contacts:
                pairs.add((a, b))
    return pairs


def build_graph(scene: Scene, connectivity: Connectivity | str = Connectivity.FULL,
                floor_proxy: str = "auto") -> ObsGraph:
    """Directed graph with one node per body (plus optional floor proxy).

    Nodes follow ascending body id; edges are sorted by (sender id, receiver id).
    """
    connectivity = Connectivity(connectivity)
    bodies = sorted((b for b in scene.bodies if b.kind is not Kind.FLOOR), key=lambda b: b.id)
    if wants_floor_proxy(scene, floor_proxy):
        bodies.insert(0, floor_body())
    ids = [b.id for b in bodies]
    kinds = [b.kind for b in bodies]
    nodes = np.array([body_feature(b) for b in bodies]).reshape(len(bodies), N_FEATURES)

    n = len(bodies)
    if connectivity is Connectivity.FULL:
        directed = [(a, b) for a in range(n) for b in range(n) if a != b]
    else:
        und = _pairs_sparse(ids, kinds, contact_pairs(scene))
        directed = sorted({(a, b) for a, b in und} | {(b, a) for a, b in und})
    # ids are ascending with node index, so index order is id order
    directed.sort()
    senders = np.array([a for a, _ in directed], dtype=np.int64)
    receivers = np.array([b for _, b in directed], dtype=np.int64)
    action = [k for k, (a, b) in enumerate(directed)
              if kinds[a] is Kind.AVAILABLE and kinds[b] in REFERENCE_KINDS]
    return ObsGraph(
        node_ids=np.array(ids, dtype=np.int64),
        node_kinds=kinds,
        nodes=nodes,
        senders=senders,
        receivers=receivers,
        edges=np.zeros((len(directed), EDGE_DIM)),
        globals=np.zeros(GLOBAL_DIM),
        action_edge_index=np.array(action, dtype=np.int64),
    )


def action_edges(graph: ObsGraph) -> list[tuple[int, int]]:
    """(available id, reference id) pairs that index discrete-relative actions."""
    return list(graph.action_pairs)
