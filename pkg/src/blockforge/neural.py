"""Numpy graph network: encoder, recurrent GN core, decoder and edge Q head.

Everything is float64 with hand-written reverse-mode gradients. A batch of
graphs is one disjoint union with per-element graph indices.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .obsgraph import EDGE_DIM, GLOBAL_DIM, N_FEATURES, ObsGraph

CHECKPOINT_VERSION = 1
GRAD_FLOOR = 1e-5  # below this, relative error degrades to an absolute test at tol * floor
PARTS = ("edge", "node", "glob")


@dataclass(frozen=True)
class GNConfig:
    node_in: int = N_FEATURES
    edge_in: int = EDGE_DIM
    global_in: int = GLOBAL_DIM
    latent: int = 16
    hidden: int = 64
    n_rec: int = 3
    n_offsets: int = 15
    normalize: bool = True

    @property
    def q_out(self) -> int:
        return 2 * self.n_offsets


# ---------------------------------------------------------------------------
# batching


class Segments:
    """Sum rows of ``data`` that share a segment id (scatter-add)."""

    def __init__(self, ids: np.ndarray, n: int):
        self.n = n
        self.order = np.argsort(ids, kind="stable")
        sorted_ids = ids[self.order]
        self.starts = np.searchsorted(sorted_ids, np.arange(n))
        self.nonempty = np.bincount(ids, minlength=n) > 0
        self.empty = len(ids) == 0

    def sum(self, data: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n, data.shape[1]))
        if self.empty:
            return out
        starts = self.starts[self.nonempty]
        out[self.nonempty] = np.add.reduceat(data[self.order], starts, axis=0)
        return out


@dataclass
class GraphBatch:
    nodes: np.ndarray
    edges: np.ndarray
    globals: np.ndarray  # (B, global_in)
    senders: np.ndarray
    receivers: np.ndarray
    node_gid: np.ndarray
    edge_gid: np.ndarray
    edge_offset: np.ndarray  # first edge row of each graph

    def __post_init__(self):
        n, b = len(self.nodes), len(self.globals)
        self.by_sender = Segments(self.senders, n)
        self.by_receiver = Segments(self.receivers, n)
        self.nodes_by_graph = Segments(self.node_gid, b)
        self.edges_by_graph = Segments(self.edge_gid, b)

    @property
    def n_graphs(self) -> int:
        return len(self.globals)

    @classmethod
    def from_graphs(cls, graphs: Sequence[ObsGraph], normalize: bool = True) -> "GraphBatch":
        nodes, edges, glob, snd, rcv, ngid, egid, eoff = [], [], [], [], [], [], [], []
        n0 = e0 = 0
        for k, g in enumerate(graphs):
            nodes.append(g.normalized_nodes() if normalize else g.nodes)
            edges.append(g.edges)
            glob.append(g.globals)
            snd.append(g.senders + n0)
            rcv.append(g.receivers + n0)
            ngid.append(np.full(g.n_nodes, k))
            egid.append(np.full(g.n_edges, k))
            eoff.append(e0)
            n0 += g.n_nodes
            e0 += g.n_edges
        cat = lambda xs, dt=float: np.concatenate(xs).astype(dt)  # noqa: E731
        return cls(
            nodes=np.concatenate(nodes), edges=np.concatenate(edges), globals=np.stack(glob),
            senders=cat(snd, np.int64), receivers=cat(rcv, np.int64),
            node_gid=cat(ngid, np.int64), edge_gid=cat(egid, np.int64),
            edge_offset=np.array(eoff, dtype=np.int64),
        )


# ---------------------------------------------------------------------------
# parameters


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _mlp_params(rng, name: str, d_in: int, hidden: int, d_out: int) -> dict[str, np.ndarray]:
    sizes = [d_in, hidden, hidden, d_out]
    p = {}
    for k in range(3):
        p[f"{name}.{k}.w"] = _glorot(rng, sizes[k], sizes[k + 1])
        p[f"{name}.{k}.b"] = np.zeros(sizes[k + 1])
    return p


def _gru_params(rng, name: str, d_in: int, d: int) -> dict[str, np.ndarray]:
    return {
        f"{name}.w": np.concatenate([_glorot(rng, d_in, d) for _ in range(3)], axis=1),
        f"{name}.u": np.concatenate([_glorot(rng, d, d) for _ in range(3)], axis=1),
        f"{name}.b": np.zeros(3 * d),
    }


def init_params(cfg: GNConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d, h = cfg.latent, cfg.hidden
    p: dict[str, np.ndarray] = {}
    p |= _mlp_params(rng, "enc.edge", cfg.edge_in, h, d)
    p |= _mlp_params(rng, "enc.node", cfg.node_in, h, d)
    p |= _mlp_params(rng, "enc.glob", cfg.global_in, h, d)
    k = 3 * d  # [encoded, previous core output, previous recurrent state]
    p |= _mlp_params(rng, "core.edge", 4 * k, h, d)
    p |= _mlp_params(rng, "core.node", k + d + k, h, d)
    p |= _mlp_params(rng, "core.glob", k + 2 * d, h, d)
    for part in PARTS:
        p |= _gru_params(rng, f"gru.{part}", d, d)
    p |= _mlp_params(rng, "dec.edge", d, h, d)
    p |= _mlp_params(rng, "dec.glob", d, h, d)
    p |= _mlp_params(rng, "q", 2 * d, h, cfg.q_out)
    return p


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def zeros_like(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# layers


_relu_trace: list | None = None  # set by grad_check to record activation patterns


def mlp_forward(p, name: str, x: np.ndarray):
    cache = []
    for k in range(3):
        y = x @ p[f"{name}.{k}.w"] + p[f"{name}.{k}.b"]
        cache.append(x)
        if k < 2:
            if _relu_trace is not None:
                _relu_trace.append(y > 0)
            x = np.maximum(y, 0.0)
        else:
            x = y
    return x, cache


def mlp_backward(p, name: str, cache, dy: np.ndarray, grads) -> np.ndarray:
    for k in (2, 1, 0):
        x = cache[k]
        grads[f"{name}.{k}.w"] += x.T @ dy
        grads[f"{name}.{k}.b"] += dy.sum(axis=0)
        dx = dy @ p[f"{name}.{k}.w"].T
        if k > 0:
            dx = dx * (x > 0)  # x is the ReLU output of the previous layer
        dy = dx
    return dy


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(p, name: str, x: np.ndarray, h: np.ndarray):
    d = h.shape[1]
    w, u, b = p[f"{name}.w"], p[f"{name}.u"], p[f"{name}.b"]
    xw = x @ w + b
    zr = _sigmoid(xw[:, : 2 * d] + h @ u[:, : 2 * d])
    z, r = zr[:, :d], zr[:, d:]
    rh = r * h
    n = np.tanh(xw[:, 2 * d:] + rh @ u[:, 2 * d:])
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, z, r, rh, n)


def gru_backward(p, name: str, cache, dh_new: np.ndarray, grads):
    x, h, z, r, rh, n = cache
    d = h.shape[1]
    w, u = p[f"{name}.w"], p[f"{name}.u"]
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dan = dn * (1.0 - n * n)
    drh = dan @ u[:, 2 * d:].T
    dr = drh * h
    dh += drh * r
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    da = np.concatenate([daz, dar, dan], axis=1)
    grads[f"{name}.w"] += x.T @ da
    grads[f"{name}.b"] += da.sum(axis=0)
    gu = grads[f"{name}.u"]
    gu[:, : 2 * d] += h.T @ da[:, : 2 * d]
    gu[:, 2 * d:] += rh.T @ dan
    dh += da[:, : 2 * d] @ u[:, : 2 * d].T
    dx = da @ w.T
    return dx, dh


# ---------------------------------------------------------------------------
# graph network block


def gn_block(p, prefix: str, batch: GraphBatch, e: np.ndarray, v: np.ndarray, g: np.ndarray):
    """Full GN update with sum aggregation: edges, then nodes, then globals."""
    s, r, eg, ng = batch.senders, batch.receivers, batch.edge_gid, batch.node_gid
    e_in = np.concatenate([e, v[s], v[r], g[eg]], axis=1)
    e_out, ce = mlp_forward(p, f"{prefix}.edge", e_in)
    agg_e = batch.by_receiver.sum(e_out)
    v_in = np.concatenate([v, agg_e, g[ng]], axis=1)
    v_out, cv = mlp_forward(p, f"{prefix}.node", v_in)
    g_in = np.concatenate([g, batch.nodes_by_graph.sum(v_out), batch.edges_by_graph.sum(e_out)], axis=1)
    g_out, cg = mlp_forward(p, f"{prefix}.glob", g_in)
    dims = (e.shape[1], v.shape[1], g.shape[1], e_out.shape[1], v_out.shape[1])
    return (e_out, v_out, g_out), (ce, cv, cg, dims)


def gn_block_backward(p, prefix: str, batch: GraphBatch, cache, de_out, dv_out, dg_out, grads):
    ce, cv, cg, (we, wv, wg, w_eo, w_vo) = cache
    s, r, eg, ng = batch.senders, batch.receivers, batch.edge_gid, batch.node_gid
    dg_in = mlp_backward(p, f"{prefix}.glob", cg, dg_out, grads)
    dg = dg_in[:, :wg].copy()
    dv_out = dv_out + dg_in[:, wg:wg + w_vo][ng]
    de_out = de_out + dg_in[:, wg + w_vo:][eg]
    dv_in = mlp_backward(p, f"{prefix}.node", cv, dv_out, grads)
    dv = dv_in[:, :wv].copy()
    de_out = de_out + dv_in[:, wv:wv + w_eo][r]
    dg += batch.nodes_by_graph.sum(dv_in[:, wv + w_eo:])
    de_in = mlp_backward(p, f"{prefix}.edge", ce, de_out, grads)
    de = de_in[:, :we]
    dv += batch.by_sender.sum(de_in[:, we:we + wv])
    dv += batch.by_receiver.sum(de_in[:, we + wv:we + 2 * wv])
    dg += batch.edges_by_graph.sum(de_in[:, we + 2 * wv:])
    return de, dv, dg


# ---------------------------------------------------------------------------
# full network


def forward(p, cfg: GNConfig, batch: GraphBatch, q_edges: np.ndarray | None = None,
            n_rec: int | None = None):
    """Q values (len(q_edges), 2 * n_offsets) for the requested edge rows.

    Returns (q, cache); pass the cache to :func:`backward`.
    """
    n_rec = cfg.n_rec if n_rec is None else n_rec
    if n_rec < 1:
        raise ValueError("n_rec must be >= 1")
    if q_edges is None:
        q_edges = np.arange(len(batch.senders))
    enc_e, c_ee = mlp_forward(p, "enc.edge", batch.edges)
    enc_v, c_ev = mlp_forward(p, "enc.node", batch.nodes)
    enc_g, c_eg = mlp_forward(p, "enc.glob", batch.globals)
    enc = (enc_e, enc_v, enc_g)
    out = tuple(np.zeros_like(x) for x in enc)
    hid = tuple(np.zeros_like(x) for x in enc)
    steps = []
    for _ in range(n_rec):
        ins = [np.concatenate([enc[k], out[k], hid[k]], axis=1) for k in range(3)]
        out, c_core = gn_block(p, "core", batch, *ins)
        new_hid, c_gru = [], []
        for k, part in enumerate(PARTS):
            h, c = gru_forward(p, f"gru.{part}", out[k], hid[k])
            new_hid.append(h)
            c_gru.append(c)
        hid = tuple(new_hid)
        steps.append((c_core, c_gru))
    dec_e, c_de = mlp_forward(p, "dec.edge", hid[0][q_edges])
    dec_g, c_dg = mlp_forward(p, "dec.glob", hid[2])
    q_in = np.concatenate([dec_e, dec_g[batch.edge_gid[q_edges]]], axis=1)
    q, c_q = mlp_forward(p, "q", q_in)
    cache = dict(batch=batch, q_edges=q_edges, enc=(c_ee, c_ev, c_eg), steps=steps,
                 dec=(c_de, c_dg), q=c_q, d=cfg.latent, shapes=[x.shape for x in enc])
    return q, cache


def backward(p, cache, dq: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of sum(dq * q) with respect to every parameter."""
    grads = zeros_like(p)
    batch, q_edges, d = cache["batch"], cache["q_edges"], cache["d"]
    dq_in = mlp_backward(p, "q", cache["q"], dq, grads)
    c_de, c_dg = cache["dec"]
    d_dec_g = np.zeros((batch.n_graphs, d))
    np.add.at(d_dec_g, batch.edge_gid[q_edges], dq_in[:, d:])
    dh_g = mlp_backward(p, "dec.glob", c_dg, d_dec_g, grads)
    dh_e_sub = mlp_backward(p, "dec.edge", c_de, dq_in[:, :d], grads)
    shapes = cache["shapes"]
    dh_e = np.zeros(shapes[0])
    np.add.at(dh_e, q_edges, dh_e_sub)
    dhid = [dh_e, np.zeros(shapes[1]), dh_g]
    dout = [np.zeros(s) for s in shapes]
    denc = [np.zeros(s) for s in shapes]
    for c_core, c_gru in reversed(cache["steps"]):
        d_core_out, dh_prev = [], []
        for k, part in enumerate(PARTS):
            dx, dh = gru_backward(p, f"gru.{part}", c_gru[k], dhid[k], grads)
            d_core_out.append(dx + dout[k])
            dh_prev.append(dh)
        dins = gn_block_backward(p, "core", batch, c_core, *d_core_out, grads)
        for k in range(3):
            denc[k] += dins[k][:, :d]
            dout[k] = dins[k][:, d:2 * d]
            dhid[k] = dh_prev[k] + dins[k][:, 2 * d:]
    for k, part in enumerate(PARTS):
        mlp_backward(p, f"enc.{part}", cache["enc"][k], denc[k], grads)
    return grads


def q_values(p, cfg: GNConfig, graph: ObsGraph, n_rec: int | None = None) -> np.ndarray:
    """(n_action_edges, 2 * n_offsets) Q matrix for one observation."""
    batch = GraphBatch.from_graphs([graph], cfg.normalize)
    q, _ = forward(p, cfg, batch, graph.action_edge_index, n_rec)
    return q


# ---------------------------------------------------------------------------
# gradient check


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    n_skipped: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_error < self.tol


def _traced_loss(p, cfg, batch, weights):
    global _relu_trace
    _relu_trace = []
    try:
        loss = float(np.sum(weights * forward(p, cfg, batch)[0]))
        return loss, _relu_trace
    finally:
        _relu_trace = None


def _same_pattern(a: list, b: list) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(p, cfg: GNConfig, batch: GraphBatch, weights: np.ndarray | None = None,
               tol: float = 1e-4, step: float = 1e-5, n_samples: int = 40, seed: int = 0,
               grads: dict[str, np.ndarray] | None = None, max_draws: int = 2000) -> GradCheckReport:
    """Compare analytic gradients of sum(weights * Q) with central differences.

    A probe whose +-step perturbation flips any ReLU on or off straddles a
    kink, where the difference quotient is not a derivative; such probes are
    counted as skipped and another coordinate is drawn. ``grads`` may be
    supplied to check an externally computed gradient.
    """
    rng = np.random.default_rng(seed)
    q, cache = forward(p, cfg, batch)
    if weights is None:
        weights = rng.standard_normal(q.shape)
    if grads is None:
        grads = backward(p, cache, weights)
    _, base = _traced_loss(p, cfg, batch, weights)
    names = list(p)
    sizes = np.array([p[k].size for k in names], dtype=float)
    worst, checked, skipped = 0.0, 0, 0
    for _ in range(max_draws):
        if checked >= n_samples:
            break
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        flat = p[name].reshape(-1)
        i = int(rng.integers(flat.size))
        old = flat[i]
        flat[i] = old + step
        up, pat_up = _traced_loss(p, cfg, batch, weights)
        flat[i] = old - step
        down, pat_down = _traced_loss(p, cfg, batch, weights)
        flat[i] = old
        if not (_same_pattern(base, pat_up) and _same_pattern(base, pat_down)):
            skipped += 1
            continue
        num = (up - down) / (2 * step)
        ana = float(grads[name].reshape(-1)[i])
        worst = max(worst, abs(num - ana) / max(abs(num) + abs(ana), GRAD_FLOOR))
        checked += 1
    return GradCheckReport(worst, checked, skipped, tol)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict | None = None
    v: dict | None = None

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place update; a parameter with an all-zero gradient is left alone."""
        if self.m is None:
            self.m, self.v = zeros_like(params), zeros_like(params)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if not g.any():
                continue
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# checkpoints


def save_params(params: dict[str, np.ndarray], path: str | Path, cfg: GNConfig | None = None) -> None:
    """Write ``path.bin`` (raw little-endian float64) and ``path.json`` (manifest)."""
    path = Path(path)
    tensors, offset, chunks = [], 0, []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.reshape(-1))
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    path.with_suffix(".bin").write_bytes(blob.astype("<f8").tobytes())
    manifest = {"version": CHECKPOINT_VERSION, "tensors": tensors}
    if cfg is not None:
        manifest["config"] = asdict(cfg)
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_params(path: str | Path) -> tuple[dict[str, np.ndarray], GNConfig | None]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    params = {}
    for t in manifest["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        params[t["name"]] = blob[t["offset"]:t["offset"] + n].reshape(t["shape"]).astype(np.float64)
    cfg = GNConfig(**manifest["config"]) if "config" in manifest else None
    return params, cfg
