"""Online MotionBits segmentation loop over a flow sequence."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .flowio import FlowField, warp_labels
from .graph import (MotionGraph, TemporalPrior, _side_of, build_twist_sim_graph,
                    estimate_local_twists, sample_nodes)
from .kinematics import RansacConfig
from .segment import (IdRegistry, drop_small_clusters, hard_markov_clustering,
                      rasterize_masks, select_seeds, soft_label_propagation)


@dataclass(frozen=True)
class PipelineConfig:
    n: int = 10_000
    k: int = 5
    seed_fraction: float = 0.04
    seeds: int | None = None  # explicit C; default floor(seed_fraction * n)
    R: int = 100
    r_star: int = 5
    inflation: float = 1.15
    expansion: int = 2
    mcl_max_iter: int = 200
    mcl_tol: float = 1e-6
    motion_eps: float = 0.5
    motion_gate: str = "displacement"
    ransac_iterations: int = 50
    ransac_threshold: float = 1.0
    cov_reg: float = 1e-6
    weight_floor: float = 1e-12
    min_cluster_nodes: int | None = None  # default k + 1: one full neighbourhood
    raster_radius: float = 1.5
    smooth: bool = False
    history: int | None = None
    boundary_tol: float | None = None
    seed: int = 0

    @property
    def C(self):
        return self.seeds if self.seeds is not None else int(np.floor(self.seed_fraction * self.n))

    def validate(self):
        _side_of(self.n)
        checks = [
            (self.k >= 2, "k must be >= 2"),
            (self.R >= 1, "R must be >= 1"),
            (1 <= self.r_star <= self.R, "r_star must lie in [1, R]"),
            (self.inflation > 1, "inflation must be > 1"),
            (self.expansion >= 2 and int(self.expansion) == self.expansion, "expansion must be an integer >= 2"),
            (self.C >= 1, "seed count must be >= 1"),
            (self.motion_eps >= 0, "motion_eps must be >= 0"),
            (self.motion_gate in ("twist", "displacement"), "motion_gate must be 'twist' or 'displacement'"),
            (self.ransac_iterations >= 1 and self.ransac_threshold > 0, "invalid RANSAC parameters"),
            (self.history is None or self.history >= 1, "history must be >= 1"),
            (self.boundary_tol is None or self.boundary_tol >= 0, "boundary_tol must be >= 0"),
            (self.mcl_max_iter >= 1, "mcl_max_iter must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ParameterError(msg)
        return self

    @property
    def min_cluster(self):
        return self.k + 1 if self.min_cluster_nodes is None else self.min_cluster_nodes

    @property
    def ransac(self):
        return RansacConfig(self.ransac_iterations, self.ransac_threshold, self.seed)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def override(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None}).validate()


@dataclass
class FrameResult:
    t: int
    labels: np.ndarray
    graph: MotionGraph
    node_clusters: np.ndarray
    node_ids: np.ndarray
    converged: bool
    timing: dict

    def sidecar(self, timing=False):
        g = self.graph
        d = {
            "t": self.t,
            "side": g.side,
            "nodes": {
                "positions": np.round(g.P, 6).tolist(),
                "twists": np.round(g.twists, 9).tolist(),
                "moving": g.moving.astype(int).tolist(),
                "cluster": self.node_ids.astype(int).tolist(),
            },
            "graph": g.stats,
            "mcl_converged": bool(self.converged),
            "motionbits": sorted(int(i) for i in np.unique(self.labels[self.labels > 0])),
        }
        if timing:
            d["timing"] = self.timing
        return d


class MotionBitsSegmenter:
    """Stateful online segmenter: feed F_{t->t-1} and F_{t-1->t} for t = 1, 2, ...

    Keeps the projected prior masks (warped forward to the current frame), the
    previous graph's edited affinity and the ID registry.
    """

    def __init__(self, config: PipelineConfig = PipelineConfig()):
        self.config = config.validate()
        self.t = 0
        self.priors = []  # label maps warped to the latest frame, oldest first
        self.prev_graph = None
        self.registry = IdRegistry()

    def step(self, flow_bwd: FlowField, flow_fwd_prev: FlowField) -> FrameResult:
        cfg = self.config
        self.t += 1
        clock = {}
        t0 = time.perf_counter()

        self.priors = [warp_labels(L, flow_fwd_prev) for L in self.priors]
        grid = sample_nodes(flow_bwd, cfg.n, cfg.k)
        local = estimate_local_twists(grid, cfg.ransac, cfg.motion_eps, cfg.motion_gate)
        clock["twists"] = time.perf_counter() - t0

        prior = None
        if self.priors:
            node_px = np.clip(np.rint(grid.P), 0, [flow_bwd.width - 1, flow_bwd.height - 1]).astype(int)
            hist = np.stack([L[node_px[:, 1], node_px[:, 0]] for L in self.priors])
            back = grid.nearest_node(grid.Q)
            prev_w = self.prev_graph.W if self.prev_graph is not None else None
            prior = TemporalPrior(hist, prev_w, back)
        graph = build_twist_sim_graph(local, grid, prior, cfg.cov_reg, cfg.weight_floor)
        clock["graph"] = time.perf_counter() - t0 - sum(clock.values())

        seeds = select_seeds(graph.active, graph.side, cfg.C)
        B = soft_label_propagation(graph.W, seeds, cfg.R, cfg.r_star, graph.active)
        clock["propagation"] = time.perf_counter() - t0 - sum(clock.values())

        clusters, converged = hard_markov_clustering(B, cfg.inflation, cfg.expansion,
                                                     cfg.mcl_max_iter, cfg.mcl_tol)
        clusters = drop_small_clusters(np.where(graph.active, clusters, 0), cfg.min_cluster)
        clock["clustering"] = time.perf_counter() - t0 - sum(clock.values())

        prev = self.priors[-1] if self.priors else None
        labels, mapping = rasterize_masks(clusters, graph.side, flow_bwd.width, flow_bwd.height,
                                          prev, self.registry, cfg.raster_radius, cfg.smooth)
        node_ids = np.array([mapping.get(int(c), 0) for c in clusters], dtype=np.int64)
        clock["raster"] = time.perf_counter() - t0 - sum(clock.values())

        self.priors.append(labels)
        if cfg.history is not None:
            self.priors = self.priors[-cfg.history:]
        self.prev_graph = graph
        return FrameResult(self.t, labels, graph, clusters, node_ids, converged,
                           {k: round(v, 6) for k, v in clock.items()})


def segment_sequence(bwd_flows, fwd_flows, config: PipelineConfig = PipelineConfig()):
    """Run the online loop. ``bwd_flows[i]`` is F_{t->t-1} and ``fwd_flows[i]`` is
    F_{t-1->t} for t = i + 1. Yields a FrameResult per frame."""
    seg = MotionBitsSegmenter(config)
    for fb, ff in zip(bwd_flows, fwd_flows):
        yield seg.step(fb, ff)
