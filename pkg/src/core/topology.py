"""
Population Topology
Lattices, honeycomb and well-mixed interaction structures with fixed neighbour order
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from src.error_handling import TopologyError
from src.utils.seeding import Stream, rng_for

logger = logging.getLogger(__name__)

# (row offset, column offset) in compass order
VON_NEUMANN_OFFSETS = [(-1, 0), (0, 1), (1, 0), (0, -1)]
MOORE_OFFSETS = VON_NEUMANN_OFFSETS + [(-1, 1), (1, 1), (1, -1), (-1, -1)]

MAX_MATCHING_RESTARTS = 1000
# least recently used well-mixed rounds beyond this are dropped
ROUND_CACHE_SIZE = 4096


class TopologyKind(Enum):
    """Interaction structure"""
    LATTICE_VON_NEUMANN = "von_neumann"
    LATTICE_MOORE = "moore"
    HONEYCOMB = "honeycomb"
    WELL_MIXED = "well_mixed"

    @property
    def is_lattice(self) -> bool:
        return self is not TopologyKind.WELL_MIXED


@dataclass
class NeighborGraph:
    """Agent adjacency with deterministic per-agent neighbour ordering

    Lattices store a fixed (n_agents, degree) adjacency. Well-mixed graphs
    store only their seed; the round-t matching is a pure function of
    (seed, t); recent rounds are cached per instance.
    """
    n_agents: int
    degree: int
    kind: TopologyKind
    adjacency: Optional[np.ndarray] = None
    side: Optional[int] = None
    seed: Optional[int] = None
    resample_each_step: bool = False
    steps_per_round: int = 1
    _rounds: "OrderedDict[int, np.ndarray]" = field(default_factory=OrderedDict, repr=False)

    def adjacency_at(self, t: int) -> np.ndarray:
        """(n_agents, degree) neighbour indices in force at timestep t"""
        if self.kind.is_lattice:
            return self.adjacency
        round_index = t if self.resample_each_step else t // max(self.steps_per_round, 1)
        if round_index in self._rounds:
            self._rounds.move_to_end(round_index)
            return self._rounds[round_index]
        adjacency = _sample_round(self.n_agents, self.degree, self.seed, round_index)
        self._rounds[round_index] = adjacency
        if len(self._rounds) > ROUND_CACHE_SIZE:
            self._rounds.popitem(last=False)
        return adjacency

    def grid_shape(self) -> Tuple[int, int]:
        if not self.kind.is_lattice:
            raise TopologyError(f"{self.kind.value} topology has no grid shape")
        return self.side, self.side


def build_lattice(L: int, kind: TopologyKind) -> NeighborGraph:
    """L x L torus with compass-ordered neighbours; agent index = row * L + col"""
    if not kind.is_lattice:
        raise TopologyError("build_lattice needs a lattice kind; use build_well_mixed")
    if L < 3:
        raise TopologyError(f"Lattice side L={L} too small; periodic wrap would self-link (need L >= 3)")

    if kind is TopologyKind.HONEYCOMB:
        if L % 2 != 0 or L < 4:
            raise TopologyError(f"Honeycomb brick-wall tiling needs an even side L >= 4, got L={L}")
        adjacency = _honeycomb_adjacency(L)
    else:
        offsets = VON_NEUMANN_OFFSETS if kind is TopologyKind.LATTICE_VON_NEUMANN else MOORE_OFFSETS
        rows, cols = np.divmod(np.arange(L * L), L)
        adjacency = np.stack(
            [((rows + dr) % L) * L + (cols + dc) % L for dr, dc in offsets], axis=1
        )

    graph = NeighborGraph(
        n_agents=L * L,
        degree=adjacency.shape[1],
        kind=kind,
        adjacency=adjacency.astype(np.int64),
        side=L,
    )
    logger.debug(f"Built {kind.value} lattice L={L} degree={graph.degree}")
    return graph


def _honeycomb_adjacency(L: int) -> np.ndarray:
    """Brick-wall embedding: vertical link N on even (row+col), S on odd, then E, W"""
    rows, cols = np.divmod(np.arange(L * L), L)
    even = (rows + cols) % 2 == 0
    vertical_rows = np.where(even, (rows - 1) % L, (rows + 1) % L)
    vertical = vertical_rows * L + cols
    east = rows * L + (cols + 1) % L
    west = rows * L + (cols - 1) % L
    return np.stack([vertical, east, west], axis=1)


def build_well_mixed(n: int, k: int, seed: int, resample_each_step: bool = True,
                     steps_per_round: int = 1) -> NeighborGraph:
    """k opponents per round, resampled from (seed, round index)"""
    if k < 1:
        raise TopologyError(f"Well-mixed group size k={k} must be at least 1")
    if k >= n:
        raise TopologyError(f"Well-mixed group size k={k} must be below population size n={n}")
    if (n * k) % 2 != 0:
        raise TopologyError(f"No {k}-regular round matching exists on n={n} agents (n*k must be even)")

    return NeighborGraph(
        n_agents=n,
        degree=k,
        kind=TopologyKind.WELL_MIXED,
        seed=int(seed),
        resample_each_step=resample_each_step,
        steps_per_round=steps_per_round,
    )


def _sample_round(n: int, k: int, seed: int, round_index: int) -> np.ndarray:
    rng = rng_for(seed, Stream.TOPOLOGY, round_index)
    if k == 1:
        order = rng.permutation(n)
        partners = np.empty(n, dtype=np.int64)
        partners[order[0::2]] = order[1::2]
        partners[order[1::2]] = order[0::2]
        return partners[:, None]

    for _ in range(MAX_MATCHING_RESTARTS):
        edges = _pair_stubs(n, k, rng)
        if edges is not None:
            break
    else:
        raise TopologyError(f"Could not sample a simple {k}-regular round graph on {n} agents")

    adjacency = np.sort(np.array(edges, dtype=np.int64).reshape(n, k), axis=1)
    return adjacency


def _pair_stubs(n: int, k: int, rng: np.random.Generator) -> Optional[List[List[int]]]:
    """Random stub pairing without self or multi-edges; None means restart"""
    connected = np.zeros((n, n), dtype=bool)
    np.fill_diagonal(connected, True)
    stubs = rng.permutation(np.repeat(np.arange(n), k))
    partners: List[List[int]] = [[] for _ in range(n)]

    while stubs.size:
        u = stubs[-1]
        stubs = stubs[:-1]
        candidates = np.flatnonzero(~connected[u, stubs])
        if candidates.size == 0:
            return None
        pick = candidates[rng.integers(candidates.size)]
        v = stubs[pick]
        stubs = np.delete(stubs, pick)
        connected[u, v] = connected[v, u] = True
        partners[u].append(int(v))
        partners[v].append(int(u))
    return partners


def neighbours(g: NeighborGraph, i: int, t: int = 0) -> List[int]:
    """Ordered neighbour list of agent i at timestep t"""
    if not 0 <= i < g.n_agents:
        raise TopologyError(f"Agent index {i} out of range for {g.n_agents} agents")
    return [int(j) for j in g.adjacency_at(t)[i]]


def reverse_slots(adjacency: np.ndarray) -> np.ndarray:
    """rev[i, s] = slot that i occupies in the list of its s-th neighbour"""
    n, degree = adjacency.shape
    rev = np.full((n, degree), -1, dtype=np.int64)
    for s in range(degree):
        targets = adjacency[:, s]
        # first slot of i in each target's row
        matches = adjacency[targets] == np.arange(n)[:, None]
        if not matches.any(axis=1).all():
            raise TopologyError("Adjacency is not symmetric")
        rev[:, s] = matches.argmax(axis=1)
    return rev


def build_graph(kind: TopologyKind, side: Optional[int] = None, n_agents: Optional[int] = None,
                group_size: Optional[int] = None, seed: int = 0, resample_each_step: bool = True,
                steps_per_round: int = 1) -> NeighborGraph:
    """Dispatch on kind; lattices need side, well-mixed needs n_agents and group_size"""
    if kind.is_lattice:
        if side is None:
            raise TopologyError(f"{kind.value} topology needs a lattice side")
        return build_lattice(side, kind)
    if n_agents is None or group_size is None:
        raise TopologyError("well_mixed topology needs n_agents and group_size")
    return build_well_mixed(n_agents, group_size, seed, resample_each_step, steps_per_round)
