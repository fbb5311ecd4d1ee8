"""
Lattice Snapshots
Plain-text grids of actions (C/D) and reputations (3 decimals) with a header line
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from src.core.games import DilemmaAction
from src.core.topology import NeighborGraph
from src.error_handling import SnapshotError, ValidationError

logger = logging.getLogger(__name__)

HEADER = re.compile(r"^# t=(?P<t>-?\d+) T=(?P<T>\S+) S=(?P<S>\S+) seed=(?P<seed>-?\d+)$")


@dataclass
class Snapshot:
    t: int
    T: float
    S: float
    seed: int
    actions: np.ndarray
    reputations: np.ndarray


def export_snapshot(actions: np.ndarray, reputations: np.ndarray, t: int, path: Union[str, Path],
                    graph: NeighborGraph, T: float, S: float, seed: int) -> Path:
    """Write an L x L action grid and reputation grid for a lattice population"""
    if not graph.kind.is_lattice:
        raise SnapshotError(
            f"Snapshots are grid-shaped; {graph.kind.value} populations have no spatial layout"
        )
    rows, cols = graph.grid_shape()
    actions = np.asarray(actions).reshape(rows, cols)
    reputations = np.asarray(reputations, dtype=np.float64).reshape(rows, cols)
    if np.any(np.isnan(reputations)) or np.any(reputations < 0) or np.any(reputations > 1):
        raise SnapshotError("Snapshot reputations must be finite values in [0, 1]")

    lines = [f"# t={int(t)} T={float(T)!r} S={float(S)!r} seed={int(seed)}", "[actions]"]
    lines += [" ".join(DilemmaAction(int(a)).symbol for a in row) for row in actions]
    lines.append("[reputations]")
    lines += [" ".join(f"{p:.3f}" for p in row) for row in reputations]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    logger.debug(f"Snapshot at t={t} written to {path}")
    return path


def parse_snapshot(path: Union[str, Path]) -> Snapshot:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise SnapshotError(f"{path} is empty")
    header = HEADER.match(lines[0])
    if header is None:
        raise SnapshotError(f"{path}: malformed header '{lines[0]}'")
    try:
        split = lines.index("[reputations]")
        if lines[1] != "[actions]":
            raise ValueError
    except (ValueError, IndexError):
        raise SnapshotError(f"{path}: expected [actions] and [reputations] sections")

    try:
        actions = np.array([[DilemmaAction.from_symbol(c).value for c in line.split()] for line in lines[2:split]])
        reputations = np.array([[float(p) for p in line.split()] for line in lines[split + 1:]])
    except (ValueError, ValidationError) as e:
        raise SnapshotError(f"{path}: unreadable grid entry ({e})")
    if actions.shape != reputations.shape:
        raise SnapshotError(f"{path}: grids disagree in shape {actions.shape} vs {reputations.shape}")

    return Snapshot(
        t=int(header["t"]), T=float(header["T"]), S=float(header["S"]), seed=int(header["seed"]),
        actions=actions.astype(np.int64), reputations=reputations,
    )
