from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class GridBoard:
    """Occupancy grid (True = obstacle) with start and goal cells as (row, col)."""

    occupancy: np.ndarray
    start: tuple
    goal: tuple

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 2 or occ.shape[0] != occ.shape[1]:
            raise ValueError(f"occupancy must be square, got shape {occ.shape}")
        occ = occ.copy()
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "start", (int(self.start[0]), int(self.start[1])))
        object.__setattr__(self, "goal", (int(self.goal[0]), int(self.goal[1])))

    @property
    def size(self):
        return self.occupancy.shape[0]

    @property
    def n_empty(self):
        return int((~self.occupancy).sum())

    def is_free(self, cell):
        r, c = cell
        return 0 <= r < self.size and 0 <= c < self.size and not self.occupancy[r, c]

    def index(self, cell):
        return cell[0] * self.size + cell[1]

    def __eq__(self, other):
        return (
            isinstance(other, GridBoard)
            and self.start == other.start
            and self.goal == other.goal
            and np.array_equal(self.occupancy, other.occupancy)
        )

    def __hash__(self):
        return hash((self.occupancy.tobytes(), self.size, self.start, self.goal))

    def key(self):
        return (self.size, self.occupancy.tobytes(), self.start, self.goal)

    def __repr__(self):
        return f"GridBoard(size={self.size}, start={self.start}, goal={self.goal}, n_empty={self.n_empty})"

    def render(self):
        rows = []
        for r in range(self.size):
            row = []
            for c in range(self.size):
                if (r, c) == self.start:
                    row.append("S")
                elif (r, c) == self.goal:
                    row.append("G")
                else:
                    row.append("#" if self.occupancy[r, c] else ".")
            rows.append("".join(row))
        return "\n".join(rows)


def reachable(occupancy, start, goal):
    """4-connected BFS reachability over free cells."""
    n = occupancy.shape[0]
    if occupancy[start] or occupancy[goal]:
        return False
    seen = np.zeros_like(occupancy, dtype=bool)
    seen[start] = True
    q = deque([start])
    while q:
        r, c = q.popleft()
        if (r, c) == goal:
            return True
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < n and 0 <= nc < n and not occupancy[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                q.append((nr, nc))
    return False
