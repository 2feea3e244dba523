"""Grid-world domains: RandomWalk2D and Maze2D."""
from __future__ import annotations

import heapq
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .board import GridBoard, reachable
from .domain import Domain, PlannerResult
from .spaces import CompositeSpace, IntervalBlock, SimplexBlock

OBSTACLE_PROB = 0.2
# (up, down, left, right)
DIRECTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))
_WALK_CHUNK = 64


@dataclass(frozen=True)
class WalkOutcome:
    steps: int
    reached: bool
    objective: float


@dataclass(frozen=True)
class SearchOutcome:
    expansions: int
    n_empty: int
    objective: float


def step_cap(size):
    return 4 * size * size


# -- instance generation ----------------------------------------------------------


def sample_obstacles(size, rng):
    return rng.random((size, size)) < OBSTACLE_PROB


def generate_randomwalk_instance(size, rng):
    """Bernoulli(0.2) obstacles, uniform start/goal; whole board resampled until solvable."""
    if size < 2:
        raise ValueError("size must be >= 2")
    while True:
        occ = sample_obstacles(size, rng)
        free = np.flatnonzero(~occ.ravel())
        if free.size < 2:
            continue
        s, g = free[rng.integers(free.size, size=2)]
        if s == g:
            continue
        start, goal = divmod(int(s), size), divmod(int(g), size)
        if reachable(occ, start, goal):
            return GridBoard(occ, start, goal)


def wilson_tree(k, rng):
    """Uniform spanning tree of the k x k lattice as a list of edges between cells."""
    n = k * k
    in_tree = np.zeros(n, dtype=bool)
    in_tree[rng.integers(n)] = True
    edges = []
    nxt = {}
    for cell in rng.permutation(n):
        cell = int(cell)
        cur = cell
        while not in_tree[cur]:
            r, c = divmod(cur, k)
            nbrs = [(r + dr) * k + (c + dc) for dr, dc in DIRECTIONS if 0 <= r + dr < k and 0 <= c + dc < k]
            # overwriting the exit of revisited cells erases loops
            nxt[cur] = nbrs[rng.integers(len(nbrs))]
            cur = nxt[cur]
        cur = cell
        while not in_tree[cur]:
            in_tree[cur] = True
            edges.append((cur, nxt[cur]))
            cur = nxt[cur]
    return edges


def generate_maze_instance(size, rng):
    """Perfect maze: passages on (even, even) cells joined by a Wilson spanning tree."""
    if size < 3 or size % 2 == 0:
        raise ValueError(f"maze size must be odd and >= 3, got {size}")
    k = (size + 1) // 2
    occ = np.ones((size, size), dtype=bool)
    occ[::2, ::2] = False
    for a, b in wilson_tree(k, rng):
        (ra, ca), (rb, cb) = divmod(a, k), divmod(b, k)
        occ[ra + rb, ca + cb] = False  # wall cell between 2*ra,2*ca and 2*rb,2*cb
    free = np.flatnonzero(~occ.ravel())
    s, g = rng.choice(free.size, size=2, replace=False)
    return GridBoard(occ, divmod(int(free[s]), size), divmod(int(free[g]), size))


# -- random walk -------------------------------------------------------------------


def move_table(board):
    """``table[cell, d]`` is the cell reached from ``cell`` by direction ``d``."""
    n = board.size
    occ = board.occupancy
    table = np.empty((n * n, 4), dtype=np.int64)
    for r in range(n):
        for c in range(n):
            i = r * n + c
            for d, (dr, dc) in enumerate(DIRECTIONS):
                nr, nc = r + dr, c + dc
                if 0 <= nr < n and 0 <= nc < n and not occ[nr, nc]:
                    table[i, d] = nr * n + nc
                else:
                    table[i, d] = i
    return table


def _direction_cdf(probs):
    # with side="right" and u in [0, 1), zero-probability directions are never drawn
    cum = np.cumsum(np.asarray(probs, dtype=float).reshape(4))
    return cum / cum[-1]


@lru_cache(maxsize=8192)
def _tables(board):
    table = move_table(board)
    return table, table.tolist()


def walk_steps(board, probs, n, rng, cap=None):
    """Step counts ``min(T, cap)`` of ``n`` independent walks, as an int array."""
    cap = step_cap(board.size) if cap is None else int(cap)
    table, table_list = _tables(board)
    cum = _direction_cdf(probs)
    goal = board.index(board.goal)
    start = board.index(board.start)
    if n == 1:
        return np.array([_walk_one(table_list, cum, start, goal, cap, rng)[0]])
    pos = np.full(n, start, dtype=np.int64)
    steps = np.full(n, cap, dtype=np.int64)
    active = np.arange(n)
    t = 0
    while t < cap and active.size:
        block = min(_WALK_CHUNK, cap - t)
        dirs = np.searchsorted(cum, rng.random((active.size, block)), side="right")
        p = pos[active]
        done_at = np.zeros(active.size, dtype=np.int64)
        for j in range(block):
            p = table[p, dirs[:, j]]
            done_at[(p == goal) & (done_at == 0)] = t + j + 1
            p = np.where(done_at > 0, goal, p)
        finished = done_at > 0
        steps[active[finished]] = done_at[finished]
        pos[active] = p
        active = active[~finished]
        t += block
    return steps


def _walk_one(table, cum, pos, goal, cap, rng):
    # draws exactly like the batched path with n == 1
    t = 0
    while t < cap:
        block = min(_WALK_CHUNK, cap - t)
        dirs = np.searchsorted(cum, rng.random((1, block)), side="right")[0].tolist()
        for d in dirs:
            t += 1
            pos = table[pos][d]
            if pos == goal:
                return t, True
    return cap, False


def simulate_random_walk(board, probs, rng):
    cap = step_cap(board.size)
    table_list = _tables(board)[1]
    steps, reached = _walk_one(
        table_list, _direction_cdf(probs), board.index(board.start), board.index(board.goal), cap, rng
    )
    return WalkOutcome(steps, reached, -steps / cap)


# -- A* -----------------------------------------------------------------------------


def astar_expansions(board, h, tie_break=1):
    """A* from start to goal with priority g + h; counts non-goal pops.

    Ties on f prefer larger g, then smaller row-major index (``tie_break=-1``
    reverses the index order; used only as a negative control).
    """
    n = board.size
    h = np.asarray(h, dtype=float).ravel()
    if h.size != n * n:
        raise ValueError(f"heuristic needs {n * n} entries, got {h.size}")
    occ = board.occupancy.ravel()
    start, goal = board.index(board.start), board.index(board.goal)
    g = np.full(n * n, np.inf)
    closed = np.zeros(n * n, dtype=bool)
    g[start] = 0.0
    heap = [(h[start], 0.0, tie_break * start, start)]
    expansions = 0
    while heap:
        _, neg_g, _, cell = heapq.heappop(heap)
        if closed[cell] or -neg_g > g[cell]:
            continue
        if cell == goal:
            break
        closed[cell] = True
        expansions += 1
        r, c = divmod(cell, n)
        gn = g[cell] + 1.0
        for dr, dc in DIRECTIONS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < n and 0 <= nc < n:
                nb = nr * n + nc
                if not occ[nb] and not closed[nb] and gn < g[nb]:
                    g[nb] = gn
                    heapq.heappush(heap, (gn + h[nb], -gn, tie_break * nb, nb))
    else:
        raise ValueError("goal not reachable from start")
    n_empty = board.n_empty
    return SearchOutcome(expansions, n_empty, -expansions / n_empty)


# -- domains --------------------------------------------------------------------------


def encode_board(board):
    n = board.size
    scale = 1.0 / (n - 1)
    coords = np.array([*board.start, *board.goal], dtype=float) * scale
    return np.concatenate([board.occupancy.ravel().astype(float), coords])


class _Grid2D(Domain):
    def __init__(self, size):
        size = int(size)
        self._check_size(size)
        self.size = size
        self.instance_dim = size * size + 4

    def encode_instance(self, instance):
        if instance.size != self.size:
            raise ValueError(f"{self.identifier} cannot encode a board of size {instance.size}")
        return encode_board(instance)


class RandomWalk2D(_Grid2D):
    name = "RandomWalk2D"

    def __init__(self, size):
        super().__init__(size)
        self.space = CompositeSpace([SimplexBlock(4)])

    @staticmethod
    def _check_size(size):
        if size < 5:
            raise ValueError(f"RandomWalk2D size must be >= 5, got {size}")

    def sample_instance(self, rng):
        return generate_randomwalk_instance(self.size, rng)

    def _plan(self, instance, x, rng):
        out = simulate_random_walk(instance, x, rng)
        return PlannerResult(out.objective, {"steps": float(out.steps), "reached": float(out.reached)})


class Maze2D(_Grid2D):
    name = "Maze2D"

    def __init__(self, size):
        super().__init__(size)
        self.space = CompositeSpace([IntervalBlock(size * size, 0.0, float(size * size))])

    @staticmethod
    def _check_size(size):
        if size < 5 or size % 2 == 0:
            raise ValueError(f"Maze2D size must be odd and >= 5, got {size}")

    def sample_instance(self, rng):
        return generate_maze_instance(self.size, rng)

    def _plan(self, instance, x, rng):
        out = astar_expansions(instance, x)
        return PlannerResult(out.objective, {"expansions": float(out.expansions), "n_empty": float(out.n_empty)})


DOMAINS = {"RandomWalk2D": RandomWalk2D, "Maze2D": Maze2D}
_SPEC_RE = re.compile(r"^\s*([A-Za-z][A-Za-z0-9]*)\[(\d+)\]\s*$")


def parse_domain(spec):
    """Build a domain from ``Name[size]``, e.g. ``Maze2D[11]``."""
    m = _SPEC_RE.match(spec)
    if not m:
        raise ValueError(f"bad domain spec {spec!r}, expected Name[size]")
    name, size = m.group(1), int(m.group(2))
    if name not in DOMAINS:
        raise ValueError(f"unknown domain {name!r}, known: {sorted(DOMAINS)}")
    return DOMAINS[name](size)
