"""Exact reference computations for the grid domains.

None of these reuse the simulator or search code they are meant to check.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right


def _free_cells(board):
    occ = board.occupancy
    return [(r, c) for r in range(occ.shape[0]) for c in range(occ.shape[1]) if not occ[r, c]]


def _neighbours(board, cell):
    n = board.size
    r, c = cell
    for dr, dc in _MOVES:
        nr, nc = r + dr, c + dc
        if 0 <= nr < n and 0 <= nc < n and not board.occupancy[nr, nc]:
            yield (nr, nc)


@dataclass
class ChainModel:
    cells: list
    transition: np.ndarray
    initial: np.ndarray
    goal_state: int


def chain_model(board, probs):
    """Markov chain over free cells; blocked moves self-loop, goal absorbs."""
    cells = _free_cells(board)
    index = {cell: i for i, cell in enumerate(cells)}
    m = len(cells)
    P = np.zeros((m, m))
    for cell, i in index.items():
        if cell == board.goal:
            P[i, i] = 1.0
            continue
        r, c = cell
        for p, (dr, dc) in zip(probs, _MOVES):
            j = index.get((r + dr, c + dc), i)
            P[i, j] += p
    init = np.zeros(m)
    init[index[board.start]] = 1.0
    return ChainModel(cells, P, init, index[board.goal])


def expected_truncated_steps(board, probs, cap=None):
    """E[min(T, cap)] for the absorbing walk, via sum_{t<cap} P(T > t)."""
    cap = 4 * board.size**2 if cap is None else int(cap)
    model = chain_model(board, np.asarray(probs, dtype=float))
    v = model.initial.copy()
    total = 0.0
    for _ in range(cap):
        total += 1.0 - v[model.goal_state]
        v = v @ model.transition
    return total


def truncated_steps_variance(board, probs, cap=None):
    """Var[min(T, cap)] using E[X^2] = sum_{t<cap} (2t + 1) P(T > t)."""
    cap = 4 * board.size**2 if cap is None else int(cap)
    model = chain_model(board, np.asarray(probs, dtype=float))
    v = model.initial.copy()
    m1 = m2 = 0.0
    for t in range(cap):
        s = 1.0 - v[model.goal_state]
        m1 += s
        m2 += (2 * t + 1) * s
        v = v @ model.transition
    return m2 - m1 * m1


def _bfs(board, source):
    n = board.size
    dist = np.full((n, n), -1, dtype=np.int64)
    dist[source] = 0
    q = deque([source])
    while q:
        cell = q.popleft()
        for nb in _neighbours(board, cell):
            if dist[nb] < 0:
                dist[nb] = dist[cell] + 1
                q.append(nb)
    return dist


def exact_distance_field(board, goal=None):
    """Shortest-path distances to ``goal`` (default the board's goal); -1 if unreachable."""
    goal = board.goal if goal is None else tuple(goal)
    return _bfs(board, goal)


def dijkstra_expansions_reference(board):
    """Non-goal expansions of uniform-cost search with ties broken by row-major index.

    With unit edges every node at depth < d(goal) is expanded, and at depth d(goal)
    exactly those queued ahead of the goal, i.e. with a smaller row-major index.
    """
    dist = _bfs(board, board.start).ravel()
    d_goal = dist[board.index(board.goal)]
    if d_goal < 0:
        raise ValueError("goal not reachable from start")
    idx = np.arange(dist.size)
    shallower = (dist >= 0) & (dist < d_goal)
    level_ahead = (dist == d_goal) & (idx < board.index(board.goal))
    return int(shallower.sum() + level_ahead.sum())


def maze_validate(board):
    """None if the free cells form a tree (connected, edges = nodes - 1), else a message."""
    cells = _free_cells(board)
    if not cells:
        return "disconnected: no free cells"
    dist = _bfs(board, cells[0])
    unreached = sum(1 for cell in cells if dist[cell] < 0)
    if unreached:
        return f"disconnected: {unreached} free cells unreachable"
    edges = sum(1 for cell in cells for _ in _neighbours(board, cell)) // 2
    if edges != len(cells) - 1:
        return f"edge count {edges} != free cells - 1 ({len(cells) - 1})"
    return None


def count_simple_paths(board, a, b, limit=2):
    """Number of simple paths from ``a`` to ``b``, counting stops at ``limit``."""
    count = 0
    on_path = {a}
    stack = [(a, iter(list(_neighbours(board, a))))]
    while stack and count < limit:
        cell, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            stack.pop()
            on_path.discard(cell)
            continue
        if nxt in on_path:
            continue
        if nxt == b:
            count += 1
            continue
        on_path.add(nxt)
        stack.append((nxt, iter(list(_neighbours(board, nxt)))))
    return count


# -- self-verification suite ----------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    seconds: float
    detail: str = ""


def _timed(name, fn):
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as e:  # a crashing check is a failed check
        ok, detail = False, f"{type(e).__name__}: {e}"
    return CheckResult(name, bool(ok), time.perf_counter() - t0, detail)


def run_oracle_suite(size=5, seeds=100, mc_pairs=5, mc_runs=20000, seed=0, inject_tie_break_bug=False):
    """Run every oracle cross-check; returns a list of :class:`CheckResult`."""
    from .grid2d import (
        astar_expansions,
        generate_maze_instance,
        generate_randomwalk_instance,
        walk_steps,
    )
    from .domain import stream_rng

    tie = -1 if inject_tie_break_bug else 1
    mazes = [generate_maze_instance(size, stream_rng(seed, "oracle-maze", i)) for i in range(seeds)]

    def maze_trees():
        bad = [i for i, m in enumerate(mazes) if maze_validate(m) is not None]
        free_ok = all(m.n_empty == 2 * ((size + 1) // 2) ** 2 - 1 for m in mazes)
        return not bad and free_ok, f"{len(mazes)} mazes, {len(bad)} invalid"

    def astar_vs_dijkstra():
        bad = [
            i
            for i, m in enumerate(mazes)
            if astar_expansions(m, np.zeros(size * size), tie_break=tie).expansions
            != dijkstra_expansions_reference(m)
        ]
        return not bad, f"{len(mazes) - len(bad)}/{len(mazes)} match"

    def perfect_heuristic():
        bad = []
        for i, m in enumerate(mazes):
            d = exact_distance_field(m)
            h = np.where(d >= 0, d, 0).ravel()
            if astar_expansions(m, h, tie_break=tie).expansions != d[m.start]:
                bad.append(i)
        return not bad, f"{len(mazes) - len(bad)}/{len(mazes)} expand only the path"

    def walk_vs_chain():
        worst = 0.0
        for i in range(mc_pairs):
            rng = stream_rng(seed, "oracle-walk", i)
            board = generate_randomwalk_instance(size, rng)
            probs = rng.dirichlet(np.ones(4))
            steps = walk_steps(board, probs, mc_runs, rng)
            se = steps.std(ddof=1) / np.sqrt(mc_runs)
            z = abs(steps.mean() - expected_truncated_steps(board, probs)) / max(se, 1e-12)
            worst = max(worst, z)
        return worst <= 3.0, f"max |z| = {worst:.2f} over {mc_pairs} pairs, N={mc_runs}"

    return [
        _timed("maze-tree", maze_trees),
        _timed("astar-vs-dijkstra", astar_vs_dijkstra),
        _timed("perfect-heuristic", perfect_heuristic),
        _timed("walk-vs-chain", walk_vs_chain),
    ]
