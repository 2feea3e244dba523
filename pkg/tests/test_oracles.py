import numpy as np
import pytest

from planopt.board import GridBoard
from planopt.grid2d import generate_maze_instance, walk_steps
from planopt.oracles import (
    chain_model,
    count_simple_paths,
    dijkstra_expansions_reference,
    exact_distance_field,
    expected_truncated_steps,
    maze_validate,
    run_oracle_suite,
)


def corridor(length, row=2):
    occ = np.ones((5, 5), bool)
    occ[row, :length] = False
    return occ


def test_chain_rows_sum_to_one():
    b = generate_maze_instance(5, np.random.default_rng(0))
    m = chain_model(b, np.array([0.1, 0.2, 0.3, 0.4]))
    np.testing.assert_allclose(m.transition.sum(axis=1), 1.0)
    g = m.goal_state
    assert m.transition[g, g] == 1.0


def test_truncated_steps_deterministic_walk():
    b = GridBoard(np.zeros((5, 5), bool), (2, 2), (2, 3))
    assert expected_truncated_steps(b, [0, 0, 0, 1]) == 1.0


def test_two_cell_corridor_closed_form():
    b = GridBoard(corridor(2), (2, 0), (2, 1))
    # each step succeeds w.p. 1/4: E[min(Geom(1/4), 100)] = 4 (1 - 0.75^100)
    exact = 4.0 * (1 - 0.75**100)
    assert expected_truncated_steps(b, np.full(4, 0.25)) == pytest.approx(exact, rel=1e-12)
    steps = walk_steps(b, np.full(4, 0.25), 1_000_000, np.random.default_rng(0))
    se = steps.std() / np.sqrt(steps.size)
    assert abs(steps.mean() - exact) <= 3 * se


def test_truncated_steps_bounds():
    rng = np.random.default_rng(1)
    for _ in range(20):
        b = generate_maze_instance(5, rng)
        v = expected_truncated_steps(b, rng.dirichlet(np.ones(4)))
        assert 1.0 <= v <= 100.0


def test_dijkstra_reference_small_cases():
    b = GridBoard(np.zeros((5, 5), bool), (0, 0), (0, 1))
    # (1, 0) also sits at depth 1 but comes after the goal in row-major order
    assert dijkstra_expansions_reference(b) == 1
    for length in (2, 3, 5):
        b = GridBoard(corridor(length), (2, 0), (2, length - 1))
        assert dijkstra_expansions_reference(b) == length - 1


def test_maze_validate_detects_cycle_and_disconnection():
    rng = np.random.default_rng(0)
    m = generate_maze_instance(11, rng)
    assert maze_validate(m) is None
    occ = m.occupancy.copy()
    walls = np.argwhere(occ[1:-1, 1:-1]) + 1
    # open an interior wall cell between two lattice cells: adds a cycle
    for r, c in walls:
        if (r % 2) != (c % 2):
            occ[r, c] = False
            break
    assert "edge count" in maze_validate(GridBoard(occ, m.start, m.goal))
    occ = m.occupancy.copy()
    # block a carved passage cell that has two free neighbours
    for r, c in np.argwhere(~occ):
        if (r % 2) != (c % 2):
            occ[r, c] = True
            break
    assert "disconnected" in maze_validate(GridBoard(occ, m.start, m.goal))


@pytest.mark.parametrize("size", [5, 11])
def test_perfect_maze_unique_paths_all_pairs(size):
    m = generate_maze_instance(size, np.random.default_rng(size))
    cells = [tuple(c) for c in np.argwhere(~m.occupancy)][::3 if size == 11 else 1]
    for i, a in enumerate(cells):
        for b in cells[i + 1 :]:
            assert count_simple_paths(m, a, b) == 1


def test_simple_paths_detect_cycle():
    b = GridBoard(np.zeros((5, 5), bool), (0, 0), (1, 1))
    assert count_simple_paths(b, (0, 0), (1, 1)) == 2


def test_distance_field():
    rng = np.random.default_rng(3)
    for _ in range(30):
        m = generate_maze_instance(5, rng)
        d = exact_distance_field(m)
        assert d[m.goal] == 0
        assert np.all(d[m.occupancy] == -1)
        assert d.max() <= m.n_empty - 1


def test_distance_matches_path_enumeration():
    # in a tree, the BFS distance equals the length of the unique path
    m = generate_maze_instance(5, np.random.default_rng(4))
    free = [tuple(c) for c in np.argwhere(~m.occupancy)]

    def path_len(a, b):
        stack = [(a, {a}, 0)]
        while stack:
            cell, seen, k = stack.pop()
            if cell == b:
                return k
            r, c = cell
            for nb in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if m.is_free(nb) and nb not in seen:
                    stack.append((nb, seen | {nb}, k + 1))

    d = exact_distance_field(m)
    for cell in free:
        assert d[cell] == path_len(cell, m.goal)


def test_oracle_suite_passes_and_negative_control_fails():
    ok = run_oracle_suite(size=5, seeds=100, mc_pairs=2, mc_runs=5000)
    assert all(r.passed for r in ok), ok
    bad = {r.name: r for r in run_oracle_suite(size=5, seeds=100, mc_pairs=1, mc_runs=1000, inject_tie_break_bug=True)}
    assert not bad["astar-vs-dijkstra"].passed
