import numpy as np
import pytest

from bayesaod import BlockGrid, ConfigurationError, build_adjacency, build_patch_layout
from bayesaod.lattice import DEFAULT_PATCH_SIZE
from bayesaod.oracles import grid_edges


def test_single_pixel_has_no_neighbors():
    adj = build_adjacency(BlockGrid(1, 1))
    assert adj.n_neighbors.tolist() == [0]
    assert adj.n_edges == 0


def test_two_by_two_every_pixel_has_two_neighbors():
    adj = build_adjacency(BlockGrid(2, 2))
    assert adj.n_neighbors.tolist() == [2, 2, 2, 2]


def test_cloudy_center_leaves_edge_midpoints_with_corner_neighbors():
    mask = np.ones((3, 3), bool)
    mask[1, 1] = False
    grid = BlockGrid(3, 3, clear_mask=mask)
    adj = build_adjacency(grid)
    idx = grid.clear_index.reshape(3, 3)
    for r, c in ((0, 1), (1, 0), (1, 2), (2, 1)):
        p = idx[r, c]
        assert adj.n_neighbors[p] == 2
        nbr_rc = {divmod(int(np.flatnonzero(grid.clear_index == q)[0]), 3) for q in adj.neighbors(p)}
        assert all(rc in {(0, 0), (0, 2), (2, 0), (2, 2)} for rc in nbr_rc)


def test_adjacency_is_symmetric_and_matches_edge_oracle():
    grid = BlockGrid(5, 7)
    adj = build_adjacency(grid)
    assert sorted(map(tuple, adj.edges.tolist())) == sorted(grid_edges(5, 7))
    for p in range(adj.n_pixels):
        for q in adj.neighbors(p):
            assert p in adj.neighbors(q)
            assert p != q


def test_edge_sum_sq_counts_each_edge_once():
    adj = build_adjacency(BlockGrid(1, 2))
    assert adj.edge_sum_sq([0.0, 1.0]) == 1.0


def test_laplacian_rows_sum_to_zero():
    lap = build_adjacency(BlockGrid(4, 6)).laplacian()
    assert np.allclose(np.asarray(lap.sum(axis=1)).ravel(), 0.0)


def test_grid_rejects_bad_mask():
    with pytest.raises(ConfigurationError):
        BlockGrid(2, 2, clear_mask=np.ones(3, bool))


def test_single_patch_equals_block():
    layout = build_patch_layout(BlockGrid(20, 20), 1, 1)
    (p,) = layout.patches
    assert (p.row0, p.row1, p.col0, p.col1) == (0, 20, 0, 20)
    assert np.all(np.isinf(layout.edge_distance()))


def test_two_column_patches_offsets():
    layout = build_patch_layout(BlockGrid(32, 36), 1, 2, patch_height=32, patch_width=20)
    assert layout.col_offsets == (0, 16)
    p0, p1 = layout.patches
    assert p0.col1 - p1.col0 == 4


def test_default_block_layout_uses_twenty_pixel_patches():
    layout = build_patch_layout(BlockGrid(32, 128), 2, 8)
    assert DEFAULT_PATCH_SIZE == 20
    assert all(p.shape == (20, 20) for p in layout.patches)
    assert layout.row_offsets == (0, 12)
    assert layout.col_offsets[-1] + 20 == 128
    offs = layout.col_offsets
    assert min(20 - (b - a) for a, b in zip(offs, offs[1:])) >= 4
    assert layout.owner_count.min() >= 1


def test_layout_errors():
    with pytest.raises(ConfigurationError):
        build_patch_layout(BlockGrid(32, 128), 1, 2, patch_width=40)  # single row patch must span
    with pytest.raises(ConfigurationError):
        build_patch_layout(BlockGrid(10, 10), 1, 2, patch_height=10, patch_width=6)  # overlap 2 < 4


def test_owners_and_edge_distance():
    layout = build_patch_layout(BlockGrid(32, 36), 1, 2, patch_height=32, patch_width=20)
    assert layout.owners(0, 17) == [0, 1]
    assert layout.owners(0, 0) == [0]
    d = layout.edge_distance()
    assert d[0, 15] == 0 and d[0, 16] == 0 and d[0, 19] == 0 and d[0, 20] == 0
    assert d[0, 10] == 5
