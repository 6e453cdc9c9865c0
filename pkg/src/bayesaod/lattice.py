"""Pixel lattice, clear-pixel adjacency and overlapping patch layouts.

Clear pixels are addressed by their position in the row-major list of clear
cells.  Cloudy cells are dropped from the lattice entirely: they carry no
radiance term and no prior edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError

__all__ = [
    "DEFAULT_PATCH_SIZE",
    "BlockGrid",
    "Adjacency",
    "Patch",
    "PatchLayout",
    "build_adjacency",
    "build_patch_layout",
]

DEFAULT_PATCH_SIZE = 20


@dataclass(frozen=True, eq=False)
class BlockGrid:
    """A ``rows x cols`` lattice with a clear/cloud mask (True = retrievable)."""

    rows: int = 32
    cols: int = 128
    resolution_km: float = 4.4
    clear_mask: np.ndarray | None = None

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ConfigurationError(f"grid must have rows, cols >= 1, got {self.rows}x{self.cols}")
        if not self.resolution_km > 0:
            raise ConfigurationError("resolution_km must be positive")
        if self.clear_mask is None:
            mask = np.ones((self.rows, self.cols), dtype=bool)
        else:
            mask = np.asarray(self.clear_mask, dtype=bool)
            if mask.size != self.rows * self.cols:
                raise ConfigurationError(
                    f"clear_mask has {mask.size} cells, expected {self.rows * self.cols}"
                )
            mask = mask.reshape(self.rows, self.cols).copy()
        mask.setflags(write=False)
        object.__setattr__(self, "rows", int(self.rows))
        object.__setattr__(self, "cols", int(self.cols))
        object.__setattr__(self, "clear_mask", mask)
        index = np.full(self.rows * self.cols, -1, dtype=np.int64)
        flat = np.flatnonzero(mask.ravel())
        index[flat] = np.arange(flat.size)
        index.setflags(write=False)
        flat.setflags(write=False)
        object.__setattr__(self, "_clear_index", index)
        object.__setattr__(self, "_clear_cells", flat)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def n_clear(self) -> int:
        return int(self._clear_cells.size)

    @property
    def clear_cells(self) -> np.ndarray:
        """Row-major flat cell index of every clear pixel."""
        return self._clear_cells

    @property
    def clear_index(self) -> np.ndarray:
        """Flat cell index -> clear-pixel index, or -1 for cloudy cells."""
        return self._clear_index

    def pixel_rc(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column of every clear pixel."""
        return np.divmod(self._clear_cells, self.cols)

    def column_major_order(self) -> np.ndarray:
        """Clear-pixel indices swept column by column, top to bottom."""
        r, c = self.pixel_rc()
        return np.lexsort((r, c)).astype(np.int64)

    def to_grid(self, values, fill=np.nan) -> np.ndarray:
        """Scatter per-clear-pixel values back onto the ``rows x cols`` grid."""
        values = np.asarray(values)
        out = np.full((self.n_cells,) + values.shape[1:], fill, dtype=np.result_type(values, type(fill)))
        out[self._clear_cells] = values
        return out.reshape((self.rows, self.cols) + values.shape[1:])

    def from_grid(self, grid) -> np.ndarray:
        """Gather clear-pixel values from a ``rows x cols [x k]`` array."""
        grid = np.asarray(grid)
        return grid.reshape((self.n_cells,) + grid.shape[2:])[self._clear_cells]

    def subgrid(self, row0: int, row1: int, col0: int, col1: int) -> "BlockGrid":
        return BlockGrid(row1 - row0, col1 - col0, self.resolution_km,
                         self.clear_mask[row0:row1, col0:col1])

    def __eq__(self, other):
        if not isinstance(other, BlockGrid):
            return NotImplemented
        return (self.shape == other.shape and self.resolution_km == other.resolution_km
                and np.array_equal(self.clear_mask, other.clear_mask))

    __hash__ = None


@dataclass(frozen=True)
class Adjacency:
    """First-order (rook) adjacency among clear pixels, in CSR form.

    ``indices[indptr[p]:indptr[p + 1]]`` are the neighbours of clear pixel
    ``p``; ``edges`` lists every unordered neighbour pair once.
    """

    indptr: np.ndarray
    indices: np.ndarray
    edges: np.ndarray

    @property
    def n_pixels(self) -> int:
        return self.indptr.size - 1

    @property
    def n_neighbors(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def neighbors(self, p: int) -> np.ndarray:
        return self.indices[self.indptr[p]:self.indptr[p + 1]]

    def edge_sum_sq(self, tau) -> float:
        """Sum of squared differences over unordered neighbour pairs."""
        tau = np.asarray(tau, dtype=float)
        d = tau[self.edges[:, 0]] - tau[self.edges[:, 1]]
        return float(d @ d)

    def n_components(self) -> int:
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import connected_components

        n = self.n_pixels
        if n == 0:
            return 0
        graph = csr_matrix((np.ones(self.indices.size), self.indices, self.indptr), shape=(n, n))
        return int(connected_components(graph, directed=False)[0])

    def laplacian(self):
        """Sparse graph Laplacian ``D - A`` (the GMRF structure matrix)."""
        from scipy.sparse import csr_matrix, diags

        n = self.n_pixels
        a = csr_matrix((np.ones(self.indices.size), self.indices, self.indptr), shape=(n, n))
        return (diags(self.n_neighbors.astype(float)) - a).tocsr()


def build_adjacency(grid: BlockGrid) -> Adjacency:
    """Rook adjacency restricted to clear pixels of ``grid``."""
    mask = grid.clear_mask
    index = grid.clear_index.reshape(grid.shape)
    pairs = []
    # right and down neighbours give each unordered edge exactly once
    both = mask[:, :-1] & mask[:, 1:]
    pairs.append(np.column_stack([index[:, :-1][both], index[:, 1:][both]]))
    both = mask[:-1, :] & mask[1:, :]
    pairs.append(np.column_stack([index[:-1, :][both], index[1:, :][both]]))
    edges = np.concatenate(pairs).astype(np.int64).reshape(-1, 2)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]

    n = grid.n_clear
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    for arr in (indptr, dst, edges):
        arr.setflags(write=False)
    return Adjacency(indptr=indptr, indices=dst, edges=edges)


@dataclass(frozen=True)
class Patch:
    row0: int
    row1: int
    col0: int
    col1: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.row1 - self.row0, self.col1 - self.col0)

    def contains(self, r, c):
        return (self.row0 <= r) & (r < self.row1) & (self.col0 <= c) & (c < self.col1)


@dataclass(frozen=True)
class PatchLayout:
    """Overlapping rectangular patches covering a block."""

    grid_shape: tuple[int, int]
    patches: tuple[Patch, ...]
    row_offsets: tuple[int, ...]
    col_offsets: tuple[int, ...]
    owner_count: np.ndarray = field(repr=False)

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    def owners(self, r: int, c: int) -> list[int]:
        """Indices of the patches containing cell ``(r, c)``."""
        return [k for k, p in enumerate(self.patches) if p.contains(r, c)]

    def edge_distance(self) -> np.ndarray:
        """Per-cell distance (in pixels) to the nearest interior patch edge.

        Patch edges lying on the block border are not counted; a block with a
        single patch has infinite distance everywhere.
        """
        rows, cols = self.grid_shape
        dist = np.full(self.grid_shape, np.inf)
        rr = np.arange(rows)[:, None]
        cc = np.arange(cols)[None, :]
        for p in self.patches:
            inside_r = (rr >= p.row0) & (rr < p.row1)
            inside_c = (cc >= p.col0) & (cc < p.col1)
            # an edge sits between cells edge-1 and edge; distance 0 on both sides
            for edge, interior in ((p.row0, p.row0 > 0), (p.row1, p.row1 < rows)):
                if interior:
                    d = np.minimum(np.abs(rr - edge), np.abs(rr - (edge - 1)))
                    dist = np.where(inside_c, np.minimum(dist, d), dist)
            for edge, interior in ((p.col0, p.col0 > 0), (p.col1, p.col1 < cols)):
                if interior:
                    d = np.minimum(np.abs(cc - edge), np.abs(cc - (edge - 1)))
                    dist = np.where(inside_r, np.minimum(dist, d), dist)
        return dist


def _offsets(n_cells: int, n_patches: int, size: int, min_overlap: int, axis: str) -> list[int]:
    if n_patches < 1:
        raise ConfigurationError(f"need at least one patch along {axis}")
    if size > n_cells:
        raise ConfigurationError(f"patch {axis} size {size} exceeds block size {n_cells}")
    if n_patches == 1:
        if size != n_cells:
            raise ConfigurationError(
                f"a single patch along {axis} must span the block ({size} != {n_cells})"
            )
        return [0]
    total = n_patches * size - n_cells
    gaps = n_patches - 1
    base, extra = divmod(total, gaps)
    if total < 0 or base < min_overlap:
        raise ConfigurationError(
            f"{n_patches} patches of {size} along {axis} cannot cover {n_cells} cells "
            f"with overlap >= {min_overlap}"
        )
    overlaps = [base + 1 if g < extra else base for g in range(gaps)]
    offsets = [0]
    for ov in overlaps:
        offsets.append(offsets[-1] + size - ov)
    return offsets


def build_patch_layout(grid: BlockGrid, patch_rows: int = 2, patch_cols: int = 8,
                       min_overlap: int = 4, patch_height: int | None = None,
                       patch_width: int | None = None) -> PatchLayout:
    """Tile ``grid`` with ``patch_rows x patch_cols`` overlapping patches.

    When a patch size is omitted it defaults to ``DEFAULT_PATCH_SIZE`` (20)
    pixels, enlarged if needed to meet ``min_overlap`` and clipped to the
    block; a single patch along an axis spans the block.  Residual overlap is
    spread as evenly as possible, with the extra pixel going to the leftmost
    (topmost) gaps.

    Raises
    ------
    ConfigurationError
        If the patches cannot cover the block with the required overlap.
    """
    def _default(n, k):
        if k == 1:
            return n
        smallest = -(-(n + (k - 1) * min_overlap) // k)
        return min(n, max(smallest, DEFAULT_PATCH_SIZE))

    height = patch_height if patch_height is not None else _default(grid.rows, patch_rows)
    width = patch_width if patch_width is not None else _default(grid.cols, patch_cols)
    r_off = _offsets(grid.rows, patch_rows, height, min_overlap, "rows")
    c_off = _offsets(grid.cols, patch_cols, width, min_overlap, "columns")
    patches = tuple(Patch(r, r + height, c, c + width) for r in r_off for c in c_off)
    count = np.zeros(grid.shape, dtype=np.int64)
    for p in patches:
        count[p.row0:p.row1, p.col0:p.col1] += 1
    count.setflags(write=False)
    return PatchLayout(grid.shape, patches, tuple(r_off), tuple(c_off), count)
