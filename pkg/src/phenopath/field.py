"""Grid fields: layout parsing, datasets, synthetic ground truth and noisy sensing.

Grid text uses one line per row: ``P`` is a plot, ``.`` a free cell and ``#``
an obstacle. Plots sit in vertical arrays separated by free corridors, so no
plot may have another plot as its East or West neighbour.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError
from .fusion import Kind, Measurement
from .gp import FeatureVector, KernelParams, NoiseModel, jittered_cholesky, matern_matrix

FREE, OBSTACLE, PLOT = ".", "#", "P"
DATASET_COLUMNS = ("row", "col", "vegetation_index", "leaf_angle_density", "stalk_height")
DEFAULT_BAND = (20.0, 85.0)
DEFAULT_PLOT_ROWS, DEFAULT_PLOT_COLS = 25, 15

Cell = tuple[int, int]


class FieldGrid:
    """Immutable field layout plus the per-plot leaf features.

    Plot ids are assigned row-major over the plot cells.
    """

    def __init__(self, rows, vegetation_index=None, leaf_angle_density=None):
        rows = tuple(rows)
        _validate_layout(rows)
        self._rows = rows
        self.height = len(rows)
        self.width = len(rows[0])
        cells = [(r, c) for r, line in enumerate(rows) for c, ch in enumerate(line) if ch == PLOT]
        self.plot_cells: tuple[Cell, ...] = tuple(cells)
        self._plot_at = {cell: pid for pid, cell in enumerate(cells)}
        n = len(cells)
        self.vegetation_index = _feature_array(vegetation_index, n, "vegetation_index")
        self.leaf_angle_density = _feature_array(leaf_angle_density, n, "leaf_angle_density")
        self._waypoints = tuple(self._find_waypoint(cell) for cell in cells)
        plot_rows = sorted({r for r, _ in cells})
        plot_cols = sorted({c for _, c in cells})
        self._array_row = {r: i for i, r in enumerate(plot_rows)}
        self._array_col = {c: i for i, c in enumerate(plot_cols)}

    def __repr__(self):
        return f"FieldGrid({self.height}x{self.width}, {self.n_plots} plots)"

    def __eq__(self, other):
        return (
            isinstance(other, FieldGrid)
            and self._rows == other._rows
            and np.array_equal(self.vegetation_index, other.vegetation_index)
            and np.array_equal(self.leaf_angle_density, other.leaf_angle_density)
        )

    @property
    def rows(self) -> tuple[str, ...]:
        return self._rows

    @property
    def n_plots(self) -> int:
        return len(self.plot_cells)

    def cell(self, row: int, col: int) -> str:
        return self._rows[row][col]

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and self._rows[cell[0]][cell[1]] == FREE

    def plot_at(self, cell: Cell):
        return self._plot_at.get(tuple(cell))

    def check_plot(self, plot_id: int) -> None:
        if not (isinstance(plot_id, (int, np.integer)) and 0 <= plot_id < self.n_plots):
            raise InvalidInputError(f"unknown plot {plot_id}")

    def _find_waypoint(self, cell: Cell) -> Cell:
        r, c = cell
        for candidate in ((r, c - 1), (r, c + 1)):
            if self.is_free(candidate):
                return candidate
        raise AssertionError("validated layouts give every plot a free side")

    def waypoint_cell(self, plot_id: int) -> Cell:
        """Corridor cell a plot is measured from: West if free, else East."""
        self.check_plot(plot_id)
        return self._waypoints[plot_id]

    def plots_seen_from(self, cell: Cell, sides: str = "single") -> tuple[int, ...]:
        """Plots measured by a camera at ``cell``.

        ``"single"`` sees only plots whose waypoint is this cell; ``"both"``
        sees every plot horizontally adjacent to it.
        """
        r, c = cell
        seen = []
        for nb in ((r, c - 1), (r, c + 1)):
            pid = self._plot_at.get(nb)
            if pid is None:
                continue
            if sides == "both" or self._waypoints[pid] == (r, c):
                seen.append(pid)
        if sides not in ("single", "both"):
            raise InvalidInputError(f"unknown side rule {sides!r}")
        return tuple(seen)

    def array_index(self, plot_id: int) -> tuple[int, int]:
        """(row, col) of a plot within the plot array, ignoring corridors."""
        r, c = self.plot_cells[plot_id]
        return self._array_row[r], self._array_col[c]

    def column_plots(self) -> list[list[int]]:
        """Plot ids grouped by grid column, West to East, each North to South."""
        cols: dict[int, list[int]] = {}
        for pid, (_, c) in enumerate(self.plot_cells):
            cols.setdefault(c, []).append(pid)
        return [cols[c] for c in sorted(cols)]

    def raw_features(self) -> np.ndarray:
        """``(n_plots, 4)`` array of row, col, vegetation index, leaf-angle density."""
        loc = np.asarray(self.plot_cells, dtype=float).reshape(-1, 2)
        return np.column_stack([loc, self.vegetation_index, self.leaf_angle_density])

    def feature_vector(self, plot_id: int) -> FeatureVector:
        self.check_plot(plot_id)
        r, c = self.plot_cells[plot_id]
        return FeatureVector((float(r), float(c)), float(self.vegetation_index[plot_id]),
                             float(self.leaf_angle_density[plot_id]))

    def with_features(self, vegetation_index, leaf_angle_density) -> "FieldGrid":
        return FieldGrid(self._rows, vegetation_index, leaf_angle_density)

    def serialize(self) -> str:
        return "\n".join(self._rows) + "\n"


def _feature_array(values, n, name):
    if values is None:
        arr = np.zeros(n)
    else:
        arr = np.array(values, dtype=float).reshape(-1)
    if len(arr) != n:
        raise InvalidInputError(f"{name}: expected {n} values, got {len(arr)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def _validate_layout(rows):
    if not rows:
        raise ParseError("empty grid")
    width = len(rows[0])
    if width == 0:
        raise ParseError("empty grid row", line=1)
    for i, line in enumerate(rows, start=1):
        if len(line) != width:
            raise ParseError(f"ragged row: expected {width} cells, found {len(line)}", line=i)
        for j, ch in enumerate(line, start=1):
            if ch not in (FREE, OBSTACLE, PLOT):
                raise ParseError(f"unknown cell character {ch!r}", line=i, column=j)
    for i, line in enumerate(rows):
        for j, ch in enumerate(line):
            if ch != PLOT:
                continue
            if j + 1 < width and line[j + 1] == PLOT:
                raise ParseError("plot cells must not touch horizontally", line=i + 1, column=j + 2)
            west_free = j > 0 and line[j - 1] == FREE
            east_free = j + 1 < width and line[j + 1] == FREE
            if not (west_free or east_free):
                raise ParseError("plot has no adjacent corridor to be measured from", line=i + 1, column=j + 1)
    free = [(i, j) for i, line in enumerate(rows) for j, ch in enumerate(line) if ch == FREE]
    if not free:
        raise ParseError("grid has no free cells")
    seen = {free[0]}
    queue = deque([free[0]])
    while queue:
        r, c = queue.popleft()
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < len(rows) and 0 <= nc < width and rows[nr][nc] == FREE and (nr, nc) not in seen:
                seen.add((nr, nc))
                queue.append((nr, nc))
    if len(seen) != len(free):
        r, c = next(cell for cell in free if cell not in seen)
        raise ParseError("free cells are not all connected", line=r + 1, column=c + 1)


def load_grid(text: str) -> FieldGrid:
    """Parse the ASCII layout format (trailing whitespace and blank lines ignored)."""
    lines = [line.rstrip() for line in text.replace("\r\n", "\n").split("\n")]
    while lines and not lines[-1]:
        lines.pop()
    return FieldGrid(lines)


def layout_text(plot_rows: int, plot_cols: int) -> str:
    """Plot columns separated by single corridors, with free rows top and bottom."""
    if plot_rows < 1 or plot_cols < 1:
        raise InvalidInputError("layout needs at least one plot row and column")
    width = 2 * plot_cols + 1
    border = FREE * width
    body = FREE + (PLOT + FREE) * plot_cols
    return "\n".join([border] + [body] * plot_rows + [border]) + "\n"


def default_layout() -> FieldGrid:
    """The bundled 25 x 15 plot layout."""
    text = resources.files("phenopath").joinpath("data/default_25x15.txt").read_text(encoding="utf-8")
    return load_grid(text)


@dataclass(frozen=True, eq=False)
class GroundTruthField:
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("ground truth contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, plot_id):
        return float(self.values[plot_id])

    def check_band(self, low: float, high: float) -> None:
        if self.values.min() < low or self.values.max() > high:
            raise InvalidInputError(f"ground truth outside [{low}, {high}]")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def load_dataset(source) -> tuple[FieldGrid, GroundTruthField]:
    """Read a per-plot CSV table and lay it out as a corridor grid.

    ``source`` is a path, or CSV text (anything containing a newline).
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    reader = csv.reader(io.StringIO(text.replace("\r\n", "\n")))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("dataset is empty", line=1) from None
    missing = [c for c in DATASET_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"dataset header lacks columns {missing}", line=1)
    idx = {c: header.index(c) for c in DATASET_COLUMNS}
    records = {}
    for lineno, fields in enumerate(reader, start=2):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) < len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(fields)}", line=lineno)
        try:
            r = int(fields[idx["row"]])
            c = int(fields[idx["col"]])
            vals = tuple(float(fields[idx[k]]) for k in DATASET_COLUMNS[2:])
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", line=lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", line=lineno)
        if (r, c) in records:
            raise ParseError(f"duplicate plot (row={r}, col={c})", line=lineno)
        records[(r, c)] = vals
    if not records:
        raise ParseError("dataset has no rows", line=2)
    rmin = min(r for r, _ in records)
    cmin = min(c for _, c in records)
    n_rows = max(r for r, _ in records) - rmin + 1
    n_cols = max(c for _, c in records) - cmin + 1
    for r in range(rmin, rmin + n_rows):
        for c in range(cmin, cmin + n_cols):
            if (r, c) not in records:
                raise ParseError(f"missing plot (row={r}, col={c})")
    rows = layout_text(n_rows, n_cols).splitlines()
    order = sorted(records)  # row-major, matching plot id assignment
    vi = [records[k][0] for k in order]
    lad = [records[k][1] for k in order]
    height = [records[k][2] for k in order]
    return FieldGrid(rows, vi, lad), GroundTruthField(height)


def dataset_csv(grid: FieldGrid, truth: GroundTruthField) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(DATASET_COLUMNS)
    for pid in range(grid.n_plots):
        r, c = grid.array_index(pid)
        writer.writerow([r, c, repr(float(grid.vegetation_index[pid])),
                         repr(float(grid.leaf_angle_density[pid])), repr(truth[pid])])
    return out.getvalue()


# ---------------------------------------------------------------------------
# feature scaling and synthetic fields
# ---------------------------------------------------------------------------


class FeatureScaler:
    """Maps raw plot features to model inputs.

    Locations are divided by the grid extent; leaf features are standardized
    with statistics over the whole feature table.
    """

    def __init__(self, grid: FieldGrid):
        self.extent = np.array([max(grid.height - 1, 1), max(grid.width - 1, 1)], dtype=float)
        raw = grid.raw_features()
        self.mean = raw[:, 2:].mean(axis=0)
        std = raw[:, 2:].std(axis=0)
        self.std = np.where(std > 0, std, 1.0)

    def transform(self, raw) -> np.ndarray:
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        return np.column_stack([raw[:, :2] / self.extent, (raw[:, 2:] - self.mean) / self.std])


def model_features(grid: FieldGrid) -> np.ndarray:
    return FeatureScaler(grid).transform(grid.raw_features())


def default_synthetic_params() -> KernelParams:
    return KernelParams(1.0, (0.15, 0.15, 1.0, 1.0))


def _prior_sample(X, params, rng):
    L, _ = jittered_cholesky(matern_matrix(X, X, params))
    return L @ rng.standard_normal(len(X))


def generate_synthetic(width: int = DEFAULT_PLOT_COLS, height: int = DEFAULT_PLOT_ROWS, seed: int = 0,
                       gp_params: KernelParams | None = None,
                       band: tuple[float, float] = DEFAULT_BAND) -> tuple[FieldGrid, GroundTruthField]:
    """Synthetic field of ``height`` x ``width`` plots with GP-prior ground truth.

    Leaf features are smooth spatial fields with plot-level scatter; targets
    are one GP prior draw over the scaled 4-D features, rescaled affinely so
    the minimum and maximum hit the band edges.
    """
    if width < 2 or height < 2:
        raise InvalidInputError("synthetic fields need at least 2 x 2 plots")
    low, high = map(float, band)
    if not low < high:
        raise InvalidInputError(f"degenerate band [{low}, {high}]")
    params = gp_params or default_synthetic_params()
    rng = np.random.default_rng(seed)
    rows = layout_text(height, width).splitlines()
    layout = FieldGrid(rows)
    loc = np.asarray(layout.plot_cells, dtype=float) / np.array([layout.height - 1, layout.width - 1])
    smooth = KernelParams(1.0, (0.3, 0.3))
    vi = np.clip(0.5 + 0.1 * _prior_sample(loc, smooth, rng) + 0.04 * rng.standard_normal(len(loc)), 0.0, 1.0)
    lad = 1.0 + 0.25 * _prior_sample(loc, smooth, rng) + 0.1 * rng.standard_normal(len(loc))
    grid = layout.with_features(vi, lad)
    f = _prior_sample(model_features(grid), params, rng)
    span = f.max() - f.min()
    y = low + (f - f.min()) * (high - low) / span
    y[np.argmin(f)] = low
    y[np.argmax(f)] = high
    return grid, GroundTruthField(y)


# ---------------------------------------------------------------------------
# sensing
# ---------------------------------------------------------------------------


class SensorSim:
    """Seeded Gaussian sensor around the ground truth.

    Owns its generator; identical seeds and call sequences give bitwise
    identical readings.
    """

    def __init__(self, truth: GroundTruthField, static_std: float, mobile_std: float, seed=0):
        if static_std < 0 or mobile_std < 0:
            raise InvalidInputError("sensor standard deviations must be non-negative")
        self.truth = truth
        self.static_std = float(static_std)
        self.mobile_std = float(mobile_std)
        self.rng = np.random.default_rng(seed)

    @classmethod
    def from_noise(cls, truth: GroundTruthField, noise: NoiseModel, seed=0) -> "SensorSim":
        return cls(truth, noise.static_std, noise.mobile_std, seed)

    def _read(self, plot_id, std, kind):
        if not (isinstance(plot_id, (int, np.integer)) and 0 <= plot_id < len(self.truth)):
            raise InvalidInputError(f"unknown plot {plot_id}")
        value = float(self.rng.normal(self.truth[plot_id], std))
        return Measurement(int(plot_id), value, kind)

    def static(self, plot_id: int) -> Measurement:
        return self._read(plot_id, self.static_std, Kind.STATIC)

    def mobile(self, plot_id: int) -> Measurement:
        return self._read(plot_id, self.mobile_std, Kind.MOBILE)


def sample_static(sim: SensorSim, plot_id: int) -> Measurement:
    return sim.static(plot_id)


def sample_mobile(sim: SensorSim, plot_id: int) -> Measurement:
    return sim.mobile(plot_id)


def test_split(grid, n_test: int = 40, seed=0) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Uniformly random disjoint (train, test) plot ids, each sorted."""
    n = grid.n_plots if isinstance(grid, FieldGrid) else int(grid)
    if n_test < 0 or n_test >= n:
        raise InvalidInputError(f"n_test={n_test} must be in [0, {n})")
    perm = np.random.default_rng(seed).permutation(n)
    test = tuple(sorted(int(i) for i in perm[:n_test]))
    train = tuple(sorted(int(i) for i in perm[n_test:]))
    return train, test


test_split.__test__ = False  # keep pytest from collecting it
