"""Slide-level data model: expression matrices, multi-resolution pairing,
gene selection, normalization, aggregation and WSI-level fold splitting.

Counts are kept raw on disk. Aggregation to spot and region level sums raw
bin counts; each level is then normalized independently.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidDataError

LEVELS = ("bin", "spot", "region")
DEFAULT_SCALE = 1e4
FLOAT_FMT = "%.9g"
MANIFEST = "manifest.json"
FORMAT_VERSION = 1


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ExpressionMatrix:
    """A ``[units x genes]`` matrix tagged with its spatial level."""

    values: np.ndarray
    level: str = "bin"
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise InvalidDataError(f"expression matrix must be 2-D, got shape {values.shape}")
        if self.level not in LEVELS:
            raise InvalidArgumentError(f"unknown level {self.level!r}")
        if values.size and not np.all(np.isfinite(values)):
            raise InvalidDataError("expression matrix contains NaN or Inf")
        if values.size and values.min() < 0:
            raise InvalidDataError("expression values must be non-negative")
        object.__setattr__(self, "values", _readonly(values))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def select(self, genes: Sequence[int]) -> "ExpressionMatrix":
        return ExpressionMatrix(self.values[:, list(genes)], self.level, self.normalized)


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[tuple, ...]

    def __post_init__(self):
        seen: set = set()
        for fold in self.folds:
            overlap = seen.intersection(fold)
            if overlap:
                raise InvalidDataError(f"slides {sorted(overlap)} appear in more than one fold")
            seen.update(fold)
        sizes = [len(f) for f in self.folds]
        if sizes and max(sizes) - min(sizes) > 1:
            raise InvalidDataError(f"unbalanced fold sizes {sizes}")

    def __len__(self) -> int:
        return len(self.folds)

    def train_test(self, i: int) -> tuple[list, list]:
        """Slide ids for training and testing when fold ``i`` is held out."""
        test = list(self.folds[i])
        train = [s for j, f in enumerate(self.folds) if j != i for s in f]
        return train, test


@dataclass(frozen=True)
class SlideDataset:
    """One whole-slide image worth of bins, spots, regions and their counts."""

    slide_id: str
    bin_coords: np.ndarray
    spot_coords: np.ndarray
    region_coords: np.ndarray
    raw_counts: ExpressionMatrix
    gene_names: tuple[str, ...]
    spot_membership: tuple[np.ndarray, ...]
    region_membership: tuple[np.ndarray, ...]
    features: Mapping[str, np.ndarray] = field(default_factory=dict)
    sampled_bins: np.ndarray | None = None
    sampled_spots: np.ndarray | None = None
    normalization_scale: float = DEFAULT_SCALE
    seeds: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("bin_coords", "spot_coords", "region_coords"):
            coords = np.asarray(getattr(self, name), dtype=np.float64)
            if coords.ndim != 2 or coords.shape[1] != 2 or len(coords) == 0:
                raise InvalidDataError(f"{name} must be a non-empty [n x 2] array, got {coords.shape}")
            if not np.all(np.isfinite(coords)):
                raise InvalidDataError(f"{name} contains non-finite values")
            object.__setattr__(self, name, _readonly(coords))
        n_bins = len(self.bin_coords)
        if self.raw_counts.shape[0] != n_bins:
            raise InvalidDataError(
                f"raw_counts has {self.raw_counts.shape[0]} rows but there are {n_bins} bins")
        if self.raw_counts.normalized:
            raise InvalidDataError("raw_counts must not be normalized")
        if len(self.gene_names) != self.raw_counts.shape[1]:
            raise InvalidDataError("gene_names length does not match counts columns")
        object.__setattr__(self, "gene_names", tuple(self.gene_names))
        for level, members, n_units in (
            ("spot", self.spot_membership, len(self.spot_coords)),
            ("region", self.region_membership, len(self.region_coords)),
        ):
            if len(members) != n_units:
                raise InvalidDataError(f"{level} membership lists {len(members)} units, expected {n_units}")
            frozen = tuple(_readonly(np.asarray(m, dtype=np.int64)) for m in members)
            _check_membership(frozen, n_bins, level)
            object.__setattr__(self, f"{level}_membership", frozen)
        feats = {}
        for level, arr in dict(self.features).items():
            arr = np.asarray(arr, dtype=np.float64)
            expected = {"bin": n_bins, "spot": len(self.spot_coords), "region": len(self.region_coords)}[level]
            if arr.ndim < 2 or arr.shape[0] != expected:
                raise InvalidDataError(f"{level} features must have {expected} rows, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidDataError(f"{level} features contain non-finite values")
            feats[level] = _readonly(arr)
        object.__setattr__(self, "features", feats)
        for name, n_units in (("sampled_bins", n_bins), ("sampled_spots", len(self.spot_coords))):
            sel = getattr(self, name)
            if sel is None:
                continue
            sel = np.asarray(sel, dtype=np.int64)
            if sel.size == 0 or sel.min() < 0 or sel.max() >= n_units or len(np.unique(sel)) != len(sel):
                raise InvalidDataError(f"{name} must be distinct indices in [0, {n_units})")
            object.__setattr__(self, name, _readonly(sel))

    @property
    def n_bins(self) -> int:
        return len(self.bin_coords)

    @property
    def n_genes(self) -> int:
        return self.raw_counts.shape[1]

    def level_counts(self, level: str) -> ExpressionMatrix:
        if level == "bin":
            return self.raw_counts
        members = self.spot_membership if level == "spot" else self.region_membership
        return aggregate_to_level(self.raw_counts, members, level=level)


def _check_membership(members: Sequence[np.ndarray], n_bins: int, level: str) -> None:
    seen = np.zeros(n_bins, dtype=bool)
    for j, m in enumerate(members):
        if m.size == 0:
            continue
        if m.min() < 0 or m.max() >= n_bins:
            raise InvalidDataError(f"{level} {j} references a bin index outside [0, {n_bins})")
        if seen[m].any() or len(np.unique(m)) != len(m):
            raise InvalidDataError(f"{level} membership sets are not pairwise disjoint (unit {j})")
        seen[m] = True


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def select_top_genes(counts: ExpressionMatrix, n: int) -> list[int]:
    """Indices of the ``n`` genes with highest mean raw count.

    Ordered by descending mean; equal means keep ascending gene index.
    """
    if counts.normalized:
        raise InvalidArgumentError("gene selection expects raw counts")
    n_units, n_genes = counts.shape
    if n_units == 0 or n_genes == 0:
        raise InvalidArgumentError("cannot select genes from an empty matrix")
    if not 0 < n <= n_genes:
        raise InvalidArgumentError(f"requested {n} genes but the matrix has {n_genes}")
    means = counts.values.mean(axis=0)
    order = np.lexsort((np.arange(n_genes), -means))
    return [int(g) for g in order[:n]]


def normalize_expression(counts: ExpressionMatrix, scale: float = DEFAULT_SCALE) -> ExpressionMatrix:
    """Library-size normalization then natural log1p, row by row."""
    if counts.normalized:
        raise InvalidArgumentError("matrix is already normalized")
    if not scale > 0:
        raise InvalidArgumentError("scale must be positive")
    values = np.asarray(counts.values, dtype=np.float64)
    if values.size and values.min() < 0:
        raise InvalidDataError("negative counts cannot be normalized")
    totals = values.sum(axis=1, keepdims=True)
    safe = np.where(totals > 0, totals, 1.0)
    out = np.where(totals > 0, np.log1p(values / safe * scale), 0.0)
    return ExpressionMatrix(out, counts.level, normalized=True)


def aggregate_to_level(
    bin_expr: ExpressionMatrix, membership: Sequence[Iterable[int]], level: str = "spot"
) -> ExpressionMatrix:
    """Row ``j`` of the result is the sum of the bin rows in ``membership[j]``."""
    if bin_expr.normalized:
        raise InvalidArgumentError("aggregate raw counts before normalizing")
    values = bin_expr.values
    n_bins = values.shape[0]
    out = np.zeros((len(membership), values.shape[1]), dtype=values.dtype)
    for j, members in enumerate(membership):
        idx = np.asarray(list(members) if not isinstance(members, np.ndarray) else members, dtype=np.int64)
        if idx.size == 0:
            raise InvalidArgumentError(f"{level} {j} has no member bins")
        if idx.min() < 0 or idx.max() >= n_bins:
            raise InvalidArgumentError(f"{level} {j} references a bin outside [0, {n_bins})")
        out[j] = values[idx].sum(axis=0)
    return ExpressionMatrix(out, level, normalized=False)


def nearest_center(points: np.ndarray, centers: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Index of the closest center for each point, lowest index on ties."""
    points = np.asarray(points, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if len(points) == 0 or len(centers) == 0:
        raise InvalidArgumentError("coordinate lists must be non-empty")
    out = np.empty(len(points), dtype=np.int64)
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        dx = p[:, None, 0] - centers[None, :, 0]
        dy = p[:, None, 1] - centers[None, :, 1]
        out[start:start + chunk] = np.argmin(dx * dx + dy * dy, axis=1)
    return out


def pair_patches(bin_coords, spot_coords, region_coords) -> tuple[np.ndarray, np.ndarray]:
    """Pair each bin with its nearest spot center and nearest region center."""
    return nearest_center(bin_coords, spot_coords), nearest_center(bin_coords, region_coords)


def split_folds(slide_ids: Sequence, k: int, seed: int) -> FoldSplit:
    """Seeded shuffle followed by round-robin assignment into ``k`` folds."""
    ids = list(slide_ids)
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError("slide ids must be unique")
    if k < 2:
        raise InvalidArgumentError("need at least 2 folds")
    if k > len(ids):
        raise InvalidArgumentError(f"cannot make {k} folds from {len(ids)} slides")
    perm = np.random.default_rng(seed).permutation(len(ids))
    folds: list[list] = [[] for _ in range(k)]
    for pos, i in enumerate(perm):
        folds[pos % k].append(ids[i])
    return FoldSplit(tuple(tuple(f) for f in folds))


def sample_units(n_total: int, n_select: int, seed: int) -> np.ndarray:
    """Uniform sample without replacement, returned in ascending index order."""
    if not 0 < n_select <= n_total:
        raise InvalidArgumentError(f"cannot sample {n_select} of {n_total} units")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_total, size=n_select, replace=False))


def holdout_split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split node positions ``0..n-1`` into sorted (train, test) arrays."""
    if not 0 < fraction < 1:
        raise InvalidArgumentError("holdout fraction must lie in (0, 1)")
    n_test = max(1, int(round(n * fraction)))
    if n - n_test < 2:
        raise InvalidArgumentError(f"{n} nodes leave fewer than 2 for training")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# --------------------------------------------------------------------------
# Per-bin training samples
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiResSample:
    bin_index: int
    coord: np.ndarray
    f_b_input: np.ndarray
    f_s_input: np.ndarray
    f_r_input: np.ndarray
    y_b: np.ndarray
    y_s: np.ndarray
    y_r: np.ndarray


@dataclass(frozen=True)
class SlideSamples:
    """Column-wise view of every graph node (sampled bin) of one slide."""

    slide_id: str
    bin_index: np.ndarray
    coords: np.ndarray
    spot_index: np.ndarray
    region_index: np.ndarray
    x_b: np.ndarray
    x_s: np.ndarray  # [n, tokens, dim]
    x_r: np.ndarray
    y_b: np.ndarray
    y_s: np.ndarray
    y_r: np.ndarray
    gene_names: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.bin_index)

    def sample(self, i: int) -> MultiResSample:
        return MultiResSample(
            int(self.bin_index[i]), self.coords[i], self.x_b[i], self.x_s[i], self.x_r[i],
            self.y_b[i], self.y_s[i], self.y_r[i],
        )

    def targets(self, level: str) -> np.ndarray:
        return {"bin": self.y_b, "spot": self.y_s, "region": self.y_r}[level]


def build_samples(slide: SlideDataset, genes: Sequence[int] | None = None,
                  scale: float | None = None) -> SlideSamples:
    """Aggregate, normalize and pair one slide into per-bin model inputs."""
    for level in LEVELS:
        if level not in slide.features:
            raise InvalidDataError(f"slide {slide.slide_id!r} has no {level} feature table")
    scale = slide.normalization_scale if scale is None else scale
    genes = list(range(slide.n_genes)) if genes is None else list(genes)
    counts = slide.raw_counts.select(genes)
    y = {
        "bin": normalize_expression(counts, scale).values,
        "spot": normalize_expression(
            aggregate_to_level(counts, slide.spot_membership, "spot"), scale).values,
        "region": normalize_expression(
            aggregate_to_level(counts, slide.region_membership, "region"), scale).values,
    }
    nodes = np.arange(slide.n_bins) if slide.sampled_bins is None else np.asarray(slide.sampled_bins)
    spots = np.arange(len(slide.spot_coords)) if slide.sampled_spots is None else np.asarray(slide.sampled_spots)
    coords = slide.bin_coords[nodes]
    s_local, r_idx = pair_patches(coords, slide.spot_coords[spots], slide.region_coords)
    s_idx = spots[s_local]
    return SlideSamples(
        slide_id=slide.slide_id,
        bin_index=nodes.astype(np.int64),
        coords=coords,
        spot_index=s_idx,
        region_index=r_idx,
        x_b=slide.features["bin"][nodes],
        x_s=slide.features["spot"][s_idx][:, None, :],
        x_r=slide.features["region"][r_idx][:, None, :],
        y_b=y["bin"][nodes],
        y_s=y["spot"][s_idx],
        y_r=y["region"][r_idx],
        gene_names=tuple(slide.gene_names[g] for g in genes),
    )


# --------------------------------------------------------------------------
# Slide directory IO
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return FLOAT_FMT % x


def write_table(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path: Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise InvalidDataError(f"{path.name} not found in {path.parent}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidDataError(f"{path} is empty") from None
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise InvalidDataError(f"{path}: non-numeric field ({exc})") from None
    if any(len(r) != len(header) for r in rows):
        raise InvalidDataError(f"{path}: ragged rows")
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def _index_column(path: Path, table: np.ndarray, n: int | None = None) -> None:
    idx = table[:, 0]
    expected = np.arange(len(table) if n is None else n)
    if len(idx) != len(expected) or not np.array_equal(idx, expected):
        raise InvalidDataError(f"{path.name}: first column must enumerate units 0..n-1 in order")


def _as_int_matrix(path: Path, values: np.ndarray) -> np.ndarray:
    if values.size and (np.any(values != np.round(values)) or values.min() < 0):
        raise InvalidDataError(f"{path.name}: counts must be non-negative integers")
    return values.astype(np.int64)


def _write_coords(path: Path, coords: np.ndarray, index_name: str) -> None:
    write_table(path, [index_name, "x", "y"], ([i, x, y] for i, (x, y) in enumerate(coords)))


def _write_membership(path: Path, members: Sequence[np.ndarray]) -> None:
    rows = ([j, int(b)] for j, m in enumerate(members) for b in np.sort(m))
    write_table(path, ["unit_index", "bin_index"], rows)


def _read_membership(path: Path, n_units: int) -> tuple[np.ndarray, ...]:
    _, table = read_table(path)
    if table.size and (table[:, 0].min() < 0 or table[:, 0].max() >= n_units):
        raise InvalidDataError(f"{path.name}: unit_index outside [0, {n_units})")
    units = table[:, 0].astype(np.int64)
    bins = table[:, 1].astype(np.int64)
    return tuple(np.sort(bins[units == j]) for j in range(n_units))


def write_slide(slide: SlideDataset, out_dir: Path) -> Path:
    """Write ``slide`` using the on-disk slide directory layout."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "bins": "bins.csv", "spots": "spots.csv", "regions": "regions.csv", "counts": "counts.csv",
        "membership_spot": "membership_spot.csv", "membership_region": "membership_region.csv",
    }
    _write_coords(out / files["bins"], slide.bin_coords, "bin_index")
    _write_coords(out / files["spots"], slide.spot_coords, "spot_index")
    _write_coords(out / files["regions"], slide.region_coords, "region_index")
    counts = np.asarray(slide.raw_counts.values)
    write_table(out / files["counts"], ["bin_index", *slide.gene_names],
                ([i, *(int(c) for c in row)] for i, row in enumerate(counts)))
    _write_membership(out / files["membership_spot"], slide.spot_membership)
    _write_membership(out / files["membership_region"], slide.region_membership)
    for level in LEVELS:
        if level not in slide.features:
            continue
        arr = slide.features[level].reshape(len(slide.features[level]), -1)
        name = f"features_{level}.csv"
        files[f"features_{level}"] = name
        write_table(out / name, ["unit_index", *(f"f{i}" for i in range(arr.shape[1]))],
                    ([i, *row] for i, row in enumerate(arr)))
    manifest = {
        "format_version": FORMAT_VERSION,
        "slide_id": slide.slide_id,
        "gene_names": list(slide.gene_names),
        "files": files,
        "normalization_scale": slide.normalization_scale,
        "seeds": dict(slide.seeds),
        "sampled_bins": None if slide.sampled_bins is None else [int(i) for i in slide.sampled_bins],
        "sampled_spots": None if slide.sampled_spots is None else [int(i) for i in slide.sampled_spots],
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_manifest(data_dir: Path) -> dict:
    path = Path(data_dir) / MANIFEST
    if not path.exists():
        raise InvalidDataError(f"manifest.json not found in {data_dir}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidDataError(f"{path}: invalid JSON ({exc})") from None
    for key in ("slide_id", "gene_names", "files"):
        if key not in manifest:
            raise InvalidDataError(f"{path}: missing field {key!r}")
    return manifest


def read_slide(data_dir: Path) -> SlideDataset:
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    files = manifest["files"]

    def table(key):
        if key not in files:
            raise InvalidDataError(f"manifest.json: files.{key} missing")
        return read_table(data_dir / files[key])

    coords = {}
    for key in ("bins", "spots", "regions"):
        header, t = table(key)
        if header[1:] != ["x", "y"]:
            raise InvalidDataError(f"{files[key]}: expected columns index,x,y")
        _index_column(data_dir / files[key], t)
        coords[key] = t[:, 1:]
    header, counts = table("counts")
    _index_column(data_dir / files["counts"], counts, len(coords["bins"]))
    if header[1:] != list(manifest["gene_names"]):
        raise InvalidDataError(f"{files['counts']}: gene columns do not match manifest gene_names")
    raw = _as_int_matrix(data_dir / files["counts"], counts[:, 1:])
    feats = {}
    for level in LEVELS:
        key = f"features_{level}"
        if key in files:
            _, t = table(key)
            _index_column(data_dir / files[key], t)
            feats[level] = t[:, 1:]
    try:
        return SlideDataset(
            slide_id=str(manifest["slide_id"]),
            bin_coords=coords["bins"],
            spot_coords=coords["spots"],
            region_coords=coords["regions"],
            raw_counts=ExpressionMatrix(raw, "bin"),
            gene_names=tuple(manifest["gene_names"]),
            spot_membership=_read_membership(data_dir / files["membership_spot"], len(coords["spots"])),
            region_membership=_read_membership(data_dir / files["membership_region"], len(coords["regions"])),
            features=feats,
            sampled_bins=manifest.get("sampled_bins"),
            sampled_spots=manifest.get("sampled_spots"),
            normalization_scale=float(manifest.get("normalization_scale", DEFAULT_SCALE)),
            seeds=manifest.get("seeds", {}),
        )
    except InvalidDataError as exc:
        raise InvalidDataError(f"{data_dir}: {exc}") from None
