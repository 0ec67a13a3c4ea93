"""Seeded synthetic slides with a learnable feature -> expression relationship.

A smooth latent field ``z(x, y)`` drives both the image features observed at
every level and the Poisson bin counts. Spot and region counts are sums of
their member bins, exactly as on real HD data.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import DEFAULT_SCALE, ExpressionMatrix, SlideDataset, nearest_center
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class SynthConfig:
    n_bins: int = 64
    n_spots: int = 16
    n_regions: int = 4
    n_genes: int = 16
    feature_dim: int = 16
    latent_dim: int = 3
    noise_sigma: float = 1.0
    seed: int = 0
    bin_spacing: float = 32.0  # 8 um bins at 0.25 um/px
    jitter: float = 0.25  # fraction of bin_spacing
    count_scale: float = 20.0
    slide_id: str | None = None

    def __post_init__(self):
        for name in ("n_bins", "n_spots", "n_regions", "n_genes", "feature_dim", "latent_dim"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be non-negative")
        if self.n_spots > self.n_bins or self.n_regions > self.n_bins:
            raise InvalidArgumentError("cannot have more spots or regions than bins")
        if not 0 <= self.jitter < 0.5:
            raise InvalidArgumentError("jitter must lie in [0, 0.5)")


class LatentField:
    """Sum of a few low-frequency sinusoids per latent dimension."""

    def __init__(self, rng: np.random.Generator, latent_dim: int, extent: float, n_waves: int = 3):
        self.freq = rng.uniform(0.5, 2.0, size=(latent_dim, n_waves)) * 2 * np.pi / max(extent, 1.0)
        angle = rng.uniform(0, 2 * np.pi, size=(latent_dim, n_waves))
        self.direction = np.stack([np.cos(angle), np.sin(angle)], axis=-1)
        self.phase = rng.uniform(0, 2 * np.pi, size=(latent_dim, n_waves))
        self.amp = rng.normal(0, 1, size=(latent_dim, n_waves)) / np.sqrt(n_waves)

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        proj = np.einsum("nc,lwc->nlw", coords, self.direction)
        return (self.amp * np.sin(self.freq * proj + self.phase)).sum(axis=-1) * np.sqrt(2.0)


def _farthest_points(coords: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(len(coords)))]
    d = np.sum((coords - coords[chosen[0]]) ** 2, axis=1)
    for _ in range(m - 1):
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.sum((coords - coords[nxt]) ** 2, axis=1))
    return np.array(chosen)


def _partition(coords: np.ndarray, center_bins: np.ndarray) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
    centers = coords[center_bins]
    owner = nearest_center(coords, centers)
    members = tuple(np.flatnonzero(owner == j) for j in range(len(centers)))
    return centers, members


def generate_slide(config: SynthConfig) -> SlideDataset:
    rng = np.random.default_rng(config.seed)
    side = int(np.ceil(np.sqrt(config.n_bins)))
    gy, gx = np.divmod(np.arange(config.n_bins), side)
    grid = np.stack([gx, gy], axis=1).astype(np.float64) * config.bin_spacing
    jitter = rng.uniform(-config.jitter, config.jitter, size=grid.shape) * config.bin_spacing
    bin_coords = grid + jitter

    field = LatentField(rng, config.latent_dim, extent=side * config.bin_spacing)
    z_bin = field(bin_coords)

    # count emission: softplus link keeps rates positive
    loadings = rng.normal(0, 1, size=(config.latent_dim, config.n_genes))
    baseline = rng.normal(0, 0.5, size=config.n_genes)
    rate = config.count_scale * np.logaddexp(0.0, z_bin @ loadings + baseline)
    counts = rng.poisson(rate).astype(np.int64)

    spot_centers, spot_members = _partition(bin_coords, _farthest_points(bin_coords, config.n_spots, rng))
    region_centers, region_members = _partition(
        bin_coords, _farthest_points(bin_coords, config.n_regions, rng))

    features = {}
    for level, coords in (("bin", bin_coords), ("spot", spot_centers), ("region", region_centers)):
        mixing = rng.normal(0, 1, size=(config.latent_dim, config.feature_dim))
        noise = rng.normal(0, 1, size=(len(coords), config.feature_dim))
        features[level] = field(coords) @ mixing + config.noise_sigma * noise

    return SlideDataset(
        slide_id=config.slide_id or f"synth-{config.seed}",
        bin_coords=bin_coords,
        spot_coords=spot_centers,
        region_coords=region_centers,
        raw_counts=ExpressionMatrix(counts, "bin"),
        gene_names=tuple(f"G{g:04d}" for g in range(config.n_genes)),
        spot_membership=spot_members,
        region_membership=region_members,
        features=features,
        normalization_scale=DEFAULT_SCALE,
        seeds={"synth": config.seed},
    )


def config_dict(config: SynthConfig) -> dict:
    return asdict(config)
