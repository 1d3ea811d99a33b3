"""Dataset preparation: tiling, filtering, augmentation, and splitting.

Turns raw image/mask directories into filtered, rotation-augmented,
split collections of fixed-size tile pairs. Input layout is
`<root>/images/<stem>.{png,jpg}` plus `<root>/masks/<stem>.png` with
matching stems; output tiles are PNG pairs named
`<stem>_r<row>_c<col>_rot<deg>.png` under `<out>/{images,masks}/`,
indexed by a CSV manifest (name, split, crack-pixel count).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError

ROTATIONS = (0, 90, 180, 270)
MASK_BINARIZE_LEVEL = 127  # of 255; wild annotations mix {0,255} and {0,1}


@dataclass(frozen=True)
class TilePair:
    """An RGB image tile with its aligned binary mask."""

    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    mask: np.ndarray  # H x W uint8 in {0, 1}
    source_id: str = ""
    origin: tuple = (0, 0)  # (row, col) pixel offset in the source image
    rotation: int = 0

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError(
                f"image {self.image.shape[:2]} and mask {self.mask.shape} sizes differ"
            )
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError("mask must contain only 0 and 1")
        if self.rotation not in ROTATIONS:
            raise ValueError(f"rotation {self.rotation} not in {ROTATIONS}")

    @property
    def crack_pixels(self) -> int:
        return int(self.mask.sum())

    @property
    def name(self) -> str:
        row, col = self.origin
        return f"{self.source_id}_r{row}_c{col}_rot{self.rotation}"


@dataclass(frozen=True)
class DatasetSpec:
    name: str = "dataset"
    tile_size: tuple = (512, 512)  # (h, w)
    overlap_w: float = 0.1
    overlap_h: float = 0.1
    min_crack_pixels: int = 1000
    test_fraction: float = 0.1
    seed: int = 0
    augment_rotations: bool = True

    def __post_init__(self):
        for name, frac in (("overlap_w", self.overlap_w), ("overlap_h", self.overlap_h)):
            if not 0 <= frac < 1:
                raise ConfigError(f"{name} must be in [0, 1)")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction must be in [0, 1)")


# ---------------------------------------------------------------------------
# Tiling


def tile_starts(dim: int, tile: int, overlap: float) -> list[int]:
    """Start offsets 0, s, 2s, ... with stride s = floor(tile * (1 - overlap)).

    A final start clamped to dim - tile is appended when the last regular
    window does not reach the edge, so every pixel is covered.
    """
    if tile > dim:
        raise ValueError(f"tile size {tile} exceeds image dimension {dim}")
    stride = max(int(tile * (1.0 - overlap)), 1)
    starts = list(range(0, dim - tile + 1, stride))
    if starts[-1] + tile < dim:
        starts.append(dim - tile)
    return sorted(set(starts))


def crop_with_overlap(image, mask, tile_size, overlap_w: float, overlap_h: float,
                      source_id: str = "") -> list[TilePair]:
    """Cut an aligned image/mask pair into overlapping fixed-size tiles."""
    image = np.asarray(image)
    mask = np.asarray(mask)
    th, tw = (tile_size, tile_size) if np.isscalar(tile_size) else tile_size
    rows = tile_starts(image.shape[0], th, overlap_h)
    cols = tile_starts(image.shape[1], tw, overlap_w)
    tiles = []
    for r in rows:
        for c in cols:
            tiles.append(
                TilePair(
                    image=image[r : r + th, c : c + tw],
                    mask=mask[r : r + th, c : c + tw],
                    source_id=source_id,
                    origin=(r, c),
                )
            )
    return tiles


def filter_min_crack(tiles, min_crack_pixels: int) -> list[TilePair]:
    """Keep tiles with strictly more than `min_crack_pixels` crack pixels."""
    return [t for t in tiles if t.crack_pixels > min_crack_pixels]


# ---------------------------------------------------------------------------
# Rotation augmentation


def rotate_quarter(arr: np.ndarray, degrees: int) -> np.ndarray:
    """Clockwise rotation by a multiple of 90: (r, c) -> (c, H-1-r) per turn."""
    if degrees not in ROTATIONS:
        raise ValueError(f"rotation {degrees} not in {ROTATIONS}")
    return np.ascontiguousarray(np.rot90(arr, k=-(degrees // 90), axes=(0, 1)))


def augment_rotations(tile: TilePair) -> list[TilePair]:
    """The tile plus its 90/180/270-degree rotations, masks rotated alike."""
    return [
        replace(
            tile,
            image=rotate_quarter(tile.image, deg),
            mask=rotate_quarter(tile.mask, deg),
            rotation=deg,
        )
        for deg in ROTATIONS
    ]


# ---------------------------------------------------------------------------
# Splitting


def _sort_key(tile: TilePair):
    return (tile.source_id, tile.origin, tile.rotation)


def split_dataset(tiles, test_fraction: float, seed: int) -> tuple[list[TilePair], list[TilePair]]:
    """Deterministic partition into (train_val, test) without rotation leakage.

    All rotations of one source tile (same source_id + origin) stay in the
    same split. Groups are drawn in seeded shuffle order and added to the
    test side while that moves its size strictly closer to
    round(test_fraction * N).
    """
    tiles = list(tiles)
    if not tiles:
        raise ValueError("cannot split an empty tile list")
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must be in [0, 1)")
    groups: dict = {}
    for t in tiles:
        groups.setdefault((t.source_id, t.origin), []).append(t)
    keys = sorted(groups)
    rng = np.random.default_rng(seed)
    rng.shuffle(keys)

    target = round(test_fraction * len(tiles))
    test_keys = set()
    size = 0
    for key in keys:
        grown = size + len(groups[key])
        if abs(grown - target) < abs(size - target):
            test_keys.add(key)
            size = grown
    test = [t for k in test_keys for t in groups[k]]
    train_val = [t for k in groups if k not in test_keys for t in groups[k]]
    return sorted(train_val, key=_sort_key), sorted(test, key=_sort_key)


# ---------------------------------------------------------------------------
# Image and mask I/O


def load_image(path) -> np.ndarray:
    """RGB image as H x W x 3 float32 in [0, 1]."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def load_mask(path) -> np.ndarray:
    """Grayscale annotation binarized at > 127 of 255 into uint8 {0, 1}."""
    with Image.open(path) as img:
        gray = np.asarray(img.convert("L"))
    return (gray > MASK_BINARIZE_LEVEL).astype(np.uint8)


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def save_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) * 255).astype(np.uint8)).save(path)


def save_probability_png(path, prob: np.ndarray) -> None:
    """Probability map as 8-bit grayscale, value = round(255 * p)."""
    arr = np.clip(np.round(np.asarray(prob) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_probability_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# Directory preparation


def _find_pairs(root: Path) -> list[tuple[str, Path, Path]]:
    image_dir = root / "images"
    mask_dir = root / "masks"
    if not image_dir.is_dir() or not mask_dir.is_dir():
        raise ConfigError(f"input root {root} must contain images/ and masks/")
    pairs = []
    for image_path in sorted(image_dir.iterdir()):
        if image_path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        mask_path = mask_dir / f"{image_path.stem}.png"
        if not mask_path.is_file():
            raise ConfigError(f"no mask for image {image_path.name} (expected {mask_path})")
        pairs.append((image_path.stem, image_path, mask_path))
    if not pairs:
        raise ConfigError(f"no image/mask pairs found under {root}")
    return pairs


def prepare_dataset(root, spec: DatasetSpec) -> tuple[list[TilePair], list[TilePair]]:
    """Full recipe: crop, filter, rotate, split for every source pair."""
    tiles: list[TilePair] = []
    for stem, image_path, mask_path in _find_pairs(Path(root)):
        image = load_image(image_path)
        mask = load_mask(mask_path)
        cropped = crop_with_overlap(
            image, mask, spec.tile_size, spec.overlap_w, spec.overlap_h, source_id=stem
        )
        kept = filter_min_crack(cropped, spec.min_crack_pixels)
        if spec.augment_rotations:
            for tile in kept:
                tiles.extend(augment_rotations(tile))
        else:
            tiles.extend(kept)
    if not tiles:
        raise ConfigError("no tiles survived filtering; lower data.min_crack_pixels")
    return split_dataset(tiles, spec.test_fraction, spec.seed)


def write_tiles(out_dir, train_val, test) -> Path:
    """Write tile PNG pairs plus the manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = [(t, "trainval") for t in train_val] + [(t, "test") for t in test]
    records.sort(key=lambda item: _sort_key(item[0]))
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "split", "crack_pixels"])
        for tile, split in records:
            save_image(out / "images" / f"{tile.name}.png", tile.image)
            save_mask(out / "masks" / f"{tile.name}.png", tile.mask)
            writer.writerow([tile.name, split, tile.crack_pixels])
    return manifest


def read_manifest(out_dir) -> list[dict]:
    path = Path(out_dir) / "manifest.csv"
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_tiles(out_dir, split: str) -> list[TilePair]:
    """Re-read tile pairs of one split from a prepared directory."""
    out = Path(out_dir)
    tiles = []
    for row in read_manifest(out_dir):
        if row["split"] != split:
            continue
        name = row["name"]
        stem, origin, rotation = _parse_tile_name(name)
        tiles.append(
            TilePair(
                image=load_image(out / "images" / f"{name}.png"),
                mask=load_mask(out / "masks" / f"{name}.png"),
                source_id=stem,
                origin=origin,
                rotation=rotation,
            )
        )
    return tiles


def _parse_tile_name(name: str) -> tuple[str, tuple, int]:
    stem, row, col, rot = name.rsplit("_", 3)
    return stem, (int(row[1:]), int(col[1:])), int(rot[3:])


# ---------------------------------------------------------------------------
# Synthetic fixtures (trainability harness and pipeline demos)


def synthetic_crack_tile(size: int = 64, seed: int = 0, source_id: str = "synthetic") -> TilePair:
    """A light textured tile with one dark meandering crack a few pixels wide."""
    rng = np.random.default_rng(seed)
    image = 0.62 + 0.05 * rng.standard_normal((size, size, 3)).astype(np.float32)
    mask = np.zeros((size, size), dtype=np.uint8)
    row = size // 2 + int(rng.integers(-size // 8, size // 8 + 1))
    half_width = 1
    for col in range(size):
        row = int(np.clip(row + rng.integers(-1, 2), 2, size - 3))
        mask[row - half_width : row + half_width + 1, col] = 1
    dark = 0.12 + 0.03 * rng.standard_normal((size, size, 3)).astype(np.float32)
    image = np.where(mask[..., None].astype(bool), dark, image)
    return TilePair(np.clip(image, 0.0, 1.0), mask, source_id=source_id)


def write_synthetic_corpus(root, n_images: int = 10, size: int = 64, seed: int = 0) -> None:
    """Write a small synthetic raw dataset in the prepare-data input layout."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(n_images):
        tile = synthetic_crack_tile(size=size, seed=seed + i, source_id=f"img{i:03d}")
        save_image(root / "images" / f"img{i:03d}.png", tile.image)
        save_mask(root / "masks" / f"img{i:03d}.png", tile.mask)
