"""Synthetic multi-dose PET slice simulator.

Stands in for a clinical multi-dose acquisition: each subject slice is a
smooth elliptical activity map (a large background region containing a few
hot/cold inserts), normalized so the standard-dose image (SPET) peaks at 1.
Low-dose images (LPET) are produced by count-domain Poisson thinning:

    counts(p) ~ Poisson( spet(p) * total_counts / drf )
    lpet(p)   = counts(p) * drf / total_counts, clamped to [0, 1]

A dose reduction factor (DRF) divides the expected counts, so the thinned
image is unbiased before clamping with per-pixel variance
spet(p) * drf / total_counts: doubling the DRF doubles the noise power.
That gives each dose level a distinct, learnable noise signature while
keeping SPET and LPET on one intensity scale.

Datasets are written as raw little-endian float32 files plus a structured
text manifest; everything is a pure function of the seed, so rebuilding with
the same arguments reproduces byte-identical trees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DRF_LEVELS",
    "DEFAULT_TOTAL_COUNTS",
    "ActivityMap",
    "SliceSample",
    "SubjectRecord",
    "FileRecord",
    "DatasetManifest",
    "ManifestError",
    "drf_class_of",
    "generate_activity",
    "thin_counts",
    "simulate_pair",
    "build_dataset",
    "load_manifest",
    "load_samples",
]

DRF_LEVELS = (20, 50, 100)
DEFAULT_TOTAL_COUNTS = 2e5
MANIFEST_NAME = "manifest.txt"
_MANIFEST_VERSION = 1


class ManifestError(RuntimeError):
    """A dataset manifest is missing, malformed, or inconsistent on disk."""


def drf_class_of(drf: int) -> int:
    """Class index of a DRF in the ascending level list."""
    if drf not in DRF_LEVELS:
        raise ValueError(f"drf must be one of {sorted(DRF_LEVELS)}, got {drf}")
    return DRF_LEVELS.index(drf)


@dataclass
class ActivityMap:
    """Nonnegative 2D activity distribution in arbitrary units."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError(f"activity map must be 2D, got shape {self.pixels.shape}")
        if np.any(self.pixels < 0):
            raise ValueError("activity map contains negative values")
        if not np.any(self.pixels > 0):
            raise ValueError("activity map is identically zero")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class SliceSample:
    """One training example: an LPET/SPET pair with its dose label."""

    lpet: np.ndarray
    spet: np.ndarray
    drf: int
    drf_class: int
    subject_id: int
    slice_index: int

    def __post_init__(self):
        if self.lpet.shape != self.spet.shape:
            raise ValueError(f"lpet shape {self.lpet.shape} does not match "
                             f"spet shape {self.spet.shape}")
        if self.drf_class != drf_class_of(self.drf):
            raise ValueError(f"drf_class {self.drf_class} inconsistent with drf {self.drf}")


@dataclass
class SubjectRecord:
    subject_id: int
    split: str
    n_slices: int


@dataclass
class FileRecord:
    path: str
    shape: tuple[int, ...]
    byte_order: str = "le"


@dataclass
class DatasetManifest:
    version: int
    seed: int
    image_size: int
    total_counts: float
    drfs: tuple[int, ...]
    subjects: list[SubjectRecord]
    files: list[FileRecord] = field(default_factory=list)

    def subject_ids(self, split: str) -> list[int]:
        return [s.subject_id for s in self.subjects if s.split == split]


# ---------------------------------------------------------------------------
# Activity map generation
# ---------------------------------------------------------------------------

def _ellipse_mask(yy, xx, cy, cx, ry, rx, angle):
    ct, st = math.cos(angle), math.sin(angle)
    yr = (yy - cy) * ct - (xx - cx) * st
    xr = (yy - cy) * st + (xx - cx) * ct
    return (yr / ry) ** 2 + (xr / rx) ** 2 <= 1.0


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian filter with reflect padding."""
    radius = max(1, int(round(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (t / sigma) ** 2)
    kernel /= kernel.sum()
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(img, pad, mode="reflect")
        out = np.zeros_like(img)
        for k, weight in enumerate(kernel):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(k, k + img.shape[axis])
            out += weight * padded[tuple(sl)]
        img = out
    return img


def generate_activity(seed: int, size: int) -> ActivityMap:
    """Deterministic brain-like activity map of shape (size, size).

    A large background ellipse of moderate activity holds 3 to 8 smaller
    elliptical hot or cold inserts; boundaries are smoothed by a Gaussian
    blur. Values land in [0, 1]. ``size`` must be a multiple of 16 so four
    stride-2 halvings stay exact.
    """
    if size < 16 or size % 16 != 0:
        raise ValueError(f"image size must be a multiple of 16 and >= 16, got {size}")
    rng = np.random.default_rng(seed)
    coords = (np.arange(size, dtype=np.float64) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    img = np.zeros((size, size), dtype=np.float64)
    cy, cx = rng.uniform(-0.08, 0.08, size=2)
    ry = rng.uniform(0.62, 0.8)
    rx = rng.uniform(0.55, 0.75)
    bg_angle = rng.uniform(0.0, math.pi)
    background = _ellipse_mask(yy, xx, cy, cx, ry, rx, bg_angle)
    img[background] = rng.uniform(0.4, 0.55)

    n_blobs = int(rng.integers(3, 9))
    for _ in range(n_blobs):
        r = rng.uniform(0.0, 0.45)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        bcy = cy + r * math.sin(theta)
        bcx = cx + r * math.cos(theta)
        bry = rng.uniform(0.08, 0.28)
        brx = rng.uniform(0.08, 0.28)
        bangle = rng.uniform(0.0, math.pi)
        hot = rng.random() < 0.6
        amp = rng.uniform(0.25, 0.5) if hot else -rng.uniform(0.15, 0.35)
        mask = _ellipse_mask(yy, xx, bcy, bcx, bry, brx, bangle) & background
        img[mask] += amp

    img = np.clip(img, 0.0, 1.0)
    img = _gaussian_blur(img, sigma=size / 32.0)
    img = np.clip(img, 0.0, 1.0)
    return ActivityMap(img)


# ---------------------------------------------------------------------------
# Dose thinning
# ---------------------------------------------------------------------------

def thin_counts(spet: np.ndarray, drf: int, total_counts: float,
                rng: np.random.Generator) -> np.ndarray:
    """Poisson-thinned low-dose image before clamping.

    Unbiased: the expectation equals ``spet`` pixelwise, with variance
    spet * drf / total_counts.
    """
    if drf not in DRF_LEVELS:
        raise ValueError(f"drf must be one of {sorted(DRF_LEVELS)}, got {drf}")
    if total_counts <= 0:
        raise ValueError(f"total_counts must be positive, got {total_counts}")
    expected = spet * (total_counts / drf)
    counts = rng.poisson(expected).astype(np.float64)
    return counts * (drf / total_counts)


def simulate_pair(activity: ActivityMap, drf: int, total_counts: float,
                  seed: int, subject_id: int = 0, slice_index: int = 0) -> SliceSample:
    """Simulate one LPET/SPET pair from an activity map.

    SPET is the activity normalized to peak 1; LPET is its Poisson thinning
    at the given DRF, clamped to [0, 1]. Deterministic given ``seed``.
    """
    spet = activity.pixels / activity.pixels.max()
    rng = np.random.default_rng(seed)
    lpet = np.clip(thin_counts(spet, drf, total_counts, rng), 0.0, 1.0)
    return SliceSample(
        lpet=lpet.astype(np.float32),
        spet=spet.astype(np.float32),
        drf=drf,
        drf_class=drf_class_of(drf),
        subject_id=subject_id,
        slice_index=slice_index,
    )


def _slice_seed(seed: int, subject_id: int, slice_index: int, drf: int = 0):
    """Independent, reproducible RNG stream per (subject, slice, drf).

    ``drf=0`` (never a real dose level) tags the activity-map stream.
    """
    entropy = (int(seed) & 0xFFFFFFFFFFFFFFFF, int(subject_id),
               int(slice_index), int(drf))
    return np.random.default_rng(np.random.SeedSequence(entropy))


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------

def _write_manifest(manifest: DatasetManifest, path: Path) -> None:
    lines = [
        f"version = {manifest.version}",
        f"seed = {manifest.seed}",
        f"image_size = {manifest.image_size}",
        f"total_counts = {manifest.total_counts!r}",
        "drfs = " + " ".join(str(d) for d in manifest.drfs),
    ]
    for sub in manifest.subjects:
        lines.append(f"subject = {sub.subject_id} {sub.split} {sub.n_slices}")
    for rec in manifest.files:
        shape = "x".join(str(d) for d in rec.shape)
        lines.append(f"file = {rec.path} {shape} {rec.byte_order}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(dataset_dir: str | Path) -> DatasetManifest:
    """Parse and validate ``manifest.txt`` inside a dataset directory."""
    root = Path(dataset_dir)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    scalars: dict[str, str] = {}
    subjects: list[SubjectRecord] = []
    files: list[FileRecord] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ManifestError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip()
        value = value.strip()
        if key == "subject":
            sid, split, n_slices = value.split()
            if split not in ("train", "test"):
                raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
            subjects.append(SubjectRecord(int(sid), split, int(n_slices)))
        elif key == "file":
            rel, shape_s, order = value.split()
            files.append(FileRecord(rel, tuple(int(d) for d in shape_s.split("x")), order))
        elif key in ("version", "seed", "image_size", "total_counts", "drfs"):
            scalars[key] = value
        else:
            raise ManifestError(f"{path}:{lineno}: unknown key {key!r}")
    try:
        manifest = DatasetManifest(
            version=int(scalars["version"]),
            seed=int(scalars["seed"]),
            image_size=int(scalars["image_size"]),
            total_counts=float(scalars["total_counts"]),
            drfs=tuple(int(d) for d in scalars["drfs"].split()),
            subjects=subjects,
            files=files,
        )
    except KeyError as exc:
        raise ManifestError(f"{path}: missing required key {exc}") from exc
    _validate_manifest(manifest, root)
    return manifest


def _validate_manifest(manifest: DatasetManifest, root: Path) -> None:
    train_ids = set(manifest.subject_ids("train"))
    test_ids = set(manifest.subject_ids("test"))
    overlap = train_ids & test_ids
    if overlap:
        raise ManifestError(f"train/test subject ids overlap: {sorted(overlap)}")
    for rec in manifest.files:
        fpath = root / rec.path
        if not fpath.exists():
            raise ManifestError(f"manifest references missing file: {fpath}")
        expected = 4 * int(np.prod(rec.shape))
        actual = fpath.stat().st_size
        if actual != expected:
            raise ManifestError(
                f"{fpath}: size {actual} bytes, expected {expected} "
                f"for shape {rec.shape}")


# ---------------------------------------------------------------------------
# Dataset build / load
# ---------------------------------------------------------------------------

def _spet_name(slice_index: int) -> str:
    return f"slice{slice_index}_spet.f32"


def _lpet_name(slice_index: int, drf: int) -> str:
    return f"slice{slice_index}_lpet_drf{drf}.f32"


def _write_f32(path: Path, array: np.ndarray) -> None:
    try:
        path.write_bytes(np.ascontiguousarray(array, dtype="<f4").tobytes())
    except OSError as exc:
        raise ManifestError(f"failed to write {path}: {exc}") from exc


def build_dataset(seed: int, n_subjects_train: int, n_subjects_test: int,
                  slices_per_subject: int, size: int,
                  total_counts: float = DEFAULT_TOTAL_COUNTS,
                  out_dir: str | Path = "dataset") -> DatasetManifest:
    """Generate a full multi-dose dataset on disk and return its manifest.

    Every subject slice yields one SPET file plus one LPET file per DRF, all
    sharing the SPET's intensity scale. Layout:
    ``<out_dir>/sub<id>/slice<k>_spet.f32`` and ``..._lpet_drf<d>.f32``.
    """
    if n_subjects_train < 1 or n_subjects_test < 1 or slices_per_subject < 1:
        raise ValueError(
            "subject and slice counts must all be >= 1, got "
            f"train={n_subjects_train}, test={n_subjects_test}, "
            f"slices={slices_per_subject}")
    if size < 16 or size % 16 != 0:
        raise ValueError(f"image size must be a multiple of 16 and >= 16, got {size}")
    if total_counts <= 0:
        raise ValueError(f"total_counts must be positive, got {total_counts}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    n_total = n_subjects_train + n_subjects_test
    subjects = [
        SubjectRecord(sid, "train" if sid < n_subjects_train else "test",
                      slices_per_subject)
        for sid in range(n_total)
    ]
    manifest = DatasetManifest(
        version=_MANIFEST_VERSION,
        seed=seed,
        image_size=size,
        total_counts=float(total_counts),
        drfs=DRF_LEVELS,
        subjects=subjects,
    )
    for sub in subjects:
        sub_dir = root / f"sub{sub.subject_id}"
        sub_dir.mkdir(parents=True, exist_ok=True)
        for k in range(slices_per_subject):
            activity_seed = _slice_seed(seed, sub.subject_id, k)
            activity = generate_activity(int(activity_seed.integers(2 ** 63)), size)
            spet = (activity.pixels / activity.pixels.max()).astype(np.float32)
            rel_spet = f"sub{sub.subject_id}/{_spet_name(k)}"
            _write_f32(root / rel_spet, spet)
            manifest.files.append(FileRecord(rel_spet, spet.shape))
            for drf in DRF_LEVELS:
                rng = _slice_seed(seed, sub.subject_id, k, drf)
                lpet = np.clip(thin_counts(spet.astype(np.float64), drf,
                                           total_counts, rng), 0.0, 1.0)
                rel_lpet = f"sub{sub.subject_id}/{_lpet_name(k, drf)}"
                _write_f32(root / rel_lpet, lpet.astype(np.float32))
                manifest.files.append(FileRecord(rel_lpet, lpet.shape))
    _write_manifest(manifest, root / MANIFEST_NAME)
    return manifest


def read_f32(path: str | Path, shape: tuple[int, ...]) -> np.ndarray:
    """Read one raw little-endian float32 tensor file."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"tensor file not found: {path}")
    flat = np.fromfile(path, dtype="<f4")
    if flat.size != int(np.prod(shape)):
        raise ManifestError(f"{path}: {flat.size} values, expected shape {shape}")
    return flat.reshape(shape)


def load_samples(dataset_dir: str | Path, split: str,
                 manifest: DatasetManifest | None = None) -> list[SliceSample]:
    """Load every slice sample of one split, ordered by subject, slice, DRF."""
    root = Path(dataset_dir)
    if manifest is None:
        manifest = load_manifest(root)
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    shape = (manifest.image_size, manifest.image_size)
    samples = []
    for sub in manifest.subjects:
        if sub.split != split:
            continue
        sub_dir = root / f"sub{sub.subject_id}"
        for k in range(sub.n_slices):
            spet = read_f32(sub_dir / _spet_name(k), shape)
            for drf in manifest.drfs:
                lpet = read_f32(sub_dir / _lpet_name(k, drf), shape)
                samples.append(SliceSample(
                    lpet=lpet, spet=spet, drf=drf,
                    drf_class=drf_class_of(drf),
                    subject_id=sub.subject_id, slice_index=k))
    return samples
