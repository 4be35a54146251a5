"""Synthetic cohorts for exercising the QC pipeline without MRI data.

Each case has an image with bright spherical lesions on a smooth
background, the ground-truth lesion mask, a stack of stochastic
"MC dropout" probability maps and a reconstruction of the image with the
lesions inpainted.

The degradation strength ``q`` controls how bad the simulated
segmentation is. Degradation works the way failures look in practice:
the network shrinks lesions and misses some of them outright, but does so
consistently across samples. Sample disagreement is a symmetric jitter of
each predicted lesion's boundary, so uncertainty lives on predicted borders
and the uncertainty voxel-wise sum grows with the predicted lesion
surface. Poor segmentations therefore have low uncertainty sums.

Randomness comes from numpy's PCG64 generator seeded with
``(seed, case_index)``; a case is bit-identical across runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import GenerationError
from .maps import mask_out_lesions
from .volio import save_volume
from .volume import GridShape

MANIFEST_COLUMNS = ("id", "q", "image_path", "gt_path", "sample_paths", "recon_path")

# shrink of predicted lesion radius at q = 1, as a fraction of the true radius
SHRINK_AT_Q1 = 0.45
# probability that a lesion is missed entirely at q = 1
MISS_AT_Q1 = 0.5
# std of per-sample boundary jitter, in voxels
BOUNDARY_JITTER = 0.4
# softness of the sample probability edge, in voxels
EDGE_SOFTNESS = 0.15
# scale of per-voxel multiplicative noise inside predicted lesions at q = 1
VOXEL_NOISE_AT_Q1 = 0.1
PLACEMENT_RETRIES = 200


@dataclass(frozen=True)
class SynthParams:
    shape: tuple[int, int, int] = (32, 32, 32)
    lesion_count: tuple[int, int] = (1, 5)
    lesion_radius: tuple[float, float] = (2.5, 5.0)
    q: float = 0.0
    n_samples: int = 20
    recon_noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        shape = GridShape.of(self.shape)
        lo, hi = self.lesion_count
        if not 1 <= lo <= hi:
            raise ValueError(f"bad lesion_count range {self.lesion_count}")
        rlo, rhi = self.lesion_radius
        if not 1.0 <= rlo <= rhi:
            raise ValueError(f"lesion radii must be >= 1, got {self.lesion_radius}")
        if 2 * rhi + 3 > min(shape):
            raise ValueError(f"lesion radius {rhi} does not fit in grid {tuple(shape)}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {self.q}")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.recon_noise < 0:
            raise ValueError("recon_noise must be non-negative")


@dataclass(frozen=True)
class SynthCase:
    image: np.ndarray
    gt: np.ndarray
    samples: np.ndarray  # (n_samples, nx, ny, nz)
    reconstruction: np.ndarray


def _place_lesions(rng, params: SynthParams):
    shape = np.array(params.shape)
    n = int(rng.integers(params.lesion_count[0], params.lesion_count[1] + 1))
    centres, radii = [], []
    for _ in range(n):
        r = float(rng.uniform(*params.lesion_radius))
        for _ in range(PLACEMENT_RETRIES):
            margin = r + 1.0
            c = rng.uniform(margin, shape - 1 - margin)
            if all(np.linalg.norm(c - c2) > r + r2 + 1.0 for c2, r2 in zip(centres, radii)):
                centres.append(c)
                radii.append(r)
                break
        else:
            raise GenerationError(
                f"could not place lesion {len(centres) + 1} of {n} in grid {params.shape} "
                f"after {PLACEMENT_RETRIES} attempts"
            )
    return np.array(centres), np.array(radii)


def _distances(shape, centres):
    grid = np.indices(shape, dtype=np.float64)
    return np.stack([np.sqrt(((grid - c[:, None, None, None]) ** 2).sum(axis=0)) for c in centres])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def generate_case(params: SynthParams, index: int) -> SynthCase:
    rng = np.random.default_rng([params.seed, index])
    shape = tuple(params.shape)
    centres, radii = _place_lesions(rng, params)
    dist = _distances(shape, centres)

    background = 0.3 + 0.1 * gaussian_filter(rng.normal(size=shape), sigma=4.0) * 4.0
    blobs = (0.5 * np.exp(-0.5 * (dist / radii[:, None, None, None]) ** 2)).max(axis=0)
    image = np.clip(background + blobs + rng.normal(scale=0.01, size=shape), 0.0, 1.0)
    gt = (dist <= radii[:, None, None, None]).any(axis=0)

    q = params.q
    kept = rng.uniform(size=len(radii)) >= MISS_AT_Q1 * q
    pred_radii = radii * (1.0 - SHRINK_AT_Q1 * q)
    samples = np.zeros((params.n_samples, *shape))
    # antithetic pairs: the jitter of sample 2k+1 mirrors sample 2k, so the
    # sample disagreement is centred on the predicted boundary
    half = rng.normal(scale=BOUNDARY_JITTER, size=((params.n_samples + 1) // 2, len(radii)))
    jitters = np.empty((params.n_samples, len(radii)))
    jitters[0::2] = half
    jitters[1::2] = -half[: params.n_samples // 2]
    if params.n_samples % 2:
        jitters[-1] = 0.0
    for k, jitter in enumerate(jitters):
        p = np.zeros(shape)
        for j in np.flatnonzero(kept):
            edge = (pred_radii[j] + jitter[j] - dist[j]) / EDGE_SOFTNESS
            p = np.maximum(p, _sigmoid(edge))
        noise = rng.uniform(size=shape)
        samples[k] = np.clip(p * (1.0 - VOXEL_NOISE_AT_Q1 * q * noise), 0.0, 1.0)

    masked = mask_out_lesions(image, gt)
    healthy = (~gt).astype(np.float64)
    smooth_num = gaussian_filter(masked, sigma=2.0)
    smooth_den = gaussian_filter(healthy, sigma=2.0)
    fill = np.divide(smooth_num, smooth_den, out=np.zeros(shape), where=smooth_den > 1e-6)
    recon = np.where(gt, fill, image) + rng.normal(scale=params.recon_noise * q + 1e-3, size=shape)
    return SynthCase(image=image, gt=gt, samples=samples, reconstruction=np.clip(recon, 0.0, 1.0))


def q_ramp(n_cases: int, levels: int | None = None) -> list[float]:
    """Degradation schedule rising from 0 to 1.

    With ``levels`` the ramp is stepped: cases are split into ``levels``
    consecutive groups of (nearly) equal size sharing one q value.
    """
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    if levels is None or levels >= n_cases:
        if n_cases == 1:
            return [0.0]
        return [i / (n_cases - 1) for i in range(n_cases)]
    if levels < 2:
        raise ValueError("a stepped ramp needs at least 2 levels")
    return [(i * levels // n_cases) / (levels - 1) for i in range(n_cases)]


def case_id(index: int) -> str:
    return f"case_{index:03d}"


def generate_cohort(
    params: SynthParams, n_cases: int, q_schedule: Sequence[float], out_dir, fmt: str = "rvol"
) -> Path:
    """Write ``n_cases`` cases under ``out_dir`` and return the manifest path.

    Case ``i`` is generated with ``q = q_schedule[i]`` and case index ``i``.
    ``fmt`` is ``"rvol"`` or ``"nii"``. Paths in the manifest are relative
    to the manifest's directory.
    """
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    if len(q_schedule) != n_cases:
        raise ValueError(f"q schedule has {len(q_schedule)} entries for {n_cases} cases")
    ext = {"rvol": ".rvol.json", "nii": ".nii"}[fmt]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, q in enumerate(q_schedule):
        cid = case_id(i)
        case_dir = out_dir / cid
        try:
            case = generate_case(replace(params, q=float(q)), i)
            case_dir.mkdir(exist_ok=True)
            rel = lambda name: f"{cid}/{name}{ext}"  # noqa: E731
            save_volume(case.image, out_dir / rel("image"), "f32")
            save_volume(case.gt, out_dir / rel("gt"), "u8")
            sample_paths = []
            for k, s in enumerate(case.samples):
                save_volume(s, out_dir / rel(f"sample_{k:02d}"), "f32")
                sample_paths.append(rel(f"sample_{k:02d}"))
            save_volume(case.reconstruction, out_dir / rel("recon"), "f32")
        except OSError as exc:
            raise OSError(f"{cid}: {exc}") from exc
        rows.append(
            {
                "id": cid,
                "q": repr(float(q)),
                "image_path": rel("image"),
                "gt_path": rel("gt"),
                "sample_paths": ";".join(sample_paths),
                "recon_path": rel("recon"),
            }
        )
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return manifest


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    q: float
    image_path: Path
    gt_path: Path
    sample_paths: tuple[Path, ...]
    recon_path: Path


def read_manifest(path) -> list[ManifestEntry]:
    """Read a cohort manifest; paths are resolved against its directory."""
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            entries.append(
                ManifestEntry(
                    id=row["id"],
                    q=float(row["q"]),
                    image_path=base / row["image_path"],
                    gt_path=base / row["gt_path"],
                    sample_paths=tuple(base / p for p in row["sample_paths"].split(";") if p),
                    recon_path=base / row["recon_path"],
                )
            )
    return entries
