"""Deterministic procedural phantoms: paired and unpaired synthetic
brain-like slices with a known perfusion-to-uptake ground truth.

Geometry is a set of nested noisy ellipses (head boundary, gray-matter
ribbon, white-matter core, central ventricle). The ASL channel is the
perfusion field after moderate blur plus additive Gaussian noise; the
PET channel applies a fixed saturating uptake nonlinearity to the
noiseless perfusion field followed by a wider blur. Activation hotspots
raise perfusion locally, so they show up in ASL and PET but never in T1.

All randomness flows through named PCG64 streams derived from the spec
seed, so identical specs render bit-identical output. The uptake map and
blur widths below are frozen; changing them invalidates every recorded
corpus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .datasets import Modality, Slice
from .errors import InvalidGrid, InvalidSpec, IoError
from .sliceio import Manifest, ManifestEntry, write_manifest, write_slice

# Grid dims must divide cleanly through the default 3-level network.
DOWNSAMPLE_DIVISOR = 4

ASL_BLUR_SIGMA = 1.2
ASL_NOISE_SIGMA = 0.03
PET_BLUR_SIGMA = 2.0
BLUR_TRUNCATE = 4.0
# scipy's kernel radius for the PET blur; hotspot support in any channel
# is contained in the hotspot disk dilated by this many pixels.
PET_BLUR_RADIUS = int(BLUR_TRUNCATE * PET_BLUR_SIGMA + 0.5)

UPTAKE_HALF_SAT = 0.3

_T1_INTENSITY = {"bg": 0.02, "csf": 0.12, "gm": 0.55, "wm": 0.92}
_PERF_INTENSITY = {"bg": 0.00, "csf": 0.06, "gm": 0.62, "wm": 0.24}

ACTIVATION_NONE = "none"
ACTIVATION_HOTSPOT = "local_hotspot"


@dataclass(frozen=True)
class Hotspot:
    center: tuple[int, int]  # (row, col) pixels
    radius: int              # pixels
    amplitude: float         # fraction of the GM perfusion intensity


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    grid: tuple[int, int] = (64, 64)
    tissue_classes: int = 3
    activation: str = ACTIVATION_NONE
    hotspot: Hotspot | None = None
    paired: bool = True
    subject_id: int = 0

    def __post_init__(self):
        h, w = self.grid
        if h <= 0 or w <= 0:
            raise InvalidSpec(f"grid must be positive, got {self.grid}")
        if h % DOWNSAMPLE_DIVISOR or w % DOWNSAMPLE_DIVISOR:
            raise InvalidGrid(f"grid dims must be multiples of {DOWNSAMPLE_DIVISOR}, got {self.grid}")
        if self.seed < 0:
            raise InvalidSpec("seed must be >= 0")
        if self.tissue_classes not in (2, 3):
            raise InvalidSpec("tissue_classes must be 2 (GM only) or 3 (CSF/GM/WM)")
        if self.activation not in (ACTIVATION_NONE, ACTIVATION_HOTSPOT):
            raise InvalidSpec(f"unknown activation {self.activation!r}")
        if self.activation == ACTIVATION_HOTSPOT and self.hotspot is None:
            raise InvalidSpec("local_hotspot activation requires hotspot parameters")

    @property
    def condition(self) -> str:
        return "activated" if self.activation == ACTIVATION_HOTSPOT else "resting"


@dataclass(frozen=True)
class PhantomTriple:
    asl: Slice
    t1: Slice
    pet: Slice | None


def uptake(perfusion: np.ndarray) -> np.ndarray:
    """Frozen monotone saturating perfusion-to-uptake map, fixed point at 1."""
    c = UPTAKE_HALF_SAT
    return (perfusion / (perfusion + c)) * (1.0 + c)


def _labels(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Tissue label map: 0 background, 1 CSF, 2 GM, 3 WM."""
    h, w = spec.grid
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    theta = np.arctan2(dy, dx)

    def wobble(scale: float) -> np.ndarray:
        c2, c3 = rng.uniform(0.2, 1.0, size=2)
        p2, p3 = rng.uniform(0.0, 2 * math.pi, size=2)
        return 1.0 + scale * (c2 * np.sin(2 * theta + p2) + c3 * np.sin(3 * theta + p3))

    ah = h * (0.42 + 0.02 * rng.uniform(-1.0, 1.0))
    aw = w * (0.36 + 0.02 * rng.uniform(-1.0, 1.0))
    rho_head = np.hypot(dy / ah, dx / aw) / wobble(0.04)
    rho_wm = np.hypot(dy / (0.68 * ah), dx / (0.66 * aw)) / wobble(0.06)
    rho_vent = np.hypot(dy / (0.16 * ah), dx / (0.13 * aw))

    labels = np.zeros((h, w), dtype=np.int8)
    labels[rho_head <= 1.0] = 1                      # CSF rim
    labels[rho_head <= 0.92] = 2                     # GM ribbon
    if spec.tissue_classes >= 3:
        labels[(rho_wm <= 1.0) & (labels == 2)] = 3  # WM core
        labels[(rho_vent <= 1.0) & (labels == 3)] = 1  # ventricle
    return labels


def _paint(labels: np.ndarray, values: dict) -> np.ndarray:
    out = np.full(labels.shape, values["bg"], dtype=np.float64)
    out[labels == 1] = values["csf"]
    out[labels == 2] = values["gm"]
    out[labels == 3] = values["wm"]
    return out


def generate_subject(spec: PhantomSpec) -> PhantomTriple:
    """Render one subject. Identical specs produce bit-identical triples."""
    geom_seed, noise_seed = np.random.SeedSequence(spec.seed).spawn(2)
    geom = np.random.Generator(np.random.PCG64(geom_seed))
    noise = np.random.Generator(np.random.PCG64(noise_seed))

    labels = _labels(spec, geom)

    # Per-subject intensity jitter; drawn unconditionally, in a fixed order,
    # so toggling activation never shifts the stream.
    t1_vals = dict(_T1_INTENSITY)
    perf_vals = dict(_PERF_INTENSITY)
    t1_vals["gm"] += geom.uniform(-0.02, 0.02)
    t1_vals["wm"] += geom.uniform(-0.02, 0.02)
    perf_vals["gm"] += geom.uniform(-0.03, 0.03)
    perf_vals["wm"] += geom.uniform(-0.02, 0.02)

    t1_map = _paint(labels, t1_vals)
    perf = _paint(labels, perf_vals)

    if spec.activation == ACTIVATION_HOTSPOT:
        r0, c0 = spec.hotspot.center
        yy, xx = np.mgrid[0 : spec.grid[0], 0 : spec.grid[1]]
        disk = (yy - r0) ** 2 + (xx - c0) ** 2 <= spec.hotspot.radius**2
        perf = np.clip(perf + spec.hotspot.amplitude * perf_vals["gm"] * disk, 0.0, 1.0)

    asl_px = gaussian_filter(perf, ASL_BLUR_SIGMA, truncate=BLUR_TRUNCATE)
    asl_px = asl_px + noise.normal(0.0, ASL_NOISE_SIGMA, size=spec.grid)
    asl_px = np.clip(asl_px, 0.0, 1.0).astype(np.float32)

    t1_px = np.clip(gaussian_filter(t1_map, 0.4, truncate=BLUR_TRUNCATE), 0.0, 1.0).astype(np.float32)

    pet_slice = None
    if spec.paired:
        pet_px = gaussian_filter(uptake(perf), PET_BLUR_SIGMA, truncate=BLUR_TRUNCATE)
        pet_px = np.clip(pet_px, 0.0, 1.0).astype(np.float32)
        pet_slice = Slice(pixels=pet_px, modality=Modality.PET, subject_id=spec.subject_id)

    return PhantomTriple(
        asl=Slice(pixels=asl_px, modality=Modality.ASL, subject_id=spec.subject_id),
        t1=Slice(pixels=t1_px, modality=Modality.T1, subject_id=spec.subject_id),
        pet=pet_slice,
    )


def corpus_specs(
    n_paired: int,
    n_unpaired: int,
    base_seed: int,
    grid: tuple[int, int] = (64, 64),
) -> list[PhantomSpec]:
    """Deterministic per-subject specs for a corpus.

    Odd-numbered subjects get a local activation hotspot placed on the
    nominal GM ring; even-numbered ones are resting. Both pools mix
    conditions so condition-split reports have members on each side.
    """
    if n_paired < 0 or n_unpaired < 0:
        raise InvalidSpec("subject counts must be >= 0")
    n_total = n_paired + n_unpaired
    children = np.random.SeedSequence(base_seed).spawn(n_total)
    h, w = grid
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    specs = []
    for i in range(n_total):
        subj_seed, hs_seed = (int(s) for s in children[i].generate_state(2))
        activation, hotspot = ACTIVATION_NONE, None
        if i % 2 == 1:
            hs = np.random.Generator(np.random.PCG64(hs_seed))
            angle = hs.uniform(0.0, 2 * math.pi)
            center = (
                int(round(cy + 0.78 * 0.42 * h * math.sin(angle))),
                int(round(cx + 0.78 * 0.36 * w * math.cos(angle))),
            )
            activation = ACTIVATION_HOTSPOT
            hotspot = Hotspot(center=center, radius=max(3, min(h, w) // 16), amplitude=0.5)
        specs.append(
            PhantomSpec(
                seed=subj_seed,
                grid=grid,
                activation=activation,
                hotspot=hotspot,
                paired=i < n_paired,
                subject_id=i,
            )
        )
    return specs


def generate_corpus(
    n_paired: int,
    n_unpaired: int,
    base_seed: int,
    out_dir,
    grid: tuple[int, int] = (64, 64),
) -> Manifest:
    """Write a full corpus (slice files plus manifest) and return the manifest."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for spec in corpus_specs(n_paired, n_unpaired, base_seed, grid=grid):
            triple = generate_subject(spec)
            files, checksums, ranges = {}, {}, {}
            pairs = [(Modality.ASL, triple.asl), (Modality.T1, triple.t1)]
            if triple.pet is not None:
                pairs.append((Modality.PET, triple.pet))
            for modality, sl in pairs:
                stem = f"s{spec.subject_id:04d}_{modality.value.lower()}"
                # The generator renders directly into the model range [0, 1],
                # recorded as the normalization bounds: keeps PSNR's data
                # range exactly 1 and leaves activation differences local.
                raw_name, checksum = write_slice(
                    out_dir,
                    stem,
                    sl.pixels,
                    modality=modality.value,
                    subject_id=spec.subject_id,
                    lo=0.0,
                    hi=1.0,
                )
                files[modality.value] = raw_name
                checksums[modality.value] = checksum
                ranges[modality.value] = (0.0, 1.0)
            entries.append(
                ManifestEntry(
                    subject_id=spec.subject_id,
                    paired=spec.paired,
                    condition=spec.condition,
                    files=files,
                    checksums=checksums,
                    ranges=ranges,
                )
            )
        manifest = Manifest(
            grid=grid,
            n_paired=n_paired,
            n_unpaired=n_unpaired,
            base_seed=base_seed,
            entries=tuple(entries),
            root=out_dir,
        )
        write_manifest(manifest)
    except OSError as exc:
        raise IoError(f"cannot write corpus under {out_dir}: {exc}") from exc
    return manifest
