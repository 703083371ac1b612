"""Corpus loading, intensity normalization, and batch assembly.

``load_manifest`` verifies checksums and materializes every slice in
memory (desk-scale corpora are small). ``batch_stream`` feeds the
trainer through a bounded queue filled by a daemon producer thread;
batch order is fixed by the seeded epoch permutations, not by queue
timing, so streams replay identically for a given seed.
"""

from __future__ import annotations

import enum
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import DegenerateRange, EmptyPool, ShapeMismatch
from .sliceio import Manifest, read_manifest, read_slice_raw

DEFAULT_QUEUE_DEPTH = 32


class Modality(str, enum.Enum):
    ASL = "ASL"
    T1 = "T1"
    PET = "PET"


@dataclass(frozen=True)
class Slice:
    """A single 2D image: normalized pixels plus modality and subject tags."""

    pixels: np.ndarray  # (H, W) float32 in [0, 1]
    modality: Modality
    subject_id: int

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ShapeMismatch(f"slice pixels must be 2D, got {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("slice contains non-finite values")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("slice values outside [0, 1]; normalize first")


def normalize(pixels: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Map raw intensities to [0, 1] via ``clip((x - lo) / (hi - lo), 0, 1)``."""
    if not hi > lo:
        raise DegenerateRange(f"hi ({hi}) must exceed lo ({lo})")
    x = np.asarray(pixels, dtype=np.float32)
    return np.clip((x - lo) / np.float32(hi - lo), 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: int
    paired: bool
    condition: str
    slices: dict  # Modality -> Slice


@dataclass
class Batch:
    """A stacked training batch. ``pet`` is present exactly for paired batches."""

    asl: torch.Tensor             # (B, H, W) float32
    t1: torch.Tensor              # (B, H, W) float32
    pet: torch.Tensor | None      # (B, H, W) float32 or None
    paired: bool
    subject_ids: list

    def __post_init__(self):
        if self.asl.shape[0] < 1:
            raise ShapeMismatch("empty batch")
        if self.t1.shape != self.asl.shape:
            raise ShapeMismatch("t1/asl shape mismatch")
        if self.paired != (self.pet is not None):
            raise ShapeMismatch("paired batches must carry pet; unpaired must not")
        if self.pet is not None and self.pet.shape != self.asl.shape:
            raise ShapeMismatch("pet/asl shape mismatch")
        if len(self.subject_ids) != self.asl.shape[0]:
            raise ShapeMismatch("subject_ids length mismatch")


class DatasetHandle:
    """Immutable view of a loaded corpus, split by pairing flag."""

    def __init__(self, manifest: Manifest, subjects: dict):
        self.manifest = manifest
        self.grid = manifest.grid
        self._subjects = dict(subjects)
        self.paired_ids = sorted(s for s, r in subjects.items() if r.paired)
        self.unpaired_ids = sorted(s for s, r in subjects.items() if not r.paired)

    def __len__(self) -> int:
        return len(self._subjects)

    def subject(self, subject_id: int) -> SubjectRecord:
        return self._subjects[subject_id]

    def subjects(self, pairing: str | None = None) -> list:
        if pairing == "paired":
            ids = self.paired_ids
        elif pairing == "unpaired":
            ids = self.unpaired_ids
        else:
            ids = sorted(self._subjects)
        return [self._subjects[i] for i in ids]

    def subset(self, subject_ids) -> "DatasetHandle":
        keep = {s: self._subjects[s] for s in subject_ids}
        return DatasetHandle(self.manifest, keep)


def load_manifest(path) -> DatasetHandle:
    """Load a corpus manifest, verifying file presence and checksums."""
    manifest = read_manifest(Path(path))
    h, w = manifest.grid
    subjects = {}
    for entry in manifest.entries:
        slices = {}
        for modality_name, rel in entry.files.items():
            raw = read_slice_raw(
                manifest.root / rel, h, w, expected_checksum=entry.checksums.get(modality_name)
            )
            lo, hi = entry.ranges[modality_name]
            modality = Modality(modality_name)
            slices[modality] = Slice(
                pixels=normalize(raw, lo, hi), modality=modality, subject_id=entry.subject_id
            )
        subjects[entry.subject_id] = SubjectRecord(
            subject_id=entry.subject_id,
            paired=entry.paired,
            condition=entry.condition,
            slices=slices,
        )
    return DatasetHandle(manifest, subjects)


def _assemble(records: list, paired: bool) -> Batch:
    asl = torch.from_numpy(np.stack([r.slices[Modality.ASL].pixels for r in records]))
    t1 = torch.from_numpy(np.stack([r.slices[Modality.T1].pixels for r in records]))
    pet = None
    if paired:
        pet = torch.from_numpy(np.stack([r.slices[Modality.PET].pixels for r in records]))
    return Batch(asl=asl, t1=t1, pet=pet, paired=paired, subject_ids=[r.subject_id for r in records])


class BatchStream:
    """Endless shuffled batch iterator backed by a bounded producer queue.

    Each epoch is a fresh seeded permutation of the pool's subjects;
    remainder batches smaller than ``batch_size`` are dropped so shapes
    stay static. Close the stream (or let the daemon thread die with the
    process) when done.
    """

    def __init__(
        self,
        handle: DatasetHandle,
        batch_size: int,
        pairing: str,
        seed: int,
        queue_depth: int = DEFAULT_QUEUE_DEPTH,
    ):
        if pairing not in ("paired", "unpaired"):
            raise ValueError(f"pairing must be 'paired' or 'unpaired', got {pairing!r}")
        ids = handle.paired_ids if pairing == "paired" else handle.unpaired_ids
        if not ids:
            raise EmptyPool(f"no {pairing} subjects in handle")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self._handle = handle
        self._ids = np.asarray(ids)
        self._batch_size = batch_size
        self._paired = pairing == "paired"
        self._seed = seed
        self._queue: queue.Queue = queue.Queue(maxsize=queue_depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, name="batch-producer", daemon=True)
        self._thread.start()

    def _produce(self):
        rng = np.random.Generator(np.random.PCG64(self._seed))
        bs = self._batch_size
        while not self._stop.is_set():
            perm = rng.permutation(self._ids)
            for start in range(0, len(perm) - bs + 1, bs):
                chunk = perm[start : start + bs]
                batch = _assemble([self._handle.subject(int(s)) for s in chunk], self._paired)
                while not self._stop.is_set():
                    try:
                        self._queue.put(batch, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self._stop.is_set():
                    return

    def __iter__(self):
        return self

    def __next__(self) -> Batch:
        return self._queue.get()

    def skip(self, n_batches: int) -> None:
        """Discard the next n batches (used to fast-forward on resume)."""
        for _ in range(n_batches):
            next(self)

    def close(self):
        self._stop.set()
        try:
            while True:
                self._queue.get_nowait()
        except queue.Empty:
            pass
        self._thread.join(timeout=2.0)


def batch_stream(
    handle: DatasetHandle,
    batch_size: int,
    pairing: str,
    seed: int,
    queue_depth: int = DEFAULT_QUEUE_DEPTH,
) -> BatchStream:
    return BatchStream(handle, batch_size, pairing, seed, queue_depth=queue_depth)
