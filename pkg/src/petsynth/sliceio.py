"""On-disk formats: raw float32 slice files with text sidecar headers,
and the line-delimited corpus manifest.

A slice is stored as ``<stem>.raw`` (little-endian float32, row-major)
next to ``<stem>.hdr`` (text header). The manifest is JSON-lines: one
header record followed by one record per subject. Both formats carry a
magic string and version so incompatible files are rejected early.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch, MissingFile, VersionMismatch

SLICE_MAGIC = "PSSLICE"
SLICE_VERSION = 1
MANIFEST_MAGIC = "PSCORPUS"
MANIFEST_VERSION = 1


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def write_slice(
    directory: Path,
    stem: str,
    pixels: np.ndarray,
    *,
    modality: str,
    subject_id: int,
    lo: float,
    hi: float,
) -> tuple[str, str]:
    """Write <stem>.raw + <stem>.hdr; returns (relative raw path, checksum)."""
    directory = Path(directory)
    arr = np.ascontiguousarray(pixels, dtype="<f4")
    raw_name = f"{stem}.raw"
    raw_bytes = arr.tobytes()
    checksum = sha256_bytes(raw_bytes)
    (directory / raw_name).write_bytes(raw_bytes)
    header = "\n".join(
        [
            f"{SLICE_MAGIC} {SLICE_VERSION}",
            f"height: {arr.shape[0]}",
            f"width: {arr.shape[1]}",
            "dtype: float32-le",
            f"modality: {modality}",
            f"subject: {subject_id}",
            f"lo: {lo!r}",
            f"hi: {hi!r}",
            f"checksum: {checksum}",
        ]
    )
    (directory / f"{stem}.hdr").write_text(header + "\n")
    return raw_name, checksum


def read_slice_header(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    lines = path.read_text().splitlines()
    if not lines:
        raise VersionMismatch(f"{path}: empty header")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != SLICE_MAGIC or int(magic[1]) != SLICE_VERSION:
        raise VersionMismatch(f"{path}: expected '{SLICE_MAGIC} {SLICE_VERSION}', got {lines[0]!r}")
    fields: dict = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        fields[key.strip()] = value.strip()
    return {
        "height": int(fields["height"]),
        "width": int(fields["width"]),
        "modality": fields["modality"],
        "subject": int(fields["subject"]),
        "lo": float(fields["lo"]),
        "hi": float(fields["hi"]),
        "checksum": fields["checksum"],
    }


def read_slice_raw(path: Path, height: int, width: int, expected_checksum: str | None = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    raw = path.read_bytes()
    if expected_checksum is not None and sha256_bytes(raw) != expected_checksum:
        raise ChecksumMismatch(str(path))
    arr = np.frombuffer(raw, dtype="<f4")
    if arr.size != height * width:
        raise ChecksumMismatch(f"{path}: size {arr.size} != {height}x{width}")
    return arr.reshape(height, width).copy()


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: int
    paired: bool
    condition: str  # "resting" | "activated"
    files: dict = field(default_factory=dict)      # modality -> relative raw path
    checksums: dict = field(default_factory=dict)  # modality -> sha256 of raw bytes
    ranges: dict = field(default_factory=dict)     # modality -> (lo, hi)


@dataclass(frozen=True)
class Manifest:
    grid: tuple[int, int]
    n_paired: int
    n_unpaired: int
    base_seed: int
    entries: tuple[ManifestEntry, ...]
    root: Path

    @property
    def path(self) -> Path:
        return self.root / "manifest.jsonl"


def write_manifest(manifest: Manifest) -> Path:
    lines = [
        json.dumps(
            {
                "magic": MANIFEST_MAGIC,
                "version": MANIFEST_VERSION,
                "grid": list(manifest.grid),
                "n_paired": manifest.n_paired,
                "n_unpaired": manifest.n_unpaired,
                "base_seed": manifest.base_seed,
            },
            sort_keys=True,
        )
    ]
    for e in manifest.entries:
        lines.append(
            json.dumps(
                {
                    "subject_id": e.subject_id,
                    "paired": e.paired,
                    "condition": e.condition,
                    "files": e.files,
                    "checksums": e.checksums,
                    "ranges": {k: list(v) for k, v in e.ranges.items()},
                },
                sort_keys=True,
            )
        )
    manifest.path.write_text("\n".join(lines) + "\n")
    return manifest.path


def read_manifest(path: Path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise VersionMismatch(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("magic") != MANIFEST_MAGIC or header.get("version") != MANIFEST_VERSION:
        raise VersionMismatch(
            f"{path}: expected {MANIFEST_MAGIC} v{MANIFEST_VERSION}, "
            f"got {header.get('magic')} v{header.get('version')}"
        )
    entries = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        entries.append(
            ManifestEntry(
                subject_id=int(rec["subject_id"]),
                paired=bool(rec["paired"]),
                condition=rec["condition"],
                files=rec["files"],
                checksums=rec["checksums"],
                ranges={k: tuple(v) for k, v in rec["ranges"].items()},
            )
        )
    return Manifest(
        grid=tuple(header["grid"]),
        n_paired=int(header["n_paired"]),
        n_unpaired=int(header["n_unpaired"]),
        base_seed=int(header["base_seed"]),
        entries=tuple(entries),
        root=path.parent,
    )


def manifest_digest(path: Path) -> str:
    """Digest of the manifest file itself; identifies a corpus."""
    return sha256_file(Path(path))
