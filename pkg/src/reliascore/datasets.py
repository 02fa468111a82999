"""Dataset plumbing: manifest files and the two-folder ultrasound layout.

A manifest is newline-delimited JSON, one object per sample:
    {"id": "benign/a", "image": "benign/a.png", "mask": "benign/a_mask.png",
     "label": 0}
Paths are stored relative to the manifest file when possible, resolved
against its directory on load.

ingest_busi understands the common breast-ultrasound folder layout: class
subdirectories benign/ and malignant/ holding images next to their
"<stem>_mask" annotation files, with a normal/ directory that carries no
masks and is skipped.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError
from .images import load_mask, save_mask

log = logging.getLogger(__name__)

CLASS_DIRS = {"benign": 0, "malignant": 1}  # malignant is the positive class
SKIPPED_DIRS = ("normal",)
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

_MASK_TAIL = re.compile(r"_mask(_\d+)?$")


@dataclass(frozen=True)
class ManifestEntry:
    """One scoreable sample: an image, its annotation mask, and the label."""

    sample_id: str
    image_path: Path
    mask_path: Path
    label: int

    def __post_init__(self):
        if self.label < 0:
            raise ValueError(f"label must be >= 0, got {self.label}")
        if not self.sample_id:
            raise ValueError("sample_id must be non-empty")


def _is_mask_file(path: Path) -> bool:
    return _MASK_TAIL.search(path.stem) is not None


def _mask_siblings(image: Path) -> list[Path]:
    """All '<stem>_mask' / '<stem>_mask_<n>' files next to the image, sorted."""
    out = []
    for candidate in image.parent.iterdir():
        if not candidate.is_file() or candidate.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        rest = candidate.stem[len(image.stem) :]
        if candidate.stem.startswith(image.stem) and _MASK_TAIL.fullmatch(rest):
            out.append(candidate)
    return sorted(out)


def ingest_busi(
    root: str | Path, union_dir: str | Path | None = None
) -> tuple[list[ManifestEntry], list[Path]]:
    """Scan a two-class ultrasound folder tree into manifest entries.

    Returns (entries, skipped) where skipped lists image files that had no
    mask sibling. Images with several mask files get a pixelwise-OR union
    mask, written under ``union_dir`` (default: <root>/_derived_masks).
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root is not a directory: {root}")
    entries: list[ManifestEntry] = []
    skipped: list[Path] = []
    union_dir = Path(union_dir) if union_dir is not None else root / "_derived_masks"

    for category in sorted(CLASS_DIRS):
        cat_dir = root / category
        if not cat_dir.is_dir():
            continue
        label = CLASS_DIRS[category]
        images = sorted(
            p
            for p in cat_dir.iterdir()
            if p.is_file()
            and p.suffix.lower() in IMAGE_SUFFIXES
            and not _is_mask_file(p)
        )
        for image in images:
            masks = _mask_siblings(image)
            if not masks:
                skipped.append(image)
                continue
            if len(masks) == 1:
                mask_path = masks[0]
            else:
                union = load_mask(masks[0])
                for extra in masks[1:]:
                    union = union | load_mask(extra)
                union_dir.mkdir(parents=True, exist_ok=True)
                mask_path = union_dir / f"{category}_{image.stem}_union.png"
                save_mask(union, mask_path)
            entries.append(
                ManifestEntry(
                    sample_id=f"{category}/{image.stem}",
                    image_path=image,
                    mask_path=mask_path,
                    label=label,
                )
            )
    if not entries:
        log.warning("no image/mask pairs found under %s", root)
    if skipped:
        log.warning("%d image(s) without masks were skipped", len(skipped))
    return entries, skipped


def save_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    """Write newline-delimited JSON, paths relative to the manifest when possible."""
    path = Path(path)
    base = path.resolve().parent

    def rel(p: Path) -> str:
        try:
            return str(p.resolve().relative_to(base))
        except ValueError:
            return str(p.resolve())

    lines = []
    for e in entries:
        lines.append(
            json.dumps(
                {
                    "id": e.sample_id,
                    "image": rel(e.image_path),
                    "mask": rel(e.mask_path),
                    "label": e.label,
                },
                separators=(", ", ": "),
            )
        )
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a manifest written by save_manifest (or by hand)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise DataError(f"manifest not found: {path}") from e
    base = path.resolve().parent
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            entry = ManifestEntry(
                sample_id=str(obj.get("id") or Path(obj["image"]).stem),
                image_path=base / obj["image"],
                mask_path=base / obj["mask"],
                label=int(obj["label"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}:{lineno}: bad manifest line: {e}") from e
        entries.append(entry)
    return entries


def check_files_exist(entries: list[ManifestEntry]) -> None:
    """Fail fast if any referenced image or mask is missing."""
    for e in entries:
        for p in (e.image_path, e.mask_path):
            if not Path(p).is_file():
                raise DataError(f"sample {e.sample_id}: file not found: {p}")


__all__ = [
    "ManifestEntry",
    "ingest_busi",
    "save_manifest",
    "load_manifest",
    "check_files_exist",
    "CLASS_DIRS",
]
