"""Extraction manifest: which images to process and their metadata.

A manifest is a UTF-8 JSON document:

    {
      "season_start": "2024-06-01",
      "span_days": 108,
      "class_names": ["A", "B", ...],
      "images": [
        {
          "path": "region3/2024-06-12.jpg",
          "date": "2024-06-12",
          "region_id": "r3",
          "variety": "A",
          "fungicide": false,
          "berries": [                      # optional, berry scale
            {"berry_id": "r3-b1", "box": [x0, y0, x1, y1], "rot": false}
          ]
        },
        ...
      ]
    }

Relative image paths resolve against the manifest's directory.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path


class ManifestError(ValueError):
    """The manifest is malformed or references missing data."""


@dataclass
class BerryCrop:
    berry_id: str
    box: tuple[int, int, int, int]  # x0, y0, x1, y1 pixel bounds
    rot: bool


@dataclass
class ImageEntry:
    path: Path
    day_index: float
    region_id: str
    variety_id: int
    fungicide: bool
    berries: list[BerryCrop] = field(default_factory=list)


@dataclass
class ExtractionManifest:
    span_days: float
    class_names: list[str]
    images: list[ImageEntry]

    @property
    def has_berries(self) -> bool:
        return any(img.berries for img in self.images)


def _parse_date(raw: str, what: str) -> datetime.date:
    try:
        return datetime.date.fromisoformat(raw)
    except ValueError as exc:
        raise ManifestError(f"{what}: bad date {raw!r}: {exc}") from exc


def load_manifest(path: Path) -> ExtractionManifest:
    """Parse and validate a manifest file.

    Fails hard, listing every problem at once, if any image lacks its
    metadata, falls outside the season, or does not exist on disk.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc

    problems: list[str] = []
    for key in ("season_start", "span_days", "class_names", "images"):
        if key not in doc:
            problems.append(f"missing top-level key {key!r}")
    if problems:
        raise ManifestError("; ".join(problems))

    season_start = _parse_date(str(doc["season_start"]), "season_start")
    span_days = float(doc["span_days"])
    if span_days <= 0:
        raise ManifestError(f"span_days must be > 0, got {span_days}")
    class_names = [str(c) for c in doc["class_names"]]
    class_index = {name: i for i, name in enumerate(class_names)}

    images: list[ImageEntry] = []
    base = path.parent
    for i, entry in enumerate(doc["images"]):
        label = entry.get("path", f"images[{i}]")
        missing = [k for k in ("path", "date", "region_id", "variety") if k not in entry]
        if "fungicide" not in entry:
            missing.append("fungicide")
        if missing:
            problems.append(f"{label}: missing {', '.join(missing)}")
            continue
        img_path = base / entry["path"]
        if not img_path.exists():
            problems.append(f"{label}: image file not found")
            continue
        if entry["variety"] not in class_index:
            problems.append(f"{label}: unknown variety {entry['variety']!r}")
            continue
        date = _parse_date(str(entry["date"]), label)
        day_index = float((date - season_start).days)
        if not 0 <= day_index <= span_days:
            problems.append(
                f"{label}: date {entry['date']} is {day_index:g} days from "
                f"season start, outside [0, {span_days:g}]"
            )
            continue
        berries = []
        for j, berry in enumerate(entry.get("berries", [])):
            if "berry_id" not in berry or "box" not in berry or "rot" not in berry:
                problems.append(f"{label}: berries[{j}] needs berry_id, box, rot")
                continue
            box = tuple(int(v) for v in berry["box"])
            if len(box) != 4 or box[0] >= box[2] or box[1] >= box[3]:
                problems.append(f"{label}: berries[{j}] has a degenerate box")
                continue
            berries.append(BerryCrop(str(berry["berry_id"]), box, bool(berry["rot"])))
        images.append(
            ImageEntry(
                path=img_path,
                day_index=day_index,
                region_id=str(entry["region_id"]),
                variety_id=class_index[entry["variety"]],
                fungicide=bool(entry["fungicide"]),
                berries=berries,
            )
        )

    if problems:
        raise ManifestError(
            f"manifest {path} has {len(problems)} problem(s): " + "; ".join(problems)
        )
    if not images:
        raise ManifestError(f"manifest {path} lists no images")
    return ExtractionManifest(span_days=span_days, class_names=class_names, images=images)
