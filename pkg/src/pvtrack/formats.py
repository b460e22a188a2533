"""Raster and JSON document I/O.

Images go through Pillow: PGM for thermal frames, PPM or PNG for RGB.
Layouts, missions and tuned thresholds are small JSON documents, each with
a ``schema`` tag carrying a version number.
"""

from __future__ import annotations

import json
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError
from .mission import Label, Waypoint, validate_mission
from .simulator import GroundModel, PlantLayout, PlantRow
from .validation import check_rgb_image, check_thermal_image

LAYOUT_SCHEMA = "pvtrack.layout/1"
MISSION_SCHEMA = "pvtrack.mission/1"


def read_image(path) -> np.ndarray:
    """Load a raster as uint8: ``(H, W)`` for greyscale, ``(H, W, 3)`` otherwise."""
    with Image.open(path) as im:
        if im.mode in ("L", "I", "I;16", "F"):
            arr = np.asarray(im)
            if arr.dtype != np.uint8:
                raise ConfigError(f"{path}: only 8-bit greyscale images are supported")
            return arr
        return np.asarray(im.convert("RGB"))


def write_image(path, img):
    img = np.asarray(img)
    arr = check_thermal_image(img) if img.ndim == 2 else check_rgb_image(img)
    Image.fromarray(arr).save(path)


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _check_schema(doc, expected):
    if not isinstance(doc, dict):
        raise ConfigError(f"expected a JSON object for {expected}")
    found = doc.get("schema", expected)
    if found != expected:
        raise ConfigError(f"unsupported schema {found!r}, expected {expected!r}")


def _pick(cls, data, where):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names - {"schema"}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return {k: v for k, v in data.items() if k in names}


def layout_to_dict(layout: PlantLayout) -> dict:
    doc = {"schema": LAYOUT_SCHEMA}
    for f in fields(PlantLayout):
        value = getattr(layout, f.name)
        if f.name == "rows":
            value = [asdict(r) for r in value]
        elif f.name == "ground":
            value = asdict(value)
        doc[f.name] = value
    return json.loads(json.dumps(doc))


def layout_from_dict(doc: dict) -> PlantLayout:
    _check_schema(doc, LAYOUT_SCHEMA)
    kw = _pick(PlantLayout, doc, "layout")
    try:
        kw["rows"] = tuple(
            PlantRow(**{k: tuple(v) if isinstance(v, list) else v for k, v in _pick(PlantRow, r, "row").items()})
            for r in kw.get("rows", ())
        )
        if "ground" in kw:
            kw["ground"] = GroundModel(
                **{k: tuple(v) if isinstance(v, list) else v for k, v in _pick(GroundModel, kw["ground"], "ground").items()}
            )
        for key in ("panel_hue", "panel_saturation", "panel_value"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return PlantLayout(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid layout: {exc}") from exc


def mission_to_dict(waypoints) -> dict:
    return {
        "schema": MISSION_SCHEMA,
        "waypoints": [{"x": w.x, "y": w.y, "label": w.label.value, "row": w.row} for w in waypoints],
    }


def mission_from_dict(doc: dict) -> list[Waypoint]:
    """Parse and validate a waypoint list; raises MalformedMission on rule violations."""
    _check_schema(doc, MISSION_SCHEMA)
    try:
        wps = [Waypoint(float(w["x"]), float(w["y"]), Label(w["label"]), int(w.get("row", i // 2)))
               for i, w in enumerate(doc["waypoints"])]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid mission: {exc}") from exc
    validate_mission(wps)
    return wps
