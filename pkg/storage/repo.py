from __future__ import annotations

"""
Repository layer over fixture directories and run manifests.

A fixture directory holds one file group per fixture id:

    <id>.cmap      confidence map (CMAP v1)
    <id>.circle    truth circle record            (circle fixtures)
    <id>.outline   truth outline polyline         (shape fixtures)
    <id>.occl      occlusion squares, optional; marks the fixture as occluded
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from core.errors import EmptyFixtureSet, FormatError
from core.types import Circle, ConfidenceMap, Polyline
from storage import formats
from synth.confmap import Square

logger = logging.getLogger(__name__)

CMAP_SUFFIX = ".cmap"
CIRCLE_SUFFIX = ".circle"
OUTLINE_SUFFIX = ".outline"
OCCLUSION_SUFFIX = ".occl"


@dataclass(frozen=True)
class Fixture:
    fixture_id: str
    cmap_path: Path
    truth_path: Path
    occlusion_path: Optional[Path] = None

    @property
    def occluded(self) -> bool:
        return self.occlusion_path is not None

    @property
    def stratum(self) -> str:
        return "occluded" if self.occluded else "clean"


class FixtureRepo:
    def __init__(self, root) -> None:
        self._root = Path(root)

    @property
    def root(self) -> Path:
        return self._root

    # -------------------------
    # Listing
    # -------------------------
    def _fixtures(self, truth_suffix: str) -> List[Fixture]:
        if not self._root.is_dir():
            raise EmptyFixtureSet(f"{self._root} is not a directory")
        out = []
        for cmap_path in sorted(self._root.glob("*" + CMAP_SUFFIX)):
            stem = cmap_path.name[: -len(CMAP_SUFFIX)]
            truth = self._root / (stem + truth_suffix)
            if not truth.exists():
                logger.debug("skipping %s: no %s truth", stem, truth_suffix)
                continue
            occl = self._root / (stem + OCCLUSION_SUFFIX)
            out.append(Fixture(stem, cmap_path, truth, occl if occl.exists() else None))
        if not out:
            raise EmptyFixtureSet(f"no {truth_suffix} fixtures in {self._root}")
        return out

    def circle_fixtures(self) -> List[Fixture]:
        return self._fixtures(CIRCLE_SUFFIX)

    def shape_fixtures(self) -> List[Fixture]:
        return self._fixtures(OUTLINE_SUFFIX)

    # -------------------------
    # Loading
    # -------------------------
    def load_cmap(self, fixture: Fixture) -> ConfidenceMap:
        return formats.read_cmap(fixture.cmap_path)

    def load_circle(self, fixture: Fixture) -> Circle:
        return formats.read_circle_record(fixture.truth_path).circle

    def load_outline(self, fixture: Fixture) -> Polyline:
        return formats.read_polyline(fixture.truth_path)

    def load_squares(self, fixture: Fixture) -> List[Square]:
        return formats.read_squares(fixture.occlusion_path) if fixture.occluded else []

    # -------------------------
    # Writing
    # -------------------------
    def _write_common(self, fixture_id: str, cmap: ConfidenceMap,
                      squares: Optional[Sequence[Square]]) -> List[Path]:
        """Writes the map and occlusion sidecar; sidecars from an earlier fixture of this id are removed."""
        self._root.mkdir(parents=True, exist_ok=True)
        for suffix in (OCCLUSION_SUFFIX, CIRCLE_SUFFIX, OUTLINE_SUFFIX):
            stale = self._root / (fixture_id + suffix)
            if stale.exists():
                logger.debug("removing stale %s", stale)
                stale.unlink()
        written = [self._root / (fixture_id + CMAP_SUFFIX)]
        formats.write_cmap(written[0], cmap)
        if squares:
            written.append(self._root / (fixture_id + OCCLUSION_SUFFIX))
            formats.write_squares(written[-1], squares)
        return written

    def add_circle_fixture(self, fixture_id: str, cmap: ConfidenceMap, circle: Circle,
                           squares: Optional[Sequence[Square]] = None) -> List[Path]:
        """Returns the files written."""
        written = self._write_common(fixture_id, cmap, squares)
        written.append(self._root / (fixture_id + CIRCLE_SUFFIX))
        formats.write_circle_record(written[-1], formats.CircleRecord(circle))
        return written

    def add_shape_fixture(self, fixture_id: str, cmap: ConfidenceMap, outline: Polyline,
                          squares: Optional[Sequence[Square]] = None) -> List[Path]:
        written = self._write_common(fixture_id, cmap, squares)
        written.append(self._root / (fixture_id + OUTLINE_SUFFIX))
        formats.write_polyline(written[-1], outline)
        return written


# -------------------------
# Run manifests
# -------------------------
def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    command: str
    parameters: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)  # path -> sha256
    outputs: List[str] = field(default_factory=list)

    @classmethod
    def build(cls, command: str, parameters: Dict[str, Any],
              inputs: Sequence[str], outputs: Sequence[str]) -> "RunManifest":
        params = {k: _json_safe(v) for k, v in parameters.items() if v is not None}
        digests = {str(p): file_digest(p) for p in sorted(set(str(i) for i in inputs))}
        return cls(command, params, digests, sorted(str(o) for o in outputs))

    def verify(self) -> bool:
        """True when every recorded input still hashes to its digest."""
        return all(Path(p).exists() and file_digest(p) == d for p, d in self.inputs.items())

    def as_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=4, sort_keys=True) + "\n")
        logger.info("wrote manifest %s", path)

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON ({e})")
        if not isinstance(data, dict) or "command" not in data:
            raise FormatError(f"{path}: not a run manifest")
        return cls(data["command"], data.get("parameters", {}), data.get("inputs", {}), data.get("outputs", []))


def _json_safe(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)):
        return value
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if hasattr(value, "value"):
        return _json_safe(value.value)
    return str(value)
