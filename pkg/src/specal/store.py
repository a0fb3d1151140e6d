"""On-disk artifact directory: a JSON manifest plus raw binary arrays.

Arrays are stored as little-endian IEEE-754 float64, row-major, one file per
array under ``arrays/``.  The manifest records name, shape, byte length and
CRC32 for each, and both are checked on load.  All writes go to a temporary
file that is then renamed into place.
"""

from __future__ import annotations

import json
import os
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .core import IntegrityError, StateError
from .emulator import EmulatorBundle, GpHyperParams, WeightEmulator
from .reduction import Basis, StandardizationStats
from .core import WavelengthGrid

SCHEMA_VERSION = 1
_DTYPE = np.dtype("<f8")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class ArtifactStore:
    """A pipeline output directory with ``manifest.json`` at its root."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.json"
        self.manifest = self._load_manifest()

    def _load_manifest(self) -> dict:
        if not self.manifest_path.exists():
            return {"schema_version": SCHEMA_VERSION, "stages": {}, "arrays": {}}
        try:
            manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"{self.manifest_path}: unreadable manifest ({exc})") from exc
        version = manifest.get("schema_version")
        if version != SCHEMA_VERSION:
            raise IntegrityError(
                f"{self.manifest_path}: schema version {version!r}, expected {SCHEMA_VERSION}"
            )
        return manifest

    def save_manifest(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.manifest_path, dumps_json(self.manifest))

    # -- arrays ---------------------------------------------------------------

    def put_array(self, name: str, array) -> None:
        a = np.ascontiguousarray(np.asarray(array, dtype=_DTYPE))
        data = a.tobytes(order="C")
        rel = f"arrays/{name}.f8"
        atomic_write_bytes(self.root / rel, data)
        self.manifest["arrays"][name] = {
            "file": rel,
            "shape": list(a.shape),
            "nbytes": len(data),
            "crc32": zlib.crc32(data),
        }

    def has_array(self, name: str) -> bool:
        return name in self.manifest["arrays"]

    def get_array(self, name: str) -> np.ndarray:
        entry = self.manifest["arrays"].get(name)
        if entry is None:
            raise StateError(f"array {name!r} is not in {self.manifest_path}")
        path = self.root / entry["file"]
        try:
            data = path.read_bytes()
        except FileNotFoundError as exc:
            raise IntegrityError(f"{path}: listed in the manifest but missing") from exc
        if len(data) != entry["nbytes"]:
            raise IntegrityError(f"{path}: {len(data)} bytes, manifest says {entry['nbytes']}")
        if zlib.crc32(data) != entry["crc32"]:
            raise IntegrityError(f"{path}: CRC32 mismatch")
        return np.frombuffer(data, dtype=_DTYPE).reshape(entry["shape"]).copy()

    # -- stages ---------------------------------------------------------------

    def stage(self, name: str) -> dict | None:
        return self.manifest["stages"].get(name)

    def record_stage(self, name: str, info: dict) -> None:
        self.manifest["stages"][name] = info
        self.save_manifest()


def save_bundle(bundle: EmulatorBundle, store: ArtifactStore, prefix: str = "emulator") -> dict:
    """Write an emulator bundle; hyperparameters go in the returned manifest entry."""
    basis, stats = bundle.basis, bundle.stats
    store.put_array(f"{prefix}/K", basis.K)
    store.put_array(f"{prefix}/W", basis.W)
    store.put_array(f"{prefix}/singular_values", basis.singular_values)
    store.put_array(f"{prefix}/mu", stats.mean)
    store.put_array(f"{prefix}/wavelength", stats.grid.values)
    store.put_array(f"{prefix}/inputs", bundle.inputs)
    hypers = []
    for em in bundle.emulators:
        store.put_array(f"{prefix}/chol_{em.index:02d}", em.chol)
        hypers.append(
            {
                "index": em.index,
                "length_scales": [float(v) for v in em.hyper.length_scales],
                "variance": em.hyper.variance,
                "nugget": em.hyper.nugget,
            }
        )
    entry = {
        "q": basis.q,
        "m": basis.m,
        "sigma": stats.scale,
        "hyperparameters": hypers,
        "provenance": bundle.provenance,
    }
    store.manifest[prefix] = entry
    store.save_manifest()
    return entry


def load_bundle(store: ArtifactStore, prefix: str = "emulator") -> EmulatorBundle:
    entry = store.manifest.get(prefix)
    if entry is None:
        raise StateError(f"no emulator bundle in {store.root}; run `specal fit` first")
    basis = Basis(
        K=store.get_array(f"{prefix}/K"),
        W=store.get_array(f"{prefix}/W"),
        singular_values=store.get_array(f"{prefix}/singular_values"),
        m=int(entry["m"]),
    )
    stats = StandardizationStats(
        store.get_array(f"{prefix}/mu"),
        entry["sigma"],
        WavelengthGrid(store.get_array(f"{prefix}/wavelength")),
    )
    inputs = store.get_array(f"{prefix}/inputs")
    emulators = []
    for h in entry["hyperparameters"]:
        i = int(h["index"])
        hyper = GpHyperParams(np.array(h["length_scales"]), h["variance"], h["nugget"])
        em = WeightEmulator(i, inputs, basis.W[i])
        em.condition(hyper, chol=store.get_array(f"{prefix}/chol_{i:02d}"))
        emulators.append(em)
    return EmulatorBundle(emulators, basis, stats, dict(entry.get("provenance", {})))
