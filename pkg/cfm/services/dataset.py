"""Dataset manifests, on-disk layout and frame access.

Layout::

    <root>/manifest.csv          id,label,family,split,source_id,path
    <root>/generator.cfg         SynthConfig used to generate the set
    <root>/videos/<id>/frame_<k>.ppm   P6, 8-bit RGB
    <root>/videos/<id>/mask_<k>.pgm    P5, 8-bit, fakes only
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from cfm.core.config import SynthConfig, build_config, dump_config, parse_pairs
from cfm.core.errors import CfmError, DatasetError

from .synthgen import SynthVideo, generate_videos, held_out_sources

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
GENERATOR_NAME = "generator.cfg"
MANIFEST_FIELDS = ("id", "label", "family", "split", "source_id", "path")
LABELS = ("real", "fake")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    label: str
    family: str
    split: str
    source_id: str
    path: str

    @property
    def group(self) -> str:
        """Id of the real video this entry belongs with."""

        return self.source_id or self.id

    @property
    def target(self) -> int:
        return 1 if self.label == "fake" else 0


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    seed: int = 0
    _by_id: Dict[str, ManifestEntry] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        by_id: Dict[str, ManifestEntry] = {}
        for entry in self.entries:
            if entry.id in by_id:
                raise DatasetError(f"duplicate video id {entry.id!r} in manifest")
            if entry.label not in LABELS:
                raise DatasetError(f"video {entry.id}: unknown label {entry.label!r}")
            if entry.split not in SPLITS:
                raise DatasetError(f"video {entry.id}: unknown split {entry.split!r}")
            by_id[entry.id] = entry
        for entry in self.entries:
            if entry.label != "fake":
                continue
            source = by_id.get(entry.source_id)
            if source is None:
                raise DatasetError(f"fake {entry.id}: source video {entry.source_id!r} missing")
            if source.split != entry.split:
                raise DatasetError(
                    f"fake {entry.id} is in split {entry.split} but its source {source.id} is in {source.split}"
                )
        self._by_id = by_id

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, video_id: object) -> bool:
        return video_id in self._by_id

    def get(self, video_id: str) -> ManifestEntry:
        try:
            return self._by_id[video_id]
        except KeyError as exc:
            raise DatasetError(f"unknown video id {video_id!r}") from exc

    def split(self, name: str, families: Optional[Iterable[str]] = None) -> List[ManifestEntry]:
        """Entries of split ``name``; fakes restricted to ``families`` when given."""

        allowed = None if families is None else set(families)
        return [
            entry
            for entry in self.entries
            if entry.split == name and (allowed is None or entry.label == "real" or entry.family in allowed)
        ]

    def counterparts(self, video_id: str, families: Optional[Iterable[str]] = None) -> List[str]:
        """Ids of the opposite-label videos sharing ``video_id``'s source."""

        entry = self.get(video_id)
        if entry.label == "fake":
            return [entry.source_id]
        allowed = None if families is None else set(families)
        return [
            other.id
            for other in self.entries
            if other.label == "fake"
            and other.source_id == entry.id
            and (allowed is None or other.family in allowed)
        ]


def build_manifest(videos: Sequence[SynthVideo], config: SynthConfig) -> DatasetManifest:
    test_groups = set(held_out_sources(config))
    entries = []
    for video in videos:
        group = video.source_id or video.id
        entries.append(
            ManifestEntry(
                id=video.id,
                label=video.label,
                family=video.family,
                split="test" if group in test_groups else "train",
                source_id=video.source_id or "",
                path=f"videos/{video.id}",
            )
        )
    return DatasetManifest(entries=entries, seed=config.seed)


# catalogs ------------------------------------------------------------------


class VideoCatalog:
    """Manifest plus frame access; subclasses decide where frames come from."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._frames: Dict[str, List[np.ndarray]] = {}

    def _load_frames(self, video_id: str) -> List[np.ndarray]:
        raise NotImplementedError

    def _load_mask(self, video_id: str, index: int) -> np.ndarray:
        raise NotImplementedError

    def frames(self, video_id: str) -> List[np.ndarray]:
        if video_id not in self._frames:
            self.manifest.get(video_id)
            self._frames[video_id] = self._load_frames(video_id)
        return self._frames[video_id]

    def frame(self, video_id: str, index: int) -> np.ndarray:
        frames = self.frames(video_id)
        if not 0 <= index < len(frames):
            raise DatasetError(f"video {video_id} has {len(frames)} frames, asked for {index}")
        return frames[index]

    def frame_count(self, video_id: str) -> int:
        return len(self.frames(video_id))

    def mask(self, video_id: str, index: int) -> Optional[np.ndarray]:
        """Ground-truth region of a fake frame; ``None`` for real videos."""

        if self.manifest.get(video_id).label == "real":
            return None
        return self._load_mask(video_id, index)

    def video(self, video_id: str) -> SynthVideo:
        entry = self.manifest.get(video_id)
        frames = self.frames(video_id)
        masks = None
        if entry.label == "fake":
            masks = [self._load_mask(video_id, k) for k in range(len(frames))]
        return SynthVideo(
            id=entry.id,
            frames=frames,
            label=entry.label,
            family=entry.family,
            masks=masks,
            source_id=entry.source_id or None,
        )


class MemoryDataset(VideoCatalog):
    """Catalog over videos already held in memory."""

    def __init__(self, manifest: DatasetManifest, videos: Mapping[str, SynthVideo]):
        super().__init__(manifest)
        self.videos = dict(videos)

    def _load_frames(self, video_id: str) -> List[np.ndarray]:
        try:
            return self.videos[video_id].frames
        except KeyError as exc:
            raise DatasetError(f"video {video_id} has no frames in memory") from exc

    def _load_mask(self, video_id: str, index: int) -> np.ndarray:
        masks = self.videos[video_id].masks
        if masks is None:
            raise DatasetError(f"fake video {video_id} has no stored masks")
        return masks[index].astype(bool)


class DatasetReader(VideoCatalog):
    """Lazy catalog over a dataset directory."""

    def __init__(self, root: Path, manifest: DatasetManifest, config: SynthConfig):
        super().__init__(manifest)
        self.root = Path(root)
        self.config = config

    def _video_dir(self, video_id: str) -> Path:
        return self.root / self.manifest.get(video_id).path

    def _load_frames(self, video_id: str) -> List[np.ndarray]:
        directory = self._video_dir(video_id)
        frames = []
        for k in range(self.config.frames):
            frames.append(read_ppm(directory / f"frame_{k}.ppm"))
        return frames

    def _load_mask(self, video_id: str, index: int) -> np.ndarray:
        return read_pgm(self._video_dir(video_id) / f"mask_{index}.pgm") > 0.5


def generate_dataset(config: SynthConfig) -> MemoryDataset:
    videos = generate_videos(config)
    manifest = build_manifest(videos, config)
    return MemoryDataset(manifest, {video.id: video for video in videos})


# PPM / PGM -----------------------------------------------------------------


def _to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: Path, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise DatasetError(f"{path}: expected an HxWx3 frame, got {image.shape}")
    Image.fromarray(_to_bytes(image)).save(path, format="PPM")


def write_pgm(path: Path, image: np.ndarray) -> None:
    if image.ndim != 2:
        raise DatasetError(f"{path}: expected an HxW map, got {image.shape}")
    Image.fromarray(_to_bytes(image)).save(path, format="PPM")


def _read_netpbm(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as handle:
            if handle.format != "PPM" or handle.mode != mode:
                raise DatasetError(f"{path}: expected a {mode} netpbm file, got {handle.format} {handle.mode}")
            handle.load()
            data = np.asarray(handle, dtype=np.uint8)
    except CfmError:
        raise
    except (OSError, SyntaxError, ValueError, UnidentifiedImageError) as exc:
        raise DatasetError(f"{path}: unreadable or truncated image ({exc})") from exc
    return data.astype(np.float64) / 255.0


def read_ppm(path: Path) -> np.ndarray:
    return _read_netpbm(path, "RGB")


def read_pgm(path: Path) -> np.ndarray:
    return _read_netpbm(path, "L")


# manifest + directory ------------------------------------------------------


def write_manifest(path: Path, manifest: DatasetManifest) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for entry in manifest.entries:
            writer.writerow([getattr(entry, name) for name in MANIFEST_FIELDS])


def read_manifest(path: Path, *, seed: int = 0) -> DatasetManifest:
    try:
        with Path(path).open(newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
                raise DatasetError(f"{path}: header must be {','.join(MANIFEST_FIELDS)}")
            entries = [ManifestEntry(**{name: row[name] for name in MANIFEST_FIELDS}) for row in reader]
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"{path}: malformed manifest row") from exc
    return DatasetManifest(entries=entries, seed=seed)


def write_dataset(manifest: DatasetManifest, root: Path, catalog: VideoCatalog, config: SynthConfig) -> Path:
    """Write ``manifest`` and every frame/mask ``catalog`` serves under ``root``."""

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for entry in manifest:
        directory = root / entry.path
        directory.mkdir(parents=True, exist_ok=True)
        for k, frame in enumerate(catalog.frames(entry.id)):
            write_ppm(directory / f"frame_{k}.ppm", frame)
            if entry.label == "fake":
                write_pgm(directory / f"mask_{k}.pgm", catalog.mask(entry.id, k).astype(np.float64))
    write_manifest(root / MANIFEST_NAME, manifest)
    (root / GENERATOR_NAME).write_text(dump_config(config), encoding="utf-8")
    logger.info("Wrote %d videos to %s", len(manifest), root)
    return root


def read_dataset(root: Path) -> DatasetReader:
    root = Path(root)
    generator = root / GENERATOR_NAME
    try:
        pairs = parse_pairs(generator.read_text(encoding="utf-8").splitlines(), source=str(generator))
    except OSError as exc:
        raise DatasetError(f"cannot read {generator}: {exc}") from exc
    config = build_config(SynthConfig, pairs)
    manifest = read_manifest(root / MANIFEST_NAME, seed=config.seed)
    return DatasetReader(root, manifest, config)


__all__ = [
    "DatasetManifest",
    "DatasetReader",
    "ManifestEntry",
    "MemoryDataset",
    "VideoCatalog",
    "build_manifest",
    "generate_dataset",
    "read_dataset",
    "read_manifest",
    "read_pgm",
    "read_ppm",
    "write_dataset",
    "write_manifest",
    "write_pgm",
    "write_ppm",
]
