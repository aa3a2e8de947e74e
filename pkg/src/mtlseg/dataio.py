"""Binary PPM/PGM image IO and the on-disk dataset layout.

A sample is stored as ``<stem>.ppm`` (P6 image), one ``<stem>.task<k>.pgm``
per task (P5, values exactly 0 or 255) and ``<stem>.meta`` (UTF-8
``key=value`` lines). A dataset directory holds samples plus
``manifest.txt``: one ``task <name> [thin]`` line per task, then one stem
per line; ``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError


def _write_netpbm(path, magic: bytes, array: np.ndarray):
    h, w = array.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(array, dtype=np.uint8).tobytes())


def write_ppm(path, rgb: np.ndarray):
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError(f"PPM needs an h×w×3 array, got {rgb.shape}")
    _write_netpbm(path, b"P6", rgb)


def write_pgm(path, gray: np.ndarray):
    if gray.ndim != 2:
        raise FormatError(f"PGM needs an h×w array, got {gray.shape}")
    _write_netpbm(path, b"P5", gray)


def _read_netpbm(path, expected_magic: bytes) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] != expected_magic:
        raise FormatError(f"{path}: expected {expected_magic.decode()} magic", offset=0)
    pos = 2

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(blob):
            ch = blob[pos : pos + 1]
            if ch == b"#":
                while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        if pos >= len(blob):
            raise FormatError(f"{path}: truncated header", offset=pos)
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        return blob[start:pos]

    fields = []
    for _ in range(3):
        token = next_token()
        if not token.isdigit():
            raise FormatError(f"{path}: bad header token {token!r}", offset=pos - len(token))
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}", offset=pos)
    pos += 1  # the single whitespace byte before the payload
    channels = 3 if expected_magic == b"P6" else 1
    need = width * height * channels
    payload = blob[pos : pos + need]
    if len(payload) != need:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {need}", offset=pos)
    data = np.frombuffer(payload, dtype=np.uint8)
    if channels == 3:
        return data.reshape(height, width, 3).copy()
    return data.reshape(height, width).copy()


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, b"P6")


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(path, b"P5")


@dataclass
class Sample:
    """One RGB image with a binary mask per task."""

    image: np.ndarray  # (h, w, 3) uint8
    masks: tuple[np.ndarray, ...]  # each (h, w) uint8 in {0, 1}
    tasks: tuple[str, ...]
    meta: dict[str, str] = field(default_factory=dict)

    def validate(self):
        h, w, _ = self.image.shape
        if len(self.masks) != len(self.tasks):
            raise FormatError(f"{len(self.masks)} masks for {len(self.tasks)} tasks")
        for name, m in zip(self.tasks, self.masks):
            if m.shape != (h, w):
                raise FormatError(f"mask '{name}' shape {m.shape} != image {h}x{w}")
            bad = ~np.isin(m, (0, 1))
            if bad.any():
                raise FormatError(f"mask '{name}' holds non-binary values")


def write_sample(directory, stem: str, sample: Sample):
    sample.validate()
    directory = Path(directory)
    write_ppm(directory / f"{stem}.ppm", sample.image)
    for k, mask in enumerate(sample.masks, start=1):
        write_pgm(directory / f"{stem}.task{k}.pgm", mask * 255)
    lines = [f"{key}={value}" for key, value in sample.meta.items()]
    (directory / f"{stem}.meta").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sample(directory, stem: str, tasks: tuple[str, ...]) -> Sample:
    directory = Path(directory)
    image = read_ppm(directory / f"{stem}.ppm")
    masks = []
    for k in range(1, len(tasks) + 1):
        mask_path = directory / f"{stem}.task{k}.pgm"
        if not mask_path.exists():
            raise FormatError(f"missing mask file {mask_path}")
        raw = read_pgm(mask_path)
        bad = ~np.isin(raw, (0, 255))
        if bad.any():
            offset = int(np.flatnonzero(bad.ravel())[0])
            raise FormatError(f"{mask_path}: mask value {int(raw.ravel()[offset])} is not 0/255", offset=offset)
        masks.append((raw // 255).astype(np.uint8))
    meta = {}
    meta_path = directory / f"{stem}.meta"
    if meta_path.exists():
        for line in meta_path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#") and "=" in line:
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
    sample = Sample(image, tuple(masks), tuple(tasks), meta)
    sample.validate()
    return sample


@dataclass
class Dataset:
    root: Path
    tasks: tuple[str, ...]
    thin: tuple[bool, ...]
    stems: tuple[str, ...]

    def __len__(self):
        return len(self.stems)

    def load(self, index: int) -> Sample:
        return read_sample(self.root, self.stems[index], self.tasks)

    def samples(self):
        for i in range(len(self.stems)):
            yield self.load(i)


def write_manifest(directory, tasks, thin, stems):
    lines = ["# mtlseg dataset manifest"]
    for name, is_thin in zip(tasks, thin):
        lines.append(f"task {name} thin" if is_thin else f"task {name}")
    lines.extend(stems)
    (Path(directory) / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise FormatError(f"no manifest.txt in {directory}")
    tasks: list[str] = []
    thin: list[bool] = []
    stems: list[str] = []
    for raw in manifest.read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "task":
            if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] != "thin"):
                raise FormatError(f"bad task line in manifest: {raw!r}")
            if stems:
                raise FormatError("task lines must precede stems in manifest")
            tasks.append(parts[1])
            thin.append(len(parts) == 3)
        elif len(parts) == 1:
            stems.append(parts[0])
        else:
            raise FormatError(f"bad manifest line: {raw!r}")
    if not tasks:
        raise FormatError("manifest declares no tasks")
    if not stems:
        raise FormatError("manifest lists no samples")
    return Dataset(directory, tuple(tasks), tuple(thin), tuple(stems))
