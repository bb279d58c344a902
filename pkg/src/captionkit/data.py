"""ARCH-style bag manifests, binary PPM images, and synthetic fixtures."""

from __future__ import annotations

import itertools
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, EmptyDatasetError, FormatError, UsageError

SOURCES = ("pubmed", "books")


@dataclass(frozen=True)
class Bag:
    id: str
    source: str
    images: tuple[str, ...]
    captions: tuple[str, ...]


@dataclass
class Manifest:
    bags: list[Bag]
    root: Path = field(default_factory=Path)
    dropped_count: int = 0

    def image_path(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.root / p

    def to_json(self) -> dict:
        return {
            "bags": [
                {"id": b.id, "source": b.source, "images": list(b.images), "captions": list(b.captions)}
                for b in self.bags
            ]
        }


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def _parse_bag(raw, i: int) -> Bag:
    if not isinstance(raw, dict):
        raise FormatError(f"bag {i}: expected an object")
    missing = {"id", "source", "images", "captions"} - raw.keys()
    if missing:
        raise FormatError(f"bag {i}: missing field(s) {sorted(missing)}")
    if not isinstance(raw["id"], str):
        raise FormatError(f"bag {i}: id must be a string")
    if raw["source"] not in SOURCES:
        raise FormatError(f"bag {i}: source must be one of {SOURCES}, got {raw['source']!r}")
    for key in ("images", "captions"):
        val = raw[key]
        if not isinstance(val, list) or not all(isinstance(x, str) for x in val):
            raise FormatError(f"bag {i}: {key} must be a list of strings")
    return Bag(raw["id"], raw["source"], tuple(raw["images"]), tuple(raw["captions"]))


def load_manifest(path, report=sys.stderr) -> Manifest:
    """Parse ``manifest.json``, dropping bags with missing images or no captions.

    Each drop is reported as one line on ``report``.
    """
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: invalid UTF-8 at byte {e.start}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: {e.msg} at byte {_byte_offset(text, e.pos)}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("bags"), list):
        raise FormatError(f"{path}: top level must be an object with a 'bags' list (byte 0)")

    manifest = Manifest([], root=path.parent)
    seen = set()
    for i, raw in enumerate(doc["bags"]):
        bag = _parse_bag(raw, i)
        if bag.id in seen:
            raise FormatError(f"{path}: duplicate bag id {bag.id!r}")
        seen.add(bag.id)
        reason = None
        if not bag.images:
            reason = "no images"
        elif not bag.captions:
            reason = "no captions"
        else:
            gone = [p for p in bag.images if not manifest.image_path(p).is_file()]
            if gone:
                reason = f"missing image {gone[0]}"
        if reason:
            manifest.dropped_count += 1
            if report is not None:
                print(f"dropped bag {bag.id}: {reason}", file=report)
            continue
        manifest.bags.append(bag)
    if not manifest.bags:
        raise EmptyDatasetError(f"{path}: no usable bags")
    return manifest


def write_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=2) + "\n", encoding="utf-8")


# ---- PPM -------------------------------------------------------------------


def _header_tokens(buf: bytes, count: int):
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise FormatError("truncated header")
    return tokens, pos + 1


def decode_ppm_bytes(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P6":
        raise FormatError(f"bad magic {buf[:2]!r}, expected b'P6'")
    tokens, start = _header_tokens(buf[2:], 3)
    start += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"non-numeric header field in {tokens!r}") from None
    if width <= 0 or height <= 0:
        raise FormatError(f"bad width/height {width}x{height}")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} (only 255)")
    need = width * height * 3
    payload = buf[start : start + need]
    if len(payload) < need:
        raise FormatError(f"truncated payload: {len(payload)} of {need} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def decode_ppm(path) -> np.ndarray:
    """Read a binary P6 file as a ``(height, width, 3)`` uint8 array."""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e.strerror}") from None
    try:
        return decode_ppm_bytes(buf)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None


def encode_ppm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise DimensionError(f"expected (h, w, 3) uint8 pixels, got {pixels.shape} {pixels.dtype}")
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def write_ppm(path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(pixels))


def preprocess_image(raw: np.ndarray, target: int, patch_size: int | None = None) -> np.ndarray:
    """Nearest-neighbour resize to ``target`` square, then map to [-1, 1].

    Returns a channel-first ``(3, target, target)`` float64 array.
    """
    if patch_size is not None and target % patch_size:
        raise DimensionError(f"target {target} not divisible by patch size {patch_size}")
    h, w = raw.shape[:2]
    if h == 0 or w == 0 or target <= 0:
        raise DimensionError(f"cannot resize {h}x{w} image to {target}")
    rows = (np.arange(target) * h) // target
    cols = (np.arange(target) * w) // target
    resized = raw[rows][:, cols].astype(np.float64) / 255.0
    return np.ascontiguousarray(((resized - 0.5) / 0.5).transpose(2, 0, 1))


def load_image(path, target: int, patch_size: int | None = None) -> np.ndarray:
    return preprocess_image(decode_ppm(path), target, patch_size)


# ---- synthetic fixtures ------------------------------------------------------

STAINS = {
    "pink": (226, 120, 170),
    "purple": (128, 62, 160),
    "blue": (62, 92, 200),
    "red": (200, 52, 52),
}
PATTERNS = {
    "stripes": "fibrous stroma",
    "checker": "glandular tissue",
    "gradient": "diffuse necrosis",
}
FOCUS_SIZES = {"small": 6, "large": 10}
QUADRANTS = ("upper left", "upper right", "lower left", "lower right")
_BACKGROUND = np.array([240, 234, 240], dtype=np.float64)
_FOCUS = np.array([36, 20, 60], dtype=np.float64)


def _caption(stain, pattern, size, quadrant) -> str:
    return f"{stain.capitalize()} {PATTERNS[pattern]} with a {size} dense focus in the {quadrant} quadrant."


def _render(rng: np.random.Generator, stain, pattern, size, quadrant, side=32) -> np.ndarray:
    color = np.array(STAINS[stain], dtype=np.float64) + rng.integers(-12, 13, size=3)
    yy, xx = np.mgrid[0:side, 0:side]
    if pattern == "stripes":
        period = int(rng.choice([4, 6, 8]))
        axis = yy if rng.integers(2) else xx
        weight = (((axis + int(rng.integers(period))) // (period // 2)) % 2).astype(np.float64)
    elif pattern == "checker":
        cell = int(rng.choice([4, 8]))
        weight = (((yy // cell) + (xx // cell)) % 2).astype(np.float64)
    else:
        angle = rng.uniform(0, 2 * np.pi)
        proj = (xx - side / 2) * np.cos(angle) + (yy - side / 2) * np.sin(angle)
        weight = (proj - proj.min()) / (proj.max() - proj.min())
    img = weight[..., None] * color + (1 - weight[..., None]) * _BACKGROUND

    s = FOCUS_SIZES[size]
    half = side // 2
    top = 0 if quadrant.startswith("upper") else half
    left = 0 if quadrant.endswith("left") else half
    y0 = top + int(rng.integers(0, half - s + 1))
    x0 = left + int(rng.integers(0, half - s + 1))
    img[y0 : y0 + s, x0 : x0 + s] = _FOCUS
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def caption_grammar() -> list[tuple[str, str, str, str]]:
    return list(itertools.product(STAINS, PATTERNS, FOCUS_SIZES, QUADRANTS))


def synth_pair(rng: np.random.Generator, attributes=None, side: int = 32) -> tuple[np.ndarray, str]:
    """One rendered image and its caption; attributes drawn from ``rng`` if omitted."""
    if attributes is None:
        grammar = caption_grammar()
        attributes = grammar[int(rng.integers(len(grammar)))]
    return _render(rng, *attributes, side=side), _caption(*attributes)


def synth_fixture(out_dir, pairs: int, seed: int, side: int = 32) -> Manifest:
    """Write ``pairs`` single-image bags plus ``manifest.json`` under ``out_dir``.

    Every caption is a distinct sentence of the template grammar and describes
    its own image: stain colour, tissue pattern, focus size and quadrant.
    """
    grammar = caption_grammar()
    if not 1 <= pairs <= len(grammar):
        raise UsageError(f"pairs must be in [1, {len(grammar)}], got {pairs}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(grammar))[:pairs]
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        bags = []
        for i, g in enumerate(order):
            pixels, caption = synth_pair(rng, grammar[int(g)], side)
            name = f"img_{i:03d}.ppm"
            write_ppm(out / name, pixels)
            source = SOURCES[int(rng.integers(2))]
            bags.append(Bag(f"bag{i:03d}", source, (name,), (caption,)))
        manifest = Manifest(bags, root=out)
        write_manifest(manifest, out / "manifest.json")
    except OSError as e:
        raise DataError(f"cannot write fixture to {out}: {e.strerror}") from None
    return manifest
