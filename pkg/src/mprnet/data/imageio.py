"""PNG (8/16-bit, via pypng) and ASCII PPM (P3) image files as unit-range (3, h, w) arrays."""

import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import png

from ..errors import UsageError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
IMAGE_SUFFIXES = (".png", ".ppm")


def read_png(path: PathLike) -> np.ndarray:
    width, height, rows, info = png.Reader(filename=str(path)).asDirect()
    planes = info["planes"]
    data = np.vstack([np.asarray(row, dtype=np.float64) for row in rows]).reshape(height, width, planes)
    data /= float(2 ** info["bitdepth"] - 1)
    if info.get("alpha"):
        data = data[..., :-1]
    if info.get("greyscale"):
        data = np.repeat(data[..., :1], 3, axis=-1)
    return np.ascontiguousarray(data.transpose(2, 0, 1))


def write_png(path: PathLike, img: np.ndarray, bitdepth: int = 8) -> None:
    if bitdepth not in (8, 16):
        raise UsageError(f"write_png: bitdepth must be 8 or 16, got {bitdepth}")
    _, height, width = img.shape
    maxval = 2 ** bitdepth - 1
    values = np.round(np.clip(img, 0.0, 1.0) * maxval).astype(np.uint16 if bitdepth == 16 else np.uint8)
    rows = values.transpose(1, 2, 0).reshape(height, width * 3)
    writer = png.Writer(width=width, height=height, bitdepth=bitdepth, greyscale=False)
    with open(path, "wb") as f:
        writer.write(f, rows.tolist())


def _ppm_tokens(text: str) -> List[str]:
    tokens: List[str] = []
    for line in text.splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    return tokens


def read_ppm(path: PathLike) -> np.ndarray:
    tokens = _ppm_tokens(Path(path).read_text(encoding="ascii"))
    if len(tokens) < 4 or tokens[0] != "P3":
        raise UsageError(f"{path}: not an ASCII PPM (P3) file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    values = np.array(tokens[4:], dtype=np.float64)
    if values.size != width * height * 3:
        raise UsageError(f"{path}: expected {width * height * 3} samples, found {values.size}")
    return np.ascontiguousarray((values / maxval).reshape(height, width, 3).transpose(2, 0, 1))


def write_ppm(path: PathLike, img: np.ndarray, maxval: int = 255) -> None:
    _, height, width = img.shape
    values = np.round(np.clip(img, 0.0, 1.0) * maxval).astype(int).transpose(1, 2, 0)
    with open(path, "w", encoding="ascii") as f:
        f.write(f"P3\n{width} {height}\n{maxval}\n")
        for row in values:
            f.write(" ".join(str(v) for v in row.ravel()) + "\n")


def read_image(path: PathLike) -> np.ndarray:
    """Read a PNG or P3 PPM file into a unit-range float64 (3, h, w) array."""
    suffix = Path(path).suffix.lower()
    readers = {".png": read_png, ".ppm": read_ppm}
    if suffix not in readers:
        raise UsageError(f"Unsupported image format '{suffix}' for {path}")
    try:
        return readers[suffix](path)
    except UsageError:
        raise
    except (png.Error, ValueError, OSError) as e:
        raise UsageError(f"Cannot read image {path}: {e}") from e


def write_image(path: PathLike, img: np.ndarray, bitdepth: int = 8) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".png":
        write_png(path, img, bitdepth)
    elif path.suffix.lower() == ".ppm":
        write_ppm(path, img, 2 ** bitdepth - 1)
    else:
        raise UsageError(f"Unsupported image format '{path.suffix}' for {path}")
    logger.debug("Wrote %s (%dx%d)", path, img.shape[2], img.shape[1])


def list_images(directory: PathLike) -> List[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def find_pairs(directory: PathLike) -> Tuple[List[Tuple[str, Path, Path]], List[Path]]:
    """
    Match ``<name>.clean.<ext>`` with ``<name>.degraded.<ext>`` files.

    Returns:
        (sorted (name, clean, degraded) triples, files without a partner)
    """
    clean: Dict[str, Path] = {}
    degraded: Dict[str, Path] = {}
    unpaired: List[Path] = []
    for path in list_images(directory):
        stem = path.name[: -len(path.suffix)]
        name, _, role = stem.rpartition(".")
        if role == "clean" and name:
            clean[name] = path
        elif role == "degraded" and name:
            degraded[name] = path
        else:
            unpaired.append(path)
    pairs = [(name, clean[name], degraded[name]) for name in sorted(set(clean) & set(degraded))]
    unpaired += [clean[n] for n in sorted(set(clean) - set(degraded))]
    unpaired += [degraded[n] for n in sorted(set(degraded) - set(clean))]
    return pairs, sorted(unpaired)
