"""
File Manager - Output directories, CSV metric files, PGM image sheets, human-readable formatting
"""
import csv
import os
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .errors import FormatError


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def format_size(size_bytes: int) -> str:
    """Human-readable file size."""
    if size_bytes <= 0:
        return "0 B"
    size = float(size_bytes)
    for unit in ['B', 'KB', 'MB', 'GB']:
        if size < 1024:
            return f"{size:.1f} {unit}"
        size /= 1024
    return f"{size:.1f} TB"


def format_duration(seconds: float) -> str:
    """Human-readable elapsed time."""
    if seconds < 1.0:
        return f"{seconds * 1000:.0f}ms"
    seconds = int(round(seconds))
    h, rem = divmod(seconds, 3600)
    m, s = divmod(rem, 60)
    if h > 0:
        return f"{h:02d}:{m:02d}:{s:02d}"
    return f"{m:02d}:{s:02d}"


# ── CSV ────────────────────────────────────────────────────────────────

def format_cell(value: Any) -> str:
    # repr is the shortest string that round-trips, so identical runs give identical bytes
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def parse_cell(text: str) -> Any:
    if text == '':
        return None
    if text in ('true', 'false'):
        return text == 'true'
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(path: str, columns: Sequence[str], rows: Sequence[Dict[str, Any]]):
    ensure_dir(os.path.dirname(os.path.abspath(path)))
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(row.get(col)) for col in columns])


def read_csv(path: str) -> Tuple[List[str], List[Dict[str, Any]]]:
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        try:
            columns = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV file")
        rows = [{col: parse_cell(cell) for col, cell in zip(columns, line)} for line in reader]
    return columns, rows


# ── PGM ────────────────────────────────────────────────────────────────

def to_gray8(image: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 0..255 bytes."""
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def tile_images(images: np.ndarray, rows: int, cols: int, side: int, pad: int = 1) -> np.ndarray:
    """Lay out rows*cols flattened side x side images on one canvas with pixel padding."""
    canvas = np.zeros((rows * (side + pad) + pad, cols * (side + pad) + pad))
    for idx in range(min(len(images), rows * cols)):
        r, c = divmod(idx, cols)
        top = pad + r * (side + pad)
        left = pad + c * (side + pad)
        canvas[top:top + side, left:left + side] = images[idx].reshape(side, side)
    return canvas


def write_pgm(path: str, image: np.ndarray):
    """Binary P5 greymap, 8-bit, single header line."""
    gray = image if image.dtype == np.uint8 else to_gray8(image)
    height, width = gray.shape
    ensure_dir(os.path.dirname(os.path.abspath(path)))
    with open(path, 'wb') as f:
        f.write(f"P5 {width} {height} 255\n".encode('ascii'))
        f.write(np.ascontiguousarray(gray).tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, 'rb') as f:
        raw = f.read()
    newline = raw.find(b'\n')
    fields = raw[:newline].split() if newline >= 0 else []
    if len(fields) != 4 or fields[0] != b'P5':
        raise FormatError(f"{path}: not a single-line P5 header", offset=0)
    width, height, maxval = (int(v) for v in fields[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit greymaps are supported")
    pixels = raw[newline + 1:]
    if len(pixels) != width * height:
        raise FormatError(f"{path}: expected {width * height} pixels, got {len(pixels)}", offset=newline + 1)
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)
