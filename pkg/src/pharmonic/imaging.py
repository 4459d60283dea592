"""Chromaticity/brightness decomposition of RGB images and PPM I/O."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh, as_nodal, build_rect_mesh
from .sphere import project_to_sphere

BLUE_POLE = (0.0, 0.0, 1.0)


@dataclass
class RgbImage:
    """Row-major RGB image with channels in [0, 1]; ``pixels`` is (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must have shape (H, W, 3), got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels must be finite")
        self.pixels = np.clip(px, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class ChromaImage:
    width: int
    height: int
    brightness: np.ndarray  # (H, W)
    chroma: np.ndarray  # (H, W, 3), unit rows
    fallback_count: int = 0


def decompose(img: RgbImage, fallback=BLUE_POLE) -> ChromaImage:
    """Brightness |I| and chromaticity I/|I|; black pixels take ``fallback``."""
    px = img.pixels
    eta = np.linalg.norm(px, axis=2)
    chroma, count = project_to_sphere(px, fallback)
    return ChromaImage(img.width, img.height, eta, chroma, count)


def recompose(c: ChromaImage) -> tuple[RgbImage, int]:
    """Brightness times chromaticity, clamped to [0, 1]; returns the clamp count."""
    raw = c.brightness[..., None] * c.chroma
    clamped = int(np.count_nonzero((raw < 0.0) | (raw > 1.0)))
    return RgbImage(np.clip(raw, 0.0, 1.0)), clamped


def chroma_noise(c: ChromaImage, sigma: float, seed: int, fallback=BLUE_POLE) -> ChromaImage:
    """Add i.i.d. Gaussian noise of scale ``sigma`` per component and re-project."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return ChromaImage(c.width, c.height, c.brightness.copy(), c.chroma.copy(), c.fallback_count)
    rng = np.random.default_rng(seed)
    noisy = c.chroma + sigma * rng.standard_normal(c.chroma.shape)
    chroma, count = project_to_sphere(noisy, fallback)
    return ChromaImage(c.width, c.height, c.brightness.copy(), chroma, c.fallback_count + count)


def image_mesh(width: int, height: int) -> TriMesh:
    """Mesh with one node per pixel center, unit spacing, on [0, W-1] x [0, H-1].

    Node ``j * width + i`` is pixel row ``j``, column ``i``.
    """
    if width < 2 or height < 2:
        raise ValueError(f"image must be at least 2x2 pixels, got {width}x{height}")
    return build_rect_mesh(width - 1, height - 1, float(width - 1), float(height - 1))


def image_to_field(c: ChromaImage) -> tuple[TriMesh, np.ndarray, np.ndarray]:
    """Mesh, nodal data ``g`` and initial value ``u0 = g`` for a chromaticity image."""
    mesh = image_mesh(c.width, c.height)
    g = c.chroma.reshape(-1, 3).copy()
    return mesh, g, g.copy()


def field_to_chroma(u, mesh: TriMesh, width: int, height: int, brightness,
                    fallback=BLUE_POLE) -> ChromaImage:
    """Project a nodal field back to S^2 and pair it with ``brightness``."""
    if mesh.n_nodes != width * height:
        raise ValueError(f"mesh has {mesh.n_nodes} nodes, image has {width * height} pixels")
    brightness = np.asarray(brightness, dtype=float)
    if brightness.shape != (height, width):
        raise ValueError(f"brightness shape {brightness.shape} != {(height, width)}")
    u = as_nodal(mesh, u, 3)
    chroma, count = project_to_sphere(u, fallback)
    return ChromaImage(width, height, brightness.copy(), chroma.reshape(height, width, 3), count)


# --- PPM ------------------------------------------------------------------

def quantize(pixels) -> np.ndarray:
    """Map [0, 1] channels to 8 bits, rounding halves up."""
    return np.floor(np.clip(np.asarray(pixels, dtype=float), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _tokens(data: bytes, count: int, pos: int = 0):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        out.append(data[start:pos])
    return out, pos


def read_ppm(path) -> RgbImage:
    """Read a P3 or P6 PPM file; channels become value / maxval."""
    with open(path, "rb") as fh:
        data = fh.read()
    (magic, w, h, maxval), pos = _tokens(data, 4)
    if magic not in (b"P3", b"P6"):
        raise ValueError(f"{path}: not a P3/P6 PPM file (magic {magic!r})")
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ValueError(f"{path}: malformed PPM header") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ValueError(f"{path}: invalid PPM dimensions or maxval")
    count = width * height * 3
    if magic == b"P6":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos) \
            if len(data) - pos >= count * dtype.itemsize else None
        if raw is None:
            raise ValueError(f"{path}: truncated pixel data")
        values = raw.astype(float)
    else:
        toks, _ = _tokens(data, count, pos)
        values = np.array([int(t) for t in toks], dtype=float)
    if values.max(initial=0) > maxval:
        raise ValueError(f"{path}: sample exceeds maxval")
    return RgbImage(values.reshape(height, width, 3) / maxval)


def write_ppm(path, img: RgbImage, binary: bool = True) -> None:
    """Write 8-bit PPM (P6 by default, P3 with ``binary=False``)."""
    q = quantize(img.pixels)
    header = f"{'P6' if binary else 'P3'}\n{img.width} {img.height}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(q.tobytes())
        else:
            rows = [" ".join(str(v) for v in row.ravel()) for row in q]
            fh.write(("\n".join(rows) + "\n").encode())


def two_color_disk(width: int = 32, height: int = 32, inside=(0.9, 0.25, 0.1),
                   outside=(0.15, 0.35, 0.85), radius: float | None = None) -> RgbImage:
    """Synthetic test image: a disk of one color on a background of another."""
    radius = min(width, height) / 4 if radius is None else radius
    jj, ii = np.mgrid[0:height, 0:width]
    r2 = (ii - (width - 1) / 2) ** 2 + (jj - (height - 1) / 2) ** 2
    mask = r2 <= radius**2
    px = np.where(mask[..., None], np.asarray(inside, float), np.asarray(outside, float))
    return RgbImage(px)
