"""T-related observation pairs and triples on toric and spherical grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, InputError, UsageError

TORUS = "torus"
SPHERE = "sphere"
_SNAP = 1e-9


@dataclass
class Observation:
    values: np.ndarray  # (H, W, C)
    domain: str = TORUS
    metadata: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def flat(self) -> np.ndarray:
        """Latent-function view: (H*W, C), rows in C order over the grid."""
        h, w, c = self.values.shape
        return self.values.reshape(h * w, c)


def as_observation(x, domain: str = TORUS) -> Observation:
    if isinstance(x, Observation):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise UsageError(f"observation must be H x W x C, got shape {arr.shape}")
    return Observation(arr, domain)


# -- torus -----------------------------------------------------------------------
def roll(values: np.ndarray, shift) -> np.ndarray:
    return np.roll(values, (int(shift[0]), int(shift[1])), axis=(0, 1))


def toric_shift_pair(stack, rng: np.random.Generator, triple: bool = False, shift=None):
    """Circularly shifted copies of ``stack``.

    Returns ``(psi, T psi)`` or ``(psi, T psi, T^2 psi)`` as Observations; the
    integer shift is uniform over the grid unless given.
    """
    obs = as_observation(stack, TORUS)
    h, w, _ = obs.values.shape
    if shift is None:
        shift = (int(rng.integers(h)), int(rng.integers(w)))
    sy, sx = int(shift[0]) % h, int(shift[1]) % w
    out = [obs, Observation(roll(obs.values, (sy, sx)), TORUS, {"shift": (sy, sx)})]
    if triple:
        s2 = ((2 * sy) % h, (2 * sx) % w)
        out.append(Observation(roll(obs.values, s2), TORUS, {"shift": s2}))
    return tuple(out)


# -- sphere ----------------------------------------------------------------------
def dh_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Driscoll-Healy colatitudes (pi j / h, pole included) and longitudes."""
    return np.pi * np.arange(h) / h, 2.0 * np.pi * np.arange(w) / w


def dh_directions(h: int, w: int) -> np.ndarray:
    theta, phi = dh_grid(h, w)
    t, p = np.meshgrid(theta, phi, indexing="ij")
    return np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1)


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniform unit quaternion (x, y, z, w) from three uniforms."""
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    return np.array(
        [a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2), b * np.sin(2 * np.pi * u3), b * np.cos(2 * np.pi * u3)]
    )


def quat_multiply(q: np.ndarray, r: np.ndarray) -> np.ndarray:
    x1, y1, z1, w1 = q
    x2, y2, z2, w2 = r
    return np.array(
        [
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def axis_angle_quaternion(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([np.sin(angle / 2) * axis, [np.cos(angle / 2)]])


def dh_area_weights(h: int) -> np.ndarray:
    """Solid angle share of each grid row (the band half a row either side, clipped at the poles)."""
    theta, _ = dh_grid(h, 1)
    lo = np.clip(theta - np.pi / (2 * h), 0.0, np.pi)
    hi = np.clip(theta + np.pi / (2 * h), 0.0, np.pi)
    return (np.cos(lo) - np.cos(hi)) / 2.0


def sphere_norm(values: np.ndarray) -> float:
    """L2 norm of gridded spherical data with rows weighted by their area."""
    h, w = values.shape[:2]
    wt = dh_area_weights(h)[:, None] / w
    sq = values.reshape(h, w, -1) ** 2
    return float(np.sqrt(np.sum(wt[..., None] * sq)))


def _snap(x: np.ndarray) -> np.ndarray:
    r = np.round(x)
    return np.where(np.abs(x - r) < _SNAP, r, x)


def rotate_sphere(values: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Resample ``values`` on a DH grid under rotation ``q``: out(x) = in(R^-1 x).

    Bilinear in (colatitude, longitude); longitude wraps, colatitude is
    clamped to the grid's first and last rows. Fractional indices within 1e-9
    of an integer are snapped so grid-aligned rotations are exact.
    """
    h, w, _ = values.shape
    dirs = dh_directions(h, w) @ quat_to_matrix(q)  # rows are R^T d
    z = np.clip(dirs[..., 2], -1.0, 1.0)
    theta = np.arccos(z)
    phi = np.mod(np.arctan2(dirs[..., 1], dirs[..., 0]), 2.0 * np.pi)
    fr = np.clip(_snap(theta * h / np.pi), 0.0, h - 1.0)
    fc = np.mod(_snap(phi * w / (2.0 * np.pi)), w)
    r0 = np.floor(fr).astype(int)
    c0 = np.floor(fc).astype(int) % w
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = (c0 + 1) % w
    dr = (fr - r0)[..., None]
    dc = (fc - np.floor(fc))[..., None]
    return (
        (1 - dr) * (1 - dc) * values[r0, c0]
        + (1 - dr) * dc * values[r0, c1]
        + dr * (1 - dc) * values[r1, c0]
        + dr * dc * values[r1, c1]
    )


def sphere_rotation_pair(stack, rng: np.random.Generator, triple: bool = False, quaternion=None):
    obs = as_observation(stack, SPHERE)
    q = random_quaternion(rng) if quaternion is None else np.asarray(quaternion, dtype=np.float64)
    out = [obs, Observation(rotate_sphere(obs.values, q), SPHERE, {"quaternion": q.tolist()})]
    if triple:
        q2 = quat_multiply(q, q)
        out.append(Observation(rotate_sphere(obs.values, q2), SPHERE, {"quaternion": q2.tolist()}))
    return tuple(out)


# -- synthetic sources ------------------------------------------------------------
def lowpass_mask(h: int, w: int, cutoff: float) -> np.ndarray:
    fy = np.fft.fftfreq(h) * h
    fx = np.fft.fftfreq(w) * w
    return (fy[:, None] ** 2 + fx[None, :] ** 2) <= cutoff * cutoff + 1e-12


def synthetic_texture(h: int, w: int, c: int, cutoff: float, rng: np.random.Generator) -> Observation:
    """Periodic low-pass white noise, unit variance per channel in expectation."""
    if not 0 <= cutoff <= min(h, w) / 2:
        raise ConfigError(f"cutoff must lie in [0, {min(h, w) / 2}], got {cutoff}")
    mask = lowpass_mask(h, w, cutoff)
    noise = rng.standard_normal((c, h, w))
    field_ = np.fft.ifft2(np.fft.fft2(noise) * mask).real
    field_ *= np.sqrt(h * w / mask.sum())
    return Observation(np.ascontiguousarray(field_.transpose(1, 2, 0)), TORUS, {"cutoff": cutoff})


def _monomial_exponents(degree: int) -> list[tuple[int, int, int]]:
    return [(a, b, d - a - b) for d in range(degree + 1) for a in range(d + 1) for b in range(d - a + 1)]


def spherical_texture(h: int, w: int, c: int, degree: int, rng: np.random.Generator) -> Observation:
    """Random polynomials of total degree <= ``degree`` in (x, y, z) on a DH grid.

    Such fields are band-limited on the sphere and stay so under rotation.
    Each channel is scaled to unit mean square on the grid.
    """
    if degree < 0:
        raise ConfigError(f"degree must be non-negative, got {degree}")
    d = dh_directions(h, w)
    exps = _monomial_exponents(degree)
    basis = np.stack([d[..., 0] ** a * d[..., 1] ** b * d[..., 2] ** e for a, b, e in exps], axis=-1)
    vals = basis @ rng.standard_normal((len(exps), c))
    rms = np.sqrt(np.mean(vals * vals, axis=(0, 1), keepdims=True))
    vals = vals / np.where(rms > 0, rms, 1.0)
    return Observation(vals, SPHERE, {"degree": degree})


# -- image corpora -----------------------------------------------------------------
_ACCEPTED = {"PPM", "PNG"}


def _decode(path: Path, h: int, w: int) -> np.ndarray:
    with Image.open(path) as img:
        if img.format not in _ACCEPTED:
            raise InputError(f"{path.name}: format {img.format} not accepted (PNG or PPM/PGM only)", [path])
        img = img.convert("RGB")
        side = min(img.size)
        left = (img.size[0] - side) // 2
        top = (img.size[1] - side) // 2
        img = img.crop((left, top, left + side, top + side)).resize((w, h), Image.BILINEAR)
        return np.asarray(img, dtype=np.float64) / 255.0


def decode_images(directory, h: int, w: int) -> tuple[list[np.ndarray], list[Path], list[Path]]:
    """Decode every file in ``directory`` (lexicographic order).

    Returns ``(arrays, decoded_paths, rejected_paths)``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"image directory {directory} does not exist", [directory])
    arrays, ok, bad = [], [], []
    for path in sorted(p for p in directory.iterdir() if p.is_file()):
        try:
            arrays.append(_decode(path, h, w))
            ok.append(path)
        except (InputError, UnidentifiedImageError, OSError):
            bad.append(path)
    return arrays, ok, bad


def load_image_stack(directory, h: int, w: int, count: int) -> Observation:
    """First ``count`` decodable images, channel-concatenated to (h, w, 3 * count)."""
    arrays, ok, bad = decode_images(directory, h, w)
    if len(arrays) < count:
        names = ", ".join(p.name for p in bad) or "none"
        raise InputError(
            f"need {count} decodable images in {directory}, found {len(arrays)} (undecodable: {names})", bad
        )
    return Observation(np.concatenate(arrays[:count], axis=2), TORUS, {"files": [p.name for p in ok[:count]]})
