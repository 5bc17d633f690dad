"""Synthetic frame-triplet generators and frame-directory ingestion.

Every generator is a pure function of its arguments: per-item randomness comes
from ``np.random.default_rng([seed, index])``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io


@dataclass
class FrameTriplet:
    frames: np.ndarray  # [3, C, H, W]
    s: int | None = None
    latent: np.ndarray | None = None


@dataclass
class TripletSet:
    """A stack of triplets: ``frames`` is [N, 3, C, H, W]."""

    frames: np.ndarray
    s: np.ndarray | None = None
    latents: np.ndarray | None = None
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames.ndim != 5 or self.frames.shape[1] != 3:
            raise ValueError(f"TripletSet: frames must be [N, 3, C, H, W], got {self.frames.shape}")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> FrameTriplet:
        return FrameTriplet(
            self.frames[i],
            None if self.s is None else int(self.s[i]),
            None if self.latents is None else self.latents[i],
        )

    def subset(self, idx) -> "TripletSet":
        idx = np.asarray(idx)
        return TripletSet(
            self.frames[idx],
            None if self.s is None else self.s[idx],
            None if self.latents is None else self.latents[idx],
            dict(self.manifest),
        )

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return tuple(self.frames.shape[2:])


def stack_triplets(items: list[FrameTriplet], manifest: dict | None = None) -> TripletSet:
    frames = np.stack([t.frames for t in items])
    s = None if items[0].s is None else np.array([t.s for t in items], dtype=np.int64)
    lat = None if items[0].latent is None else np.stack([t.latent for t in items])
    return TripletSet(frames, s, lat, manifest or {})


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


# --- Gaussian bump on a pixel line ------------------------------------------


def gen_bump_line(n_pixels: int = 3, sigma: float = 0.5, speed: float = 0.1, n_frames: int = 20, c0: float = 0.0) -> np.ndarray:
    """Frames [T, 1, 1, n] of a Gaussian bump moving at constant speed."""
    if n_pixels < 3:
        raise ValueError(f"n_pixels must be >= 3, got {n_pixels}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if speed <= 0:
        raise ValueError(f"speed must be > 0, got {speed}")
    i = np.arange(n_pixels)
    c = c0 + speed * np.arange(n_frames)
    frames = np.exp(-((i[None, :] - c[:, None]) ** 2) / (2 * sigma**2))
    return frames.reshape(n_frames, 1, 1, n_pixels)


@dataclass(frozen=True)
class BumpSpec:
    n_pixels: int = 16
    sigma: float = 1.0
    speed: tuple[float, float] = (0.5, 1.0)
    n_frames: int = 8
    margin: float = 3.0


def bump_sequences(spec: BumpSpec, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``count`` sequences [count, T, 1, 1, n] and their centers [count, T].

    Direction is random; the bump stays ``margin`` pixels from either edge.
    """
    seqs, centers = [], []
    for k in range(count):
        rng = _rng(seed, k)
        speed = rng.uniform(*spec.speed)
        travel = speed * (spec.n_frames - 1)
        lo, hi = spec.margin, spec.n_pixels - 1 - spec.margin - travel
        if hi < lo:
            raise ValueError("BumpSpec: trajectory does not fit inside the margins")
        c0 = rng.uniform(lo, hi)
        c = c0 + speed * np.arange(spec.n_frames)
        if rng.random() < 0.5:
            c = c[::-1].copy()
        i = np.arange(spec.n_pixels)
        f = np.exp(-((i[None, :] - c[:, None]) ** 2) / (2 * spec.sigma**2))
        seqs.append(f.reshape(spec.n_frames, 1, 1, spec.n_pixels))
        centers.append(c)
    return np.stack(seqs), np.stack(centers)


def windows_to_triplets(seqs: np.ndarray, latents: np.ndarray | None = None, stride: int = 1) -> TripletSet:
    """Sliding three-frame windows over sequences [S, T, ...]."""
    frames, lats = [], []
    for k, seq in enumerate(seqs):
        for t in range(0, len(seq) - 2, stride):
            frames.append(seq[t : t + 3])
            if latents is not None:
                lats.append(latents[k, t : t + 3].reshape(3, -1))
    return TripletSet(np.stack(frames), None, np.stack(lats) if lats else None)


def bump_triplets(spec: BumpSpec, count: int, seed: int) -> TripletSet:
    seqs, centers = bump_sequences(spec, count, seed)
    out = windows_to_triplets(seqs, centers[..., None])
    out.manifest = {"generator": "bump", "spec": asdict(spec), "seed": seed, "count": count}
    return out


# --- rigid transforms of still images ---------------------------------------


@dataclass(frozen=True)
class TransformSpec:
    translation: float = 3.0  # pixels at tau = 1
    rotation: float = 15.0  # degrees at tau = 1
    scale: float = 1.1  # ratio at tau = 1; drawn from [1/scale, scale]
    window: int = 16
    taus: tuple[float, float, float] = (1 / 3, 2 / 3, 1.0)
    interpolation: str = "bilinear"
    fixed: bool = False  # use the range endpoints (tx = translation, ty = 0) instead of sampling

    def __post_init__(self):
        if self.translation < 0 or self.rotation < 0 or self.scale < 1:
            raise ValueError("TransformSpec: ranges must contain the identity")
        if self.interpolation not in ("bilinear", "nearest"):
            raise ValueError(f"TransformSpec: unknown interpolation {self.interpolation!r}")


def texture_stills(count: int = 8, size: int = 48, seed: int = 0) -> np.ndarray:
    """Smoothed-noise textures in [0, 1], shape [count, size, size]."""
    out = []
    for k in range(count):
        rng = _rng(seed, k)
        tex = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=1.5 + k % 3, mode="wrap")
        tex = (tex - tex.min()) / (np.ptp(tex) or 1.0)
        out.append(tex)
    return np.stack(out)


def _source_coords(center, tx, ty, theta, scale, window):
    """Source pixel coordinates of every output pixel for one transform."""
    r = np.arange(window) - (window - 1) / 2
    yy, xx = np.meshgrid(r, r, indexing="ij")
    # output = A(source): undo translation, then rotation and scale
    x0, y0 = xx - tx, yy - ty
    c, s = math.cos(theta), math.sin(theta)
    xs = (c * x0 + s * y0) / scale
    ys = (-s * x0 + c * y0) / scale
    return ys + center[0], xs + center[1]


def gen_rigid_triplets(stills: np.ndarray, spec: TransformSpec, count: int, seed: int) -> TripletSet:
    """Triplets ``A_tau x`` at tau = 1/3, 2/3, 1 for random rigid transforms A."""
    stills = np.asarray(stills, dtype=np.float64)
    if stills.ndim == 2:
        stills = stills[None]
    _, H, W = stills.shape
    if min(H, W) < spec.window:
        raise ValueError(f"stills ({H}x{W}) smaller than window {spec.window}")
    order = 1 if spec.interpolation == "bilinear" else 0
    items = []
    for k in range(count):
        rng = _rng(seed, k)
        for _attempt in range(100):
            j = int(rng.integers(len(stills)))
            if spec.fixed:
                tx, ty, theta, log_s = spec.translation, 0.0, math.radians(spec.rotation), math.log(spec.scale)
            else:
                tx, ty = rng.uniform(-spec.translation, spec.translation, size=2)
                theta = math.radians(rng.uniform(-spec.rotation, spec.rotation))
                log_s = rng.uniform(-math.log(spec.scale), math.log(spec.scale))
            center = (rng.uniform(0, H - 1), rng.uniform(0, W - 1))
            coords = [
                _source_coords(center, tau * tx, tau * ty, tau * theta, math.exp(tau * log_s), spec.window)
                for tau in spec.taus
            ]
            if all(c[0].min() >= 0 and c[0].max() <= H - 1 and c[1].min() >= 0 and c[1].max() <= W - 1 for c in coords):
                break
        else:
            raise RuntimeError(f"gen_rigid_triplets: no in-bounds transform for item {k} after 100 attempts")
        frames = np.stack([
            ndimage.map_coordinates(stills[j], np.stack(c), order=order, mode="reflect")
            for c in coords
        ])
        latent = np.array([[tau, tau * tx, tau * ty, tau * theta, tau * log_s] for tau in spec.taus])
        items.append(FrameTriplet(np.clip(frames, 0, 1)[:, None], None, latent))
    return stack_triplets(items, {"generator": "rigid", "spec": asdict(spec), "seed": seed, "count": count})


# --- rotating sprites ---------------------------------------------------------

SPRITES = {
    # (radius of the body blob, radius of the arm blob around it, blob sigma)
    "arm": (2.5, 2.5, 1.2),
    "long-arm": (2.0, 3.0, 1.1),
}


@dataclass(frozen=True)
class SpriteSceneSpec:
    shape: str = "arm"
    step: float = 20.0  # degrees per frame, norm of the 2-D angular velocity
    size: int = 16
    n_frames: int = 3
    heading: float | None = None  # degrees in (azimuth, pitch) space; None draws one per sequence

    def __post_init__(self):
        if self.shape not in SPRITES:
            raise ValueError(f"SpriteSceneSpec: unknown sprite {self.shape!r}")
        if not 0 <= self.step <= 30:
            raise ValueError(f"SpriteSceneSpec: step must be in [0, 30] degrees, got {self.step}")


def render_sprite(spec: SpriteSceneSpec, azimuth: float, pitch: float) -> np.ndarray:
    """Anti-aliased [1, size, size] rendering at the given pose (degrees).

    Azimuth spins the whole sprite; pitch swings the arm blob around the body.
    Blob amplitudes are 1/2, so overlaps never clip and total mass is
    pose-independent.
    """
    r_body, r_arm, sigma = SPRITES[spec.shape]
    az, pt = math.radians(azimuth), math.radians(pitch)
    c = (spec.size - 1) / 2
    bx, by = c + r_body * math.cos(az), c + r_body * math.sin(az)
    ax, ay = bx + r_arm * math.cos(az + pt), by + r_arm * math.sin(az + pt)
    i = np.arange(spec.size)
    img = np.zeros((spec.size, spec.size))
    for x, y in ((bx, by), (ax, ay)):
        img += 0.5 * np.exp(-((i[None, :] - x) ** 2 + (i[:, None] - y) ** 2) / (2 * sigma**2))
    return img[None]


def _sprite_sequence(spec: SpriteSceneSpec, rng: np.random.Generator, n_frames: int):
    start = rng.uniform(0, 360, size=2)
    phi = rng.uniform(0, 2 * math.pi)
    if spec.heading is not None:
        phi = math.radians(spec.heading)
    vel = spec.step * np.array([math.cos(phi), math.sin(phi)])
    angles = start[None] + np.arange(n_frames)[:, None] * vel[None]
    frames = np.stack([render_sprite(spec, a, p) for a, p in angles])
    return frames, angles


def gen_rotating_sprites(spec: SpriteSceneSpec, count: int, seed: int) -> TripletSet:
    """Triplets at poses theta0, theta0 + d, theta0 + 2d with random start and direction."""
    items = []
    for k in range(count):
        frames, angles = _sprite_sequence(spec, _rng(seed, k), 3)
        items.append(FrameTriplet(frames, None, angles))
    return stack_triplets(items, {"generator": "sprites", "spec": asdict(spec), "seed": seed, "count": count})


def apply_skip(sequence: np.ndarray, p_skip: float = 0.5, seed: int = 0, latent: np.ndarray | None = None) -> FrameTriplet:
    """Keep (f1, f2, f3) when s = 0 and (f1, f2, f4) when s = 1, s ~ Bernoulli(p_skip)."""
    if len(sequence) < 4:
        raise ValueError(f"apply_skip: need at least 4 frames, got {len(sequence)}")
    s = int(np.random.default_rng(seed).random() < p_skip)
    pick = [0, 1, 3] if s else [0, 1, 2]
    return FrameTriplet(sequence[pick], s, None if latent is None else latent[pick])


def gen_skip_sprites(spec: SpriteSceneSpec, count: int, seed: int, p_skip: float = 0.5) -> TripletSet:
    items = []
    for k in range(count):
        frames, angles = _sprite_sequence(spec, _rng(seed, k), 4)
        items.append(apply_skip(frames, p_skip, seed=[int(seed), k, 1], latent=angles))
    manifest = {"generator": "skip-sprites", "spec": asdict(spec), "seed": seed, "count": count, "p_skip": p_skip}
    return stack_triplets(items, manifest)


# --- user frames ----------------------------------------------------------------


class IngestError(RuntimeError):
    pass


def _read_image(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".pgm":
        return io.read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def ingest_frames(directory, window: int = 3, stride: int = 1) -> TripletSet:
    """Sliding-window triplets from a directory of equal-sized grayscale frames.

    Files are taken in lexicographic order. ``window`` is the number of
    consecutive frames per sample (3 gives plain triplets; 4 or more keeps the
    first two frames and the last one, a fixed skip).
    """
    if window < 3 or stride < 1:
        raise ValueError("ingest_frames: window must be >= 3 and stride >= 1")
    files = sorted(p for p in Path(directory).iterdir() if p.is_file())
    frames, errors = [], []
    for f in files:
        try:
            frames.append(_read_image(f))
        except Exception as exc:  # noqa: BLE001 - collected and reported together
            errors.append(f"{f.name}: {exc}")
    if frames:
        shape = frames[0].shape
        errors += [f"{f.name}: shape {img.shape} != {shape}" for f, img in zip(files, frames) if img.shape != shape]
    if errors:
        raise IngestError("cannot ingest frames:\n  " + "\n  ".join(errors))
    if len(frames) < window:
        raise IngestError(f"need at least {window} frames, found {len(frames)}")
    seq = np.stack(frames)[:, None]
    starts = range(0, len(seq) - window + 1, stride)
    trip = np.stack([seq[[i, i + 1, i + window - 1]] for i in starts])
    manifest = {"generator": "ingest", "spec": {"directory": str(directory), "window": window, "stride": stride}, "count": len(trip)}
    return TripletSet(np.clip(trip, 0, 1), None, None, manifest)


# --- persistence ------------------------------------------------------------------


def save_dataset(directory, data: TripletSet, previews: int = 0) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    io.write_ltz(d / "frames.ltz", data.frames)
    if data.s is not None:
        io.write_ltz(d / "s.ltz", data.s)
    if data.latents is not None:
        io.write_ltz(d / "latents.ltz", data.latents)
    io.write_json(d / "manifest.json", {"schema_version": io.SCHEMA_VERSION, **data.manifest})
    for i in range(min(previews, len(data))):
        for j in range(3):
            io.write_pgm(d / f"triplet{i:04d}_{j}.pgm", data.frames[i, j, 0])


def load_dataset(directory) -> TripletSet:
    d = Path(directory)
    frames = io.read_ltz(d / "frames.ltz")
    s = io.read_ltz(d / "s.ltz").astype(np.int64) if (d / "s.ltz").exists() else None
    lat = io.read_ltz(d / "latents.ltz") if (d / "latents.ltz").exists() else None
    return TripletSet(frames, s, lat, io.read_json(d / "manifest.json"))


def build_dataset(desc: dict) -> TripletSet:
    """Dataset from a JSON description: ``{"path": dir}`` or a generator spec."""
    if "path" in desc:
        return load_dataset(desc["path"])
    gen = desc.get("generator")
    seed = int(desc.get("seed", 0))
    count = int(desc.get("count", 100))
    spec = dict(desc.get("spec", {}))
    if gen == "bump":
        if "speed" in spec:
            spec["speed"] = tuple(spec["speed"])
        return bump_triplets(BumpSpec(**spec), count, seed)
    if gen == "sprites":
        return gen_rotating_sprites(SpriteSceneSpec(**spec), count, seed)
    if gen == "skip-sprites":
        return gen_skip_sprites(SpriteSceneSpec(**spec), count, seed, float(desc.get("p_skip", 0.5)))
    if gen == "rigid":
        stills_desc = desc.get("stills", {})
        stills = texture_stills(int(stills_desc.get("count", 8)), int(stills_desc.get("size", 48)), int(stills_desc.get("seed", 0)))
        if "taus" in spec:
            spec["taus"] = tuple(spec["taus"])
        return gen_rigid_triplets(stills, TransformSpec(**spec), count, seed)
    if gen == "ingest":
        return ingest_frames(spec["directory"], int(spec.get("window", 3)), int(spec.get("stride", 1)))
    raise ValueError(f"dataset: unknown generator {gen!r}")
