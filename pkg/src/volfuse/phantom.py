"""Synthetic multi-focus volumes: scene rasterization and depth-dependent lateral blur.

The optical surrogate blurs each depth slice laterally with a Gaussian whose
width follows Gaussian-beam divergence around the focal depth. Voxel centers
sit at ``(i*dx, j*dy, k*dz)`` micrometers.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .volume import Volume

# recorded for provenance only; no acoustic propagation is simulated
ACOUSTIC_METADATA = {
    "center_frequency_mhz": 75.0,
    "fractional_bandwidth": 0.67,
    "sound_speed_m_per_s": 1500.0,
}

DEFAULT_DIMS = (80, 80, 80)
DEFAULT_SPACING = (2.0, 2.0, 3.0)
KERNEL_TRUNCATE = 4.0


class SceneError(ValueError):
    """Invalid scene description; the message names the offending field."""


@dataclass(frozen=True)
class TiltedFiber:
    start: tuple[float, float, float]
    end: tuple[float, float, float]
    diameter: float = 2.0

    def points(self) -> np.ndarray:
        return np.array([self.start, self.end], dtype=np.float64)


@dataclass(frozen=True)
class Branch:
    points: tuple
    radii: tuple

    def __post_init__(self):
        if len(self.points) < 2:
            raise SceneError("branches[].points: a branch needs at least 2 nodes")
        if len(self.radii) != len(self.points):
            raise SceneError("branches[].radii: need one radius per node")
        if any(r <= 0 for r in self.radii):
            raise SceneError("branches[].radii: radii must be positive")


@dataclass(frozen=True)
class VesselTree:
    branches: tuple = ()

    def points(self) -> np.ndarray:
        if not self.branches:
            return np.zeros((0, 3))
        return np.concatenate([np.asarray(b.points, dtype=np.float64) for b in self.branches])


@dataclass(frozen=True)
class PhantomScene:
    dims: tuple[int, int, int] = DEFAULT_DIMS
    spacing: tuple[float, float, float] = DEFAULT_SPACING
    geometry: TiltedFiber | VesselTree = field(default_factory=VesselTree)
    amplitude: float = 1.0

    def extent(self) -> np.ndarray:
        return (np.asarray(self.dims) - 1) * np.asarray(self.spacing)

    def validate(self) -> None:
        if len(self.dims) != 3 or any(int(n) != n or n < 2 for n in self.dims):
            raise SceneError(f"dims: need three integers >= 2, got {self.dims}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise SceneError(f"spacing: need three positive values, got {self.spacing}")
        if self.amplitude <= 0:
            raise SceneError(f"amplitude: must be positive, got {self.amplitude}")
        geom = self.geometry
        if isinstance(geom, TiltedFiber) and geom.diameter <= 0:
            raise SceneError(f"geometry.diameter: must be positive, got {geom.diameter}")
        pts = geom.points()
        hi = self.extent()
        bad = np.any((pts < -1e-9) | (pts > hi + 1e-9), axis=1)
        if np.any(bad):
            raise SceneError(
                f"geometry: point {pts[np.argmax(bad)].tolist()} lies outside the grid extent [0, {hi.tolist()}] um"
            )


@dataclass(frozen=True)
class BeamModel:
    """Gaussian beam focused at ``focal_depth_um``.

    Waist and Rayleigh range default to the diffraction-limited values
    ``w0 = wavelength / (pi * NA)`` and ``zR = pi * w0**2 / wavelength``.
    """

    wavelength_um: float = 0.532
    na: float = 0.2
    focal_depth_um: float = 0.0
    waist_override_um: float | None = None
    rayleigh_override_um: float | None = None

    def __post_init__(self):
        if self.wavelength_um <= 0 or self.na <= 0:
            raise SceneError("beam: wavelength_um and na must be positive")
        if self.waist_um <= 0 or self.rayleigh_um <= 0:
            raise SceneError("beam: waist and Rayleigh range must be positive")

    @property
    def waist_um(self) -> float:
        if self.waist_override_um is not None:
            return float(self.waist_override_um)
        return self.wavelength_um / (math.pi * self.na)

    @property
    def rayleigh_um(self) -> float:
        if self.rayleigh_override_um is not None:
            return float(self.rayleigh_override_um)
        return math.pi * self.waist_um**2 / self.wavelength_um

    @property
    def sigma0_um(self) -> float:
        # w0 is the 1/e^2 intensity radius, i.e. two standard deviations
        return self.waist_um / 2.0

    def sigma_at(self, z_um) -> np.ndarray:
        u = (np.asarray(z_um, dtype=np.float64) - self.focal_depth_um) / self.rayleigh_um
        return self.sigma0_um * np.sqrt(1.0 + u * u)

    def at_focus(self, focal_depth_um: float) -> BeamModel:
        return dataclasses.replace(self, focal_depth_um=float(focal_depth_um))

    def to_dict(self) -> dict:
        return {
            "wavelength_um": self.wavelength_um,
            "na": self.na,
            "focal_depth_um": self.focal_depth_um,
            "waist_um": self.waist_um,
            "rayleigh_um": self.rayleigh_um,
        }


def _segment_mask(centers, shape, p0, p1, r0, r1, spacing) -> tuple[tuple[slice, ...], np.ndarray]:
    # restrict work to the segment's bounding box, padded by its largest radius
    rmax = max(r0, r1)
    lo = np.minimum(p0, p1) - rmax
    hi = np.maximum(p0, p1) + rmax
    box = tuple(
        slice(max(int(math.floor(l / d)), 0), min(int(math.ceil(h / d)) + 1, n))
        for l, h, d, n in zip(lo, hi, spacing, shape)
    )
    cx, cy, cz = (c[b] for c, b in zip(centers, box))
    X = np.stack(np.meshgrid(cx, cy, cz, indexing="ij"), axis=-1)
    d = p1 - p0
    dd = float(d @ d)
    t = np.clip(((X - p0) @ d) / dd, 0.0, 1.0) if dd > 0 else np.zeros(X.shape[:-1])
    closest = p0 + t[..., None] * d
    dist2 = np.sum((X - closest) ** 2, axis=-1)
    radius = r0 + t * (r1 - r0)
    tol = 1e-9 * max(spacing)
    return box, dist2 <= (radius + tol) ** 2


def rasterize(scene: PhantomScene) -> Volume:
    """Ground-truth volume: ``amplitude`` where a voxel center is inside a structure."""
    scene.validate()
    shape = tuple(int(n) for n in scene.dims)
    centers = [np.arange(n) * d for n, d in zip(shape, scene.spacing)]
    inside = np.zeros(shape, dtype=bool)
    geom = scene.geometry
    if isinstance(geom, TiltedFiber):
        r = geom.diameter / 2.0
        segments = [(np.asarray(geom.start, float), np.asarray(geom.end, float), r, r)]
    else:
        segments = []
        for br in geom.branches:
            pts = np.asarray(br.points, dtype=np.float64)
            for i in range(len(pts) - 1):
                segments.append((pts[i], pts[i + 1], float(br.radii[i]), float(br.radii[i + 1])))
    for p0, p1, r0, r1 in segments:
        box, mask = _segment_mask(centers, shape, p0, p1, r0, r1, scene.spacing)
        inside[box] |= mask
    return Volume(np.where(inside, float(scene.amplitude), 0.0), scene.spacing)


def gaussian_kernel_1d(sigma_px: float) -> np.ndarray:
    """Sampled Gaussian truncated at 4 sigma, normalized to unit sum."""
    radius = max(int(math.ceil(KERNEL_TRUNCATE * sigma_px)), 1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma_px) ** 2)
    return k / k.sum()


def blur_slice(img: np.ndarray, sigma_um: float, dx: float, dy: float) -> np.ndarray:
    out = correlate1d(img, gaussian_kernel_1d(sigma_um / dx), axis=0, mode="constant")
    return correlate1d(out, gaussian_kernel_1d(sigma_um / dy), axis=1, mode="constant")


def apply_defocus(truth: Volume, beam: BeamModel) -> Volume:
    """Blur every z-slice laterally with sigma(z) of the beam; no axial blur."""
    dx, dy, dz = truth.spacing
    sigmas = beam.sigma_at(np.arange(truth.nz) * dz)
    out = np.empty_like(truth.data)
    for k, s in enumerate(sigmas):
        out[:, :, k] = blur_slice(truth.data[:, :, k], float(s), dx, dy)
    return truth.with_data(out)


def generate_multifocus(scene: PhantomScene, focal_depths_um, beam: BeamModel | None = None):
    """One defocused volume per focal depth, plus the unblurred truth."""
    focal_depths_um = list(focal_depths_um)
    if not focal_depths_um:
        raise ValueError("need at least one focal depth")
    beam = beam or BeamModel()
    truth = rasterize(scene)
    sources = [apply_defocus(truth, beam.at_focus(z)) for z in focal_depths_um]
    return sources, truth


def index_to_um(index: float, spacing_z: float) -> float:
    return float(index) * spacing_z


# Presets. Foci are grid z-indices; structures keep a lateral margin of at
# least 4 sigma of the widest blur they experience, so zero padding loses no
# energy.

PRESET_FOCI_INDEX = {"fiber": (30, 40), "vessel": (40, 60)}


def fiber_scene() -> PhantomScene:
    # tilted in the x-z plane at the central y row; y profiles measure width
    return PhantomScene(
        geometry=TiltedFiber(start=(40.0, 80.0, 36.0), end=(112.0, 80.0, 192.0), diameter=2.0)
    )


def vessel_scene() -> PhantomScene:
    def br(points, radii):
        return Branch(tuple(tuple(map(float, p)) for p in points), tuple(map(float, radii)))

    # two vessel layers, one near each preset focal plane; trunks wander by
    # one slice in depth, side branches stay in their trunk node's slice
    upper = [
        br([(36, 50, 117), (70, 60, 120), (100, 56, 123), (124, 70, 120)], [1.5, 1.5, 1.5, 1.5]),
        br([(70, 60, 120), (62, 84, 120), (50, 110, 120)], [1.0, 1.0, 1.0]),
        br([(100, 56, 123), (108, 36, 123)], [1.0, 1.0]),
    ]
    lower = [
        br([(40, 124, 183), (76, 104, 180), (104, 112, 177), (126, 96, 180)], [1.5, 1.5, 1.5, 1.5]),
        br([(76, 104, 180), (88, 80, 180), (96, 60, 180)], [1.0, 1.0, 1.0]),
        br([(104, 112, 177), (116, 128, 177)], [1.0, 1.0]),
    ]
    return PhantomScene(geometry=VesselTree(tuple(upper + lower)))


PRESETS = {"fiber": fiber_scene, "vessel": vessel_scene}


def preset_scene(name: str) -> PhantomScene:
    try:
        return PRESETS[name]()
    except KeyError:
        raise SceneError(f"preset: unknown preset {name!r}; valid: {', '.join(sorted(PRESETS))}") from None


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise SceneError(f"{where}{key}: missing required field")
    return d[key]


def _vector(value, where: str, n: int = 3) -> tuple:
    try:
        vec = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise SceneError(f"{where}: expected {n} numbers, got {value!r}") from None
    if len(vec) != n:
        raise SceneError(f"{where}: expected {n} numbers, got {len(vec)}")
    return vec


def scene_from_dict(d: dict) -> PhantomScene:
    if not isinstance(d, dict):
        raise SceneError("scene: top level must be a JSON object")
    dims = _vector(d.get("dims", DEFAULT_DIMS), "dims")
    if any(v != int(v) for v in dims):
        raise SceneError(f"dims: must be integers, got {dims}")
    spacing = _vector(d.get("spacing", DEFAULT_SPACING), "spacing")
    try:
        amplitude = float(d.get("amplitude", 1.0))
    except (TypeError, ValueError):
        raise SceneError(f"amplitude: expected a number, got {d.get('amplitude')!r}") from None
    g = d.get("geometry", {"type": "empty"})
    if not isinstance(g, dict):
        raise SceneError("geometry: must be an object")
    kind = g.get("type")
    if kind == "fiber":
        try:
            diameter = float(g.get("diameter", 2.0))
        except (TypeError, ValueError):
            raise SceneError(f"geometry.diameter: expected a number, got {g.get('diameter')!r}") from None
        geom = TiltedFiber(
            _vector(_require(g, "start", "geometry."), "geometry.start"),
            _vector(_require(g, "end", "geometry."), "geometry.end"),
            diameter,
        )
    elif kind == "vessels":
        branches = []
        for i, b in enumerate(_require(g, "branches", "geometry.")):
            where = f"geometry.branches[{i}]"
            if not isinstance(b, dict):
                raise SceneError(f"{where}: must be an object")
            pts = tuple(_vector(p, f"{where}.points[{j}]") for j, p in enumerate(_require(b, "points", where + ".")))
            radii_raw = _require(b, "radii", where + ".")
            radii = _vector(radii_raw, f"{where}.radii", n=len(radii_raw)) if isinstance(radii_raw, list) else None
            if radii is None:
                raise SceneError(f"{where}.radii: expected a list of numbers")
            try:
                branches.append(Branch(pts, radii))
            except SceneError as exc:
                raise SceneError(str(exc).replace("branches[]", f"geometry.branches[{i}]")) from None
        geom = VesselTree(tuple(branches))
    elif kind in ("empty", None):
        geom = VesselTree()
    else:
        raise SceneError(f"geometry.type: expected 'fiber', 'vessels' or 'empty', got {kind!r}")
    scene = PhantomScene(tuple(int(v) for v in dims), spacing, geom, amplitude)
    scene.validate()
    return scene


def beam_from_dict(d: dict | None) -> BeamModel:
    d = d or {}
    # focal_depth_um is accepted for round trips; foci are chosen per generate call
    known = {"wavelength_um", "na", "waist_um", "rayleigh_um", "focal_depth_um"}
    unknown = set(d) - known
    if unknown:
        raise SceneError(f"beam.{sorted(unknown)[0]}: unknown field")
    try:
        return BeamModel(
            wavelength_um=float(d.get("wavelength_um", 0.532)),
            na=float(d.get("na", 0.2)),
            waist_override_um=None if d.get("waist_um") is None else float(d["waist_um"]),
            rayleigh_override_um=None if d.get("rayleigh_um") is None else float(d["rayleigh_um"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(f"beam: {exc}") from None


def scene_to_dict(scene: PhantomScene) -> dict:
    geom = scene.geometry
    if isinstance(geom, TiltedFiber):
        g = {"type": "fiber", "start": list(geom.start), "end": list(geom.end), "diameter": geom.diameter}
    elif geom.branches:
        g = {
            "type": "vessels",
            "branches": [{"points": [list(p) for p in b.points], "radii": list(b.radii)} for b in geom.branches],
        }
    else:
        g = {"type": "empty"}
    return {"dims": list(scene.dims), "spacing": list(scene.spacing), "amplitude": scene.amplitude, "geometry": g}


def load_scene(path) -> tuple[PhantomScene, BeamModel]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene: invalid JSON ({exc})") from None
    scene = scene_from_dict(raw)
    return scene, beam_from_dict(raw.get("beam"))
