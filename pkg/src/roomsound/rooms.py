"""Parametric shoebox room model: materials, configuration grids, geometry.

The room is an axis-aligned box with the floor in the z=0 plane. ``length``
runs along x, ``width`` along y and ``height`` along z. The window sits on
the x=0 wall (the width-by-height wall), the furniture is a single box
standing on the floor, and source/receiver positions are fixed functions of
the room dimensions so that every configuration is reproducible.
"""

from __future__ import annotations

import importlib.resources
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

BANDS_HZ = (125, 250, 500, 1000, 2000, 4000)
N_BANDS = len(BANDS_HZ)

FURNITURE_HEIGHT_M = 0.75
SOURCE_WALL_OFFSET_M = 0.5
SOURCE_HEIGHT_M = 1.5
RECEIVER_HEIGHT_M = 1.2

SHADING_CHOICES = ("none", "roller_blind", "curtain")

TRAINING_DIMENSIONS = ((3.0, 4.0, 3.5), (6.0, 7.0, 3.5), (8.0, 10.0, 3.5))
TRAINING_WWR = (0.2, 0.5, 0.8)
TRAINING_FURNITURE = (0.2, 0.4)
TRAINING_WALLS = ("gypsum", "wooden", "acoustic_coating")
TRAINING_FLOORS = ("ceramic", "parquet", "carpet")
TRAINING_CEILINGS = ("concrete", "gypsum", "acoustic_tile")
TRAINING_WINDOWS = ("single_glazed", "double_glazed")

VALIDATION_DIMENSIONS = ((6.0, 7.0, 3.5),)
VALIDATION_WWR = (0.5,)
VALIDATION_SHADING = ("none",)
VALIDATION_FURNITURE = (0.2, 0.4)
VALIDATION_WALLS = ("gypsum_panel", "brick", "concrete")
VALIDATION_FLOORS = ("pvc", "thin_carpet")
VALIDATION_CEILINGS = ("slotted_panel", "acoustic_tile")
VALIDATION_WINDOWS = ("single_glazed", "double_glazed")


class RoomModelError(ValueError):
    """Invalid material data or room configuration."""


@dataclass(frozen=True)
class MaterialSpec:
    """Named surface finish with per-band absorption and scattering."""

    name: str
    absorption: tuple[float, ...]
    scattering: tuple[float, ...]

    def __post_init__(self):
        for label, coeffs in (("absorption", self.absorption),
                              ("scattering", self.scattering)):
            if len(coeffs) != N_BANDS:
                raise RoomModelError(
                    f"material {self.name!r}: {label} needs {N_BANDS} entries, "
                    f"got {len(coeffs)}")
            for c in coeffs:
                if not (0.0 <= c <= 1.0) or not math.isfinite(c):
                    raise RoomModelError(
                        f"material {self.name!r}: {label} coefficient {c} "
                        "outside [0, 1]")


def _parse_material_line(line):
    parts = line.split()
    if len(parts) != 1 + 2 * N_BANDS:
        raise RoomModelError(
            f"material row needs name + {2 * N_BANDS} coefficients: {line!r}")
    name = parts[0]
    values = [float(p) for p in parts[1:]]
    return MaterialSpec(name, tuple(values[:N_BANDS]), tuple(values[N_BANDS:]))


def load_material_database(path=None):
    """Load the material table (built-in file unless ``path`` is given).

    Returns a dict name -> MaterialSpec. The file format is plain text: one
    row per material, ``name`` followed by 6 absorption and 6 scattering
    values; ``#`` starts a comment.
    """
    if path is None:
        text = (importlib.resources.files("roomsound") / "data" /
                "materials.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    db = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        mat = _parse_material_line(line)
        if mat.name in db:
            raise RoomModelError(f"duplicate material {mat.name!r}")
        db[mat.name] = mat
    return db


_DEFAULT_DB = None


def default_materials():
    global _DEFAULT_DB
    if _DEFAULT_DB is None:
        _DEFAULT_DB = load_material_database()
    return _DEFAULT_DB


@dataclass(frozen=True)
class RoomConfig:
    """One point of the parametric grid."""

    length: float
    width: float
    height: float
    wwr: float
    shading: str
    furniture_fraction: float
    wall_material: MaterialSpec
    floor_material: MaterialSpec
    ceiling_material: MaterialSpec
    window_material: MaterialSpec

    def __post_init__(self):
        for label, v in (("length", self.length), ("width", self.width),
                         ("height", self.height)):
            if not (v > 0.0 and math.isfinite(v)):
                raise RoomModelError(f"{label} must be strictly positive, got {v}")
        if not 0.0 < self.wwr < 1.0:
            raise RoomModelError(f"wwr must lie in (0, 1), got {self.wwr}")
        if not 0.0 < self.furniture_fraction < 1.0:
            raise RoomModelError(
                f"furniture_fraction must lie in (0, 1), got {self.furniture_fraction}")
        if self.shading not in SHADING_CHOICES:
            raise RoomModelError(
                f"shading must be one of {SHADING_CHOICES}, got {self.shading!r}")

    @property
    def volume(self):
        return self.length * self.width * self.height

    def material_names(self):
        return (self.wall_material.name, self.floor_material.name,
                self.ceiling_material.name, self.window_material.name)

    def effective_window_material(self, db=None):
        """Window surface finish with the shading override applied.

        ``none`` keeps the glazing coefficients; a blind or curtain replaces
        them with its own absorption/scattering row.
        """
        if self.shading == "none":
            return self.window_material
        db = db or default_materials()
        return db[self.shading]

    def to_flat_dict(self):
        return {
            "length": self.length,
            "width": self.width,
            "height": self.height,
            "wwr": self.wwr,
            "shading": self.shading,
            "furniture_fraction": self.furniture_fraction,
            "wall_material": self.wall_material.name,
            "floor_material": self.floor_material.name,
            "ceiling_material": self.ceiling_material.name,
            "window_material": self.window_material.name,
        }

    def to_full_dict(self):
        """Flat document carrying the coefficient rows, not just names.

        Survives material-database edits and inline custom materials;
        from_flat_dict reconstructs an equivalent config from it.
        """
        doc = self.to_flat_dict()
        for surface in ("wall", "floor", "ceiling", "window"):
            mat = getattr(self, f"{surface}_material")
            doc[f"{surface}_absorption"] = list(mat.absorption)
            doc[f"{surface}_scattering"] = list(mat.scattering)
        return doc

    @classmethod
    def from_flat_dict(cls, doc, db=None):
        """Build a config from a flat key-value document.

        Materials are referenced by name; a ``<surface>_absorption`` entry
        (6 values, optionally with ``<surface>_scattering``) overrides the
        database lookup with an inline custom material.
        """
        db = db or default_materials()
        doc = dict(doc)
        mats = {}
        for surface in ("wall", "floor", "ceiling", "window"):
            alpha = doc.pop(f"{surface}_absorption", None)
            scat = doc.pop(f"{surface}_scattering", None)
            name = doc.pop(f"{surface}_material", None)
            if alpha is not None:
                if scat is None:
                    scat = (0.1,) * N_BANDS
                mats[surface] = MaterialSpec(
                    name or f"custom_{surface}", tuple(float(a) for a in alpha),
                    tuple(float(s) for s in scat))
            elif name is not None:
                if name not in db:
                    raise RoomModelError(f"unknown material {name!r}")
                mats[surface] = db[name]
            else:
                raise RoomModelError(f"missing {surface}_material")
        known = {"length", "width", "height", "wwr", "shading",
                 "furniture_fraction"}
        extra = set(doc) - known
        if extra:
            raise RoomModelError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(
                length=float(doc["length"]),
                width=float(doc["width"]),
                height=float(doc["height"]),
                wwr=float(doc["wwr"]),
                shading=str(doc.get("shading", "none")),
                furniture_fraction=float(doc["furniture_fraction"]),
                wall_material=mats["wall"],
                floor_material=mats["floor"],
                ceiling_material=mats["ceiling"],
                window_material=mats["window"],
            )
        except KeyError as exc:
            raise RoomModelError(f"missing config key: {exc.args[0]}") from None


def enumerate_training_grid(db=None):
    """Full Cartesian product of the training variables, lexicographic order.

    3 dimensions x 3 WWR x 3 shading x 2 furniture x 3 walls x 3 floors x
    3 ceilings x 2 windows = 2916 configurations.
    """
    db = db or default_materials()
    out = []
    for dims, wwr, shading, furn, wall, floor, ceil, win in itertools.product(
            TRAINING_DIMENSIONS, TRAINING_WWR, SHADING_CHOICES,
            TRAINING_FURNITURE, TRAINING_WALLS, TRAINING_FLOORS,
            TRAINING_CEILINGS, TRAINING_WINDOWS):
        out.append(RoomConfig(
            length=dims[0], width=dims[1], height=dims[2], wwr=wwr,
            shading=shading, furniture_fraction=furn,
            wall_material=db[wall], floor_material=db[floor],
            ceiling_material=db[ceil], window_material=db[win]))
    return out


def enumerate_validation_grid(db=None):
    """The 48 unseen-material configurations used for validation.

    Fixed at 6x7x3.5 m, WWR 50 %, no shading; material tuples are disjoint
    from the training grid.
    """
    db = db or default_materials()
    out = []
    for dims, wwr, shading, furn, wall, floor, ceil, win in itertools.product(
            VALIDATION_DIMENSIONS, VALIDATION_WWR, VALIDATION_SHADING,
            VALIDATION_FURNITURE, VALIDATION_WALLS, VALIDATION_FLOORS,
            VALIDATION_CEILINGS, VALIDATION_WINDOWS):
        out.append(RoomConfig(
            length=dims[0], width=dims[1], height=dims[2], wwr=wwr,
            shading=shading, furniture_fraction=furn,
            wall_material=db[wall], floor_material=db[floor],
            ceiling_material=db[ceil], window_material=db[win]))
    return out


def enumerate_reduced_grid(db=None):
    """Scaled-down 96-configuration subset used by the desk-scale test run.

    Varies dimensions (2), WWR (2), furniture (2), wall (3), floor (2) and
    glazing (2) while pinning shading and the ceiling, so the large-effect
    variables of the full grid stay exercised.
    """
    db = db or default_materials()
    out = []
    for dims, wwr, furn, wall, floor, win in itertools.product(
            (TRAINING_DIMENSIONS[0], TRAINING_DIMENSIONS[2]),
            (0.2, 0.8), TRAINING_FURNITURE, TRAINING_WALLS,
            ("ceramic", "carpet"), TRAINING_WINDOWS):
        out.append(RoomConfig(
            length=dims[0], width=dims[1], height=dims[2], wwr=wwr,
            shading="none", furniture_fraction=furn,
            wall_material=db[wall], floor_material=db[floor],
            ceiling_material=db["concrete"], window_material=db[win]))
    return out


# --- geometry ---------------------------------------------------------------

# A surface is an axis-aligned rectangle: the constant axis, the plane
# coordinate, bounds over the two free axes (in ascending axis order) and the
# sign of the inward normal (+axis or -axis, pointing into the air volume).

FREE_AXES = ((1, 2), (0, 2), (0, 1))


@dataclass(frozen=True)
class Surface:
    axis: int
    coord: float
    u0: float
    u1: float
    v0: float
    v1: float
    normal_sign: float
    material: MaterialSpec
    is_shell: bool
    label: str = ""

    @property
    def area(self):
        return (self.u1 - self.u0) * (self.v1 - self.v0)


@dataclass(frozen=True)
class SceneGeometry:
    surfaces: tuple[Surface, ...]
    source: tuple[float, float, float]
    receiver: tuple[float, float, float]
    length: float
    width: float
    height: float

    @property
    def volume(self):
        return self.length * self.width * self.height

    @property
    def total_area(self):
        return sum(s.area for s in self.surfaces)

    def arrays(self):
        """Struct-of-arrays view consumed by the simulation kernels."""
        n = len(self.surfaces)
        ax = np.empty(n, dtype=np.int64)
        coord = np.empty(n)
        bounds = np.empty((n, 4))
        nsign = np.empty(n)
        alpha = np.empty((n, N_BANDS))
        scat = np.empty((n, N_BANDS))
        for i, s in enumerate(self.surfaces):
            ax[i] = s.axis
            coord[i] = s.coord
            bounds[i] = (s.u0, s.u1, s.v0, s.v1)
            nsign[i] = s.normal_sign
            alpha[i] = s.material.absorption
            scat[i] = s.material.scattering
        return ax, coord, bounds, nsign, alpha, scat


def build_geometry(config: RoomConfig, db=None) -> SceneGeometry:
    """Realise a RoomConfig as surfaces plus source/receiver positions.

    The window is a centred rectangle on the x=0 wall with the wall's aspect
    ratio and area ``wwr * width * height``; it replaces (not overlays) part
    of the wall. The furniture box is centred on the floor with footprint
    ``furniture_fraction * length * width``.
    """
    db = db or default_materials()
    L, W, H = config.length, config.width, config.height
    wall = config.wall_material
    window = config.effective_window_material(db)

    wy = math.sqrt(config.wwr) * W
    wz = math.sqrt(config.wwr) * H
    if wy > W + 1e-12 or wz > H + 1e-12:
        raise RoomModelError(
            f"window {wy:.3f} x {wz:.3f} m does not fit the {W} x {H} m wall")
    y0, y1 = (W - wy) / 2.0, (W + wy) / 2.0
    z0, z1 = (H - wz) / 2.0, (H + wz) / 2.0

    surfaces = [
        Surface(0, 0.0, y0, y1, z0, z1, +1.0, window, True, "window"),
        Surface(0, 0.0, 0.0, y0, 0.0, H, +1.0, wall, True, "window_wall"),
        Surface(0, 0.0, y1, W, 0.0, H, +1.0, wall, True, "window_wall"),
        Surface(0, 0.0, y0, y1, 0.0, z0, +1.0, wall, True, "window_wall"),
        Surface(0, 0.0, y0, y1, z1, H, +1.0, wall, True, "window_wall"),
        Surface(0, L, 0.0, W, 0.0, H, -1.0, wall, True, "wall"),
        Surface(1, 0.0, 0.0, L, 0.0, H, +1.0, wall, True, "wall"),
        Surface(1, W, 0.0, L, 0.0, H, -1.0, wall, True, "wall"),
        Surface(2, 0.0, 0.0, L, 0.0, W, +1.0, config.floor_material, True,
                "floor"),
        Surface(2, H, 0.0, L, 0.0, W, -1.0, config.ceiling_material, True,
                "ceiling"),
    ]
    surfaces = [s for s in surfaces if s.area > 1e-12]

    fx = math.sqrt(config.furniture_fraction) * L
    fy = math.sqrt(config.furniture_fraction) * W
    fh = min(FURNITURE_HEIGHT_M, H)
    cx0, cx1 = (L - fx) / 2.0, (L + fx) / 2.0
    cy0, cy1 = (W - fy) / 2.0, (W + fy) / 2.0
    furn = db["furniture"]
    surfaces += [
        Surface(0, cx0, cy0, cy1, 0.0, fh, -1.0, furn, False, "furniture"),
        Surface(0, cx1, cy0, cy1, 0.0, fh, +1.0, furn, False, "furniture"),
        Surface(1, cy0, cx0, cx1, 0.0, fh, -1.0, furn, False, "furniture"),
        Surface(1, cy1, cx0, cx1, 0.0, fh, +1.0, furn, False, "furniture"),
        Surface(2, fh, cx0, cx1, cy0, cy1, +1.0, furn, False, "furniture"),
    ]

    source = (SOURCE_WALL_OFFSET_M, SOURCE_WALL_OFFSET_M,
              min(SOURCE_HEIGHT_M, 0.9 * H))
    receiver = (L / 2.0, W / 2.0, min(RECEIVER_HEIGHT_M, 0.9 * H))
    geo = SceneGeometry(tuple(surfaces), source, receiver, L, W, H)
    _check_points_inside(geo, cx0, cx1, cy0, cy1, fh)
    return geo


def build_empty_box(length, width, height, alpha, scattering=1.0,
                    source=None, receiver=None):
    """Uniform-material box without window or furniture.

    Test geometry for diffuse-field comparisons against the Sabine/Eyring
    formulas; ``alpha`` and ``scattering`` may be scalars or 6-vectors.
    """
    alpha = tuple(np.broadcast_to(np.asarray(alpha, dtype=float), N_BANDS))
    scattering = tuple(np.broadcast_to(np.asarray(scattering, dtype=float),
                                       N_BANDS))
    mat = MaterialSpec("uniform", alpha, scattering)
    L, W, H = float(length), float(width), float(height)
    surfaces = (
        Surface(0, 0.0, 0.0, W, 0.0, H, +1.0, mat, True, "wall"),
        Surface(0, L, 0.0, W, 0.0, H, -1.0, mat, True, "wall"),
        Surface(1, 0.0, 0.0, L, 0.0, H, +1.0, mat, True, "wall"),
        Surface(1, W, 0.0, L, 0.0, H, -1.0, mat, True, "wall"),
        Surface(2, 0.0, 0.0, L, 0.0, W, +1.0, mat, True, "floor"),
        Surface(2, H, 0.0, L, 0.0, W, -1.0, mat, True, "ceiling"),
    )
    if source is None:
        source = (SOURCE_WALL_OFFSET_M, SOURCE_WALL_OFFSET_M,
                  min(SOURCE_HEIGHT_M, 0.9 * H))
    if receiver is None:
        receiver = (L / 2.0, W / 2.0, min(RECEIVER_HEIGHT_M, 0.9 * H))
    return SceneGeometry(surfaces, tuple(source), tuple(receiver), L, W, H)


def _check_points_inside(geo, cx0, cx1, cy0, cy1, fh):
    for label, p in (("source", geo.source), ("receiver", geo.receiver)):
        x, y, z = p
        if not (0 < x < geo.length and 0 < y < geo.width and 0 < z < geo.height):
            raise RoomModelError(f"{label} {p} outside the room shell")
        if cx0 < x < cx1 and cy0 < y < cy1 and z < fh:
            raise RoomModelError(f"{label} {p} inside the furniture box")


def check_watertight(geo: SceneGeometry):
    """Verify every shell edge is shared by exactly two shell polygons.

    Edges are grouped by their supporting 3D line; along each line the
    rectangle boundary segments must cover every elementary interval exactly
    twice. Raises RoomModelError on a leak.
    """
    lines = {}

    def add(direction, fixed, lo, hi):
        key = (direction, round(fixed[0], 9), round(fixed[1], 9))
        lines.setdefault(key, []).append((lo, hi))

    for s in geo.surfaces:
        if not s.is_shell:
            continue
        a1, a2 = FREE_AXES[s.axis]
        # four boundary edges of the rectangle: two along a1, two along a2
        for v in (s.v0, s.v1):
            add(a1, _fixed_coords(s.axis, s.coord, a2, v), s.u0, s.u1)
        for u in (s.u0, s.u1):
            add(a2, _fixed_coords(s.axis, s.coord, a1, u), s.v0, s.v1)

    for key, intervals in lines.items():
        points = sorted({p for iv in intervals for p in iv})
        for lo, hi in zip(points[:-1], points[1:]):
            mid = (lo + hi) / 2.0
            cover = sum(1 for a, b in intervals if a - 1e-9 < mid < b + 1e-9)
            if cover != 2:
                raise RoomModelError(
                    f"shell edge on line {key} covered {cover} times in "
                    f"[{lo}, {hi}] (want 2)")


def _fixed_coords(axis, coord, other_axis, other_value):
    # coordinates of the two axes that are constant along the edge line,
    # keyed in ascending axis order
    pairs = sorted([(axis, coord), (other_axis, other_value)])
    return (pairs[0][1], pairs[1][1])
