"""Procedural living-room / kitchen scenes with complete affordance labels.

Scenes are drawn by a small 2.5D layered rasterizer: every object is a set
of flat parts (rounded rectangles and ellipses) in a side-on room, painted
back to front. Each randomized factor lives in :class:`SceneSpec` so that
rendering is a pure function of the spec:

* material: per-object base color, texture-noise amplitude and gloss, drawn
  from a set that depends on the object kind
* position: floor objects along the room, wall objects on the wall, plates
  on the table top, cutlery beside the plate
* shape: ``shape_t`` blends two key shapes (corner radius, aspect, ...)
* illumination: indoor/outdoor intensity and a day factor
* perspective: a pan/zoom window picked along a fixed camera trajectory

The catalog and material tables below are stand-ins authored for this
package; they are not taken from any published scene model.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import PartLabelMap, RgbRaster
from .mapgen import Sample, write_manifest
from .transfer import TransferTable, bundled_table, resolve, resolve_map

ROOM_KINDS = ("living_room", "kitchen")
ROOM_LENGTH = 4.0
MIN_VIEW = 32

# every label path the renderer can emit; legend index = position + 1
CATALOG_LABELS: tuple[str, ...] = (
    "void",
    "floor",
    "wall",
    "road",
    "rug",
    "window/frame",
    "window/pane",
    "door/panel",
    "door/handle",
    "door/knob",
    "table/top",
    "table/leg",
    "chair/seat",
    "chair/backrest",
    "chair/leg",
    "lamp/bulb",
    "lamp/stand",
    "display",
    "button-panel",
    "fireplace",
    "towel",
    "vase",
    "pot",
    "plate",
    "cutlery/fork",
    "cutlery/knife",
    "cabinet/body",
    "cabinet/top",
    "cabinet/drawer",
    "cabinet/drawer/knob",
)
LABEL_INDEX = {path: i + 1 for i, path in enumerate(CATALOG_LABELS)}
LEGEND = {i: path for path, i in LABEL_INDEX.items()}

# (name, rgb, noise amplitude, gloss)
MATERIALS: dict[str, tuple[tuple[float, float, float], float, float]] = {
    "oak": ((0.62, 0.45, 0.28), 0.25, 0.2),
    "walnut": ((0.38, 0.25, 0.16), 0.25, 0.3),
    "pine": ((0.80, 0.66, 0.45), 0.2, 0.1),
    "white_paint": ((0.90, 0.89, 0.86), 0.04, 0.1),
    "beige_paint": ((0.86, 0.79, 0.66), 0.05, 0.1),
    "blue_paint": ((0.55, 0.66, 0.78), 0.05, 0.1),
    "green_paint": ((0.62, 0.74, 0.60), 0.05, 0.1),
    "wallpaper": ((0.78, 0.70, 0.74), 0.35, 0.0),
    "brick": ((0.63, 0.32, 0.24), 0.4, 0.0),
    "stone": ((0.55, 0.54, 0.52), 0.35, 0.1),
    "tile": ((0.85, 0.85, 0.82), 0.15, 0.5),
    "dark_tile": ((0.30, 0.30, 0.32), 0.15, 0.5),
    "carpet": ((0.52, 0.42, 0.40), 0.3, 0.0),
    "plastic_white": ((0.93, 0.93, 0.93), 0.03, 0.4),
    "plastic_red": ((0.80, 0.18, 0.15), 0.03, 0.4),
    "plastic_black": ((0.12, 0.12, 0.13), 0.03, 0.5),
    "glass_clear": ((0.72, 0.82, 0.85), 0.05, 0.9),
    "glass_frosted": ((0.84, 0.88, 0.89), 0.1, 0.3),
    "steel": ((0.70, 0.71, 0.73), 0.08, 0.8),
    "copper": ((0.72, 0.45, 0.30), 0.1, 0.7),
    "brass": ((0.78, 0.65, 0.30), 0.08, 0.7),
    "ceramic_white": ((0.95, 0.95, 0.93), 0.03, 0.6),
    "ceramic_blue": ((0.30, 0.42, 0.70), 0.05, 0.6),
    "fabric_grey": ((0.50, 0.50, 0.52), 0.2, 0.0),
    "fabric_red": ((0.62, 0.20, 0.22), 0.2, 0.0),
    "fabric_green": ((0.30, 0.50, 0.35), 0.2, 0.0),
    "cotton_yellow": ((0.92, 0.82, 0.40), 0.15, 0.0),
    "cotton_striped": ((0.85, 0.85, 0.95), 0.45, 0.0),
    "screen": ((0.08, 0.09, 0.12), 0.05, 0.9),
    "bulb": ((1.00, 0.95, 0.75), 0.0, 0.0),
}

ALLOWED_MATERIALS: dict[str, tuple[str, ...]] = {
    "floor": ("oak", "walnut", "pine", "tile", "dark_tile", "carpet", "stone"),
    "wall": ("white_paint", "beige_paint", "blue_paint", "green_paint", "wallpaper", "brick"),
    "rug": ("carpet", "fabric_grey", "fabric_red", "fabric_green"),
    "window": ("plastic_white", "oak", "walnut"),
    "door": ("oak", "walnut", "pine", "white_paint"),
    "table": ("oak", "walnut", "pine", "plastic_white", "glass_clear", "glass_frosted"),
    "chair": ("oak", "walnut", "plastic_white", "plastic_red", "plastic_black", "fabric_grey"),
    "lamp": ("steel", "brass", "plastic_black", "plastic_white"),
    "display": ("screen",),
    "button-panel": ("plastic_white", "plastic_black", "steel"),
    "fireplace": ("brick", "stone"),
    "towel": ("cotton_yellow", "cotton_striped", "fabric_red"),
    "vase": ("ceramic_white", "ceramic_blue", "glass_clear", "copper"),
    "pot": ("steel", "copper", "ceramic_white", "plastic_black"),
    "plate": ("ceramic_white", "ceramic_blue", "glass_frosted"),
    "cutlery": ("steel", "brass"),
    "cabinet": ("oak", "walnut", "white_paint", "blue_paint", "plastic_white"),
}

MANDATORY: dict[str, tuple[str, ...]] = {
    "living_room": ("floor", "wall", "table", "chair", "window", "door"),
    "kitchen": ("floor", "wall", "table", "pot", "cabinet"),
}
# optional objects and their inclusion probability
OPTIONAL: dict[str, dict[str, float]] = {
    "living_room": {
        "lamp": 0.8, "display": 0.7, "fireplace": 0.5, "rug": 0.6, "vase": 0.6,
        "plate": 0.3, "button-panel": 0.7, "chair2": 0.5,
    },
    "kitchen": {
        "chair": 0.6, "chair2": 0.3, "plate": 0.8, "towel": 0.7, "window": 0.7,
        "door": 0.6, "button-panel": 0.6, "display": 0.2, "lamp": 0.3,
    },
}


class ConfigurationError(ValueError):
    """The transfer table does not cover the simulator catalog."""


@dataclass
class Material:
    name: str
    color: tuple[float, float, float]
    noise: float
    gloss: float


@dataclass
class ObjectInstance:
    """One catalog object. ``x``/``y`` anchor its bottom center in room units
    (y grows downward); ``layer`` orders painting; ``size`` is (width, height)."""

    kind: str
    material: Material
    x: float
    y: float
    layer: int
    size: tuple[float, float]
    shape_t: float
    params: dict = field(default_factory=dict)

    @property
    def parts(self) -> list["Part"]:
        return object_parts(self)

    def x_range(self) -> tuple[float, float]:
        return self.x - self.size[0] / 2, self.x + self.size[0] / 2


@dataclass
class Illumination:
    outdoor_intensity: float
    indoor_intensity: float
    day_factor: float


@dataclass
class Camera:
    trajectory_t: float
    position_jitter: tuple[float, float]
    zoom: float


@dataclass
class SceneSpec:
    seed: int
    room_kind: str
    horizon: float
    objects: list[ObjectInstance]
    illumination: Illumination
    camera: Camera

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        d = json.loads(text)
        objects = [
            ObjectInstance(
                o["kind"], Material(o["material"]["name"], tuple(o["material"]["color"]),
                                    o["material"]["noise"], o["material"]["gloss"]),
                o["x"], o["y"], o["layer"], tuple(o["size"]), o["shape_t"], o["params"],
            )
            for o in d["objects"]
        ]
        cam = d["camera"]
        return cls(
            d["seed"], d["room_kind"], d["horizon"], objects, Illumination(**d["illumination"]),
            Camera(cam["trajectory_t"], tuple(cam["position_jitter"]), cam["zoom"]),
        )

    def find(self, kind: str) -> ObjectInstance | None:
        return next((o for o in self.objects if o.kind == kind), None)


# --- sampling --------------------------------------------------------------


def _material(rng, kind: str) -> Material:
    names = ALLOWED_MATERIALS[kind]
    name = names[int(rng.integers(len(names)))]
    color, noise, gloss = MATERIALS[name]
    return Material(name, color, noise, gloss)


def _free_slot(rng, taken, width, lo, hi, tries=40):
    """Center x for an interval of ``width`` inside [lo, hi] avoiding ``taken``."""
    for _ in range(tries):
        if hi - lo < width:
            return None
        x = float(rng.uniform(lo + width / 2, hi - width / 2))
        if all(x + width / 2 + 0.05 < a or x - width / 2 - 0.05 > b for a, b in taken):
            return x
    return None


def sample_scene(seed: int, room_kind: str = "living_room") -> SceneSpec:
    if room_kind not in ROOM_KINDS:
        raise ValueError(f"room_kind must be one of {ROOM_KINDS}, got {room_kind!r}")
    rng = np.random.default_rng([seed & (2**64 - 1), ROOM_KINDS.index(room_kind)])
    wanted = list(MANDATORY[room_kind])
    for kind, p in OPTIONAL[room_kind].items():
        if rng.random() < p and kind not in wanted:
            wanted.append(kind)
    if "chair2" in wanted and "chair" not in wanted:
        wanted.remove("chair2")

    horizon = float(rng.uniform(1.05, 1.25))
    objs: list[ObjectInstance] = [
        ObjectInstance("wall", _material(rng, "wall"), ROOM_LENGTH / 2, horizon, 0,
                       (ROOM_LENGTH, horizon), 0.0),
        ObjectInstance("floor", _material(rng, "floor"), ROOM_LENGTH / 2, 2.0, 0,
                       (ROOM_LENGTH, 2.0 - horizon), 0.0),
    ]

    # wall-mounted objects, bottom edge given relative to the horizon
    wall_taken: list[tuple[float, float]] = []
    wall_specs = {
        "door": ((0.55, 0.95), 0.0),
        "cabinet": ((0.7, 0.6), 0.0),
        "fireplace": ((0.7, 0.55), 0.0),
        "window": ((0.65, 0.55), 0.35),
        "display": ((0.55, 0.32), 0.45),
        "towel": ((0.18, 0.3), 0.45),
    }
    for kind, ((w, h), lift) in wall_specs.items():
        if kind not in wanted:
            continue
        s = float(rng.uniform(0.85, 1.15))
        w, h = w * s, h * s
        x = _free_slot(rng, wall_taken, w, 0.05, ROOM_LENGTH - 0.05)
        if x is None:
            continue
        wall_taken.append((x - w / 2, x + w / 2))
        params = {}
        if kind == "door":
            params["opening"] = float(rng.uniform(0.0, 0.35))
            params["hinge_left"] = bool(rng.random() < 0.5)
            params["knob"] = bool(rng.random() < 0.5)
        if kind == "cabinet":
            params["drawers"] = int(rng.integers(1, 4))
        y = horizon - lift * float(rng.uniform(0.9, 1.1))
        objs.append(ObjectInstance(kind, _material(rng, kind), x, y, 1, (w, h),
                                   float(rng.uniform()), params))
        if kind == "door" and "button-panel" in wanted:
            side = -1 if params["hinge_left"] else 1
            bx = x + side * (w / 2 + 0.1)
            if 0.05 < bx < ROOM_LENGTH - 0.05:
                objs.append(ObjectInstance("button-panel", _material(rng, "button-panel"),
                                           bx, y - 0.5 * h, 1, (0.07, 0.1), float(rng.uniform())))

    # floor objects: table with chairs beside it, floor lamp elsewhere
    floor_taken: list[tuple[float, float]] = []
    depth = float(rng.uniform(0.15, 0.45))  # distance of the table base below the horizon
    scale = 0.75 + 0.9 * depth
    tw = float(rng.uniform(0.6, 0.95)) * scale
    th = 0.42 * scale
    chairs = [k for k in ("chair", "chair2") if k in wanted]
    cw = 0.32 * scale
    span = tw + len(chairs) * (cw + 0.08)
    tx = float(rng.uniform(0.25 + span / 2, ROOM_LENGTH - 0.25 - span / 2))
    base_y = horizon + depth
    table = ObjectInstance("table", _material(rng, "table"), tx, base_y, 3, (tw, th),
                           float(rng.uniform()), {"top_depth": 0.14 * scale})
    objs.append(table)
    floor_taken.append((tx - tw / 2, tx + tw / 2))
    if "rug" in wanted:
        rw = tw * float(rng.uniform(1.4, 2.0))
        objs.append(ObjectInstance("rug", _material(rng, "rug"), tx + float(rng.uniform(-0.1, 0.1)),
                                   base_y + 0.08 * scale, 2, (rw, 0.22 * scale), float(rng.uniform())))
    sides = [-1, 1] if rng.random() < 0.5 else [1, -1]
    for kind, side in zip(chairs, sides):
        cx = tx + side * (tw / 2 + 0.06 + cw / 2)
        objs.append(ObjectInstance("chair", _material(rng, "chair"), cx, base_y + 0.02 * scale, 3,
                                   (cw, 0.75 * scale), float(rng.uniform()),
                                   {"facing": -side}))
        floor_taken.append((cx - cw / 2, cx + cw / 2))
    if "lamp" in wanted:
        lw = 0.22
        lx = _free_slot(rng, floor_taken, lw, 0.1, ROOM_LENGTH - 0.1)
        if lx is not None:
            ld = float(rng.uniform(0.05, 0.35))
            objs.append(ObjectInstance("lamp", _material(rng, "lamp"), lx, horizon + ld, 3,
                                       (lw, (1.05 + 0.4 * ld) * float(rng.uniform(0.85, 1.1))),
                                       float(rng.uniform())))

    # objects on the table top; slots keep them clear of the top's ends
    top_x0, top_x1 = tx - tw / 2, tx + tw / 2
    top_y = base_y - th  # front edge of the top surface
    top_depth = table.params["top_depth"]
    margin = 0.12 * tw
    table_taken: list[tuple[float, float]] = []
    if "plate" in wanted:
        pw = 0.2 * scale
        px = _free_slot(rng, table_taken, pw + 0.16 * scale, top_x0 + margin, top_x1 - margin)
        if px is not None:
            py = top_y - top_depth * float(rng.uniform(0.1, 0.4))
            objs.append(ObjectInstance("plate", _material(rng, "plate"), px, py, 4,
                                       (pw, 0.45 * top_depth), float(rng.uniform())))
            table_taken.append((px - pw / 2 - 0.08 * scale, px + pw / 2 + 0.08 * scale))
            cut = _material(rng, "cutlery")
            for dx, part in ((-1, "fork"), (1, "knife")):
                objs.append(ObjectInstance("cutlery", cut, px + dx * (pw / 2 + 0.035 * scale), py, 5,
                                           (0.018 * scale, 0.45 * top_depth), float(rng.uniform()),
                                           {"part": part}))
    for kind, (w, h) in (("pot", (0.2, 0.16)), ("vase", (0.1, 0.26))):
        if kind not in wanted:
            continue
        w, h = w * scale, h * scale
        x = _free_slot(rng, table_taken, w, top_x0 + margin, top_x1 - margin)
        if x is None:
            if kind in MANDATORY[room_kind]:
                x = top_x0 + margin + w / 2
            else:
                continue
        table_taken.append((x - w / 2, x + w / 2))
        y = top_y - top_depth * float(rng.uniform(0.3, 0.7))
        objs.append(ObjectInstance(kind, _material(rng, kind), x, y, 4, (w, h), float(rng.uniform())))

    day = float(rng.uniform())
    illumination = Illumination(
        outdoor_intensity=float(rng.uniform(0.6, 1.2)),
        indoor_intensity=float(rng.uniform(0.35, 1.0)),
        day_factor=day,
    )
    camera = Camera(
        trajectory_t=float(rng.uniform()),
        position_jitter=(float(rng.normal(0, 0.08)), float(rng.normal(0, 0.04))),
        zoom=float(rng.uniform(1.0, 1.6)),
    )
    return SceneSpec(int(seed), room_kind, horizon, objs, illumination, camera)


# --- geometry ----------------------------------------------------------------


@dataclass
class Part:
    """A flat region of an object. ``box`` is (x0, y0, x1, y1) in room units."""

    label: str
    shape: str  # "rect" or "ellipse"
    box: tuple[float, float, float, float]
    radius: float = 0.0
    shade: float = 1.0
    emissive: bool = False
    material: Material | None = None


def _lerp(a, b, t):
    return a + (b - a) * t


def object_parts(o: ObjectInstance) -> list[Part]:
    x0, x1 = o.x_range()
    w, h = o.size
    t = o.shape_t
    k = o.kind
    if k == "wall":
        return [Part("wall", "rect", (-1e3, -1e3, 1e3, o.y))]
    if k == "floor":
        return [Part("floor", "rect", (-1e3, o.y - o.size[1], 1e3, 1e3))]
    if k == "rug":
        return [Part("rug", "ellipse" if t > 0.5 else "rect", (x0, o.y - h, x1, o.y), radius=0.3 * h)]
    if k == "door":
        top = o.y - h
        parts = [Part("void", "rect", (x0, top, x1, o.y))]
        open_w = w * (1 - o.params.get("opening", 0.0))
        hinge_left = o.params.get("hinge_left", True)
        px0, px1 = (x0, x0 + open_w) if hinge_left else (x1 - open_w, x1)
        parts.append(Part("door/panel", "rect", (px0, top, px1, o.y), radius=0.01 * t))
        hx = px1 - 0.08 * w if hinge_left else px0 + 0.08 * w
        hy = o.y - 0.48 * h
        if o.params.get("knob"):
            r = 0.035 * w
            parts.append(Part("door/knob", "ellipse", (hx - r, hy - r, hx + r, hy + r), shade=0.8))
        else:
            parts.append(Part("door/handle", "rect", (hx - 0.1 * w, hy - 0.02 * w, hx + 0.1 * w, hy + 0.02 * w),
                              shade=0.7, material=Material("steel", *MATERIALS["steel"])))
        return parts
    if k == "window":
        top = o.y - h
        f = 0.06 * min(w, h)
        horizon_in = _lerp(top + f, o.y - f, 0.62)
        return [
            Part("window/frame", "rect", (x0, top, x1, o.y), radius=f * t),
            Part("window/pane", "rect", (x0 + f, top + f, x1 - f, o.y - f), emissive=True),
            Part("road", "rect", (x0 + f, horizon_in, x1 - f, o.y - f), emissive=True, shade=0.45),
        ]
    if k == "display":
        top = o.y - h
        b = 0.05 * h
        return [Part("display", "rect", (x0, top, x1, o.y), radius=0.02 * t),
                Part("display", "rect", (x0 + b, top + b, x1 - b, o.y - b), emissive=True, shade=0.5)]
    if k == "towel":
        return [Part("towel", "rect", (x0, o.y - h, x1, o.y), radius=0.3 * w * t)]
    if k == "button-panel":
        return [Part("button-panel", "rect", (x0, o.y - h, x1, o.y), radius=0.2 * w * t)]
    if k == "fireplace":
        top = o.y - h
        ow = _lerp(0.45, 0.65, t) * w
        return [Part("fireplace", "rect", (x0, top, x1, o.y)),
                Part("fireplace", "ellipse" if t > 0.5 else "rect",
                     (o.x - ow / 2, o.y - 0.6 * h, o.x + ow / 2, o.y + 0.3 * h), shade=0.15)]
    if k == "cabinet":
        top = o.y - h
        parts = [Part("cabinet/body", "rect", (x0, top, x1, o.y)),
                 Part("cabinet/top", "rect", (x0 - 0.02, top - 0.05, x1 + 0.02, top + 0.01), shade=1.1)]
        n = o.params.get("drawers", 2)
        dh = (h - 0.1) / n
        for i in range(n):
            d0 = top + 0.05 + i * dh
            parts.append(Part("cabinet/drawer", "rect", (x0 + 0.04, d0 + 0.02, x1 - 0.04, d0 + dh - 0.02),
                              radius=0.02 * t, shade=0.9))
            r = 0.025
            cy = d0 + dh / 2
            parts.append(Part("cabinet/drawer/knob", "ellipse", (o.x - r, cy - r, o.x + r, cy + r),
                              material=Material("brass", *MATERIALS["brass"])))
        return parts
    if k == "table":
        top_y = o.y - h
        d = o.params["top_depth"]
        thick = 0.25 * d
        leg = 0.07 * w
        inset = _lerp(0.02, 0.08, t) * w
        return [
            Part("table/leg", "rect", (x0 + inset, top_y, x0 + inset + leg, o.y), shade=0.8),
            Part("table/leg", "rect", (x1 - inset - leg, top_y, x1 - inset, o.y), shade=0.8),
            Part("table/top", "rect", (x0, top_y - d, x1, top_y + thick), radius=_lerp(0.0, 0.5, t) * d),
        ]
    if k == "chair":
        seat_y = o.y - 0.55 * h
        facing = o.params.get("facing", 1)
        back_x = x0 if facing > 0 else x1 - 0.15 * w
        r = _lerp(0.0, 0.05, t) * w
        return [
            Part("chair/leg", "rect", (x0 + 0.05 * w, seat_y, x0 + 0.15 * w, o.y), shade=0.8),
            Part("chair/leg", "rect", (x1 - 0.15 * w, seat_y, x1 - 0.05 * w, o.y), shade=0.8),
            Part("chair/backrest", "rect", (back_x, o.y - h, back_x + 0.15 * w, seat_y), radius=r, shade=0.9),
            Part("chair/seat", "rect", (x0, seat_y - 0.09 * h, x1, seat_y), radius=r),
        ]
    if k == "lamp":
        top = o.y - h
        shade_w = _lerp(0.6, 1.0, t) * w
        return [
            Part("lamp/stand", "rect", (o.x - 0.04 * w, top + 0.2 * h, o.x + 0.04 * w, o.y)),
            Part("lamp/stand", "rect", (o.x - 0.35 * w, o.y - 0.03 * h, o.x + 0.35 * w, o.y), radius=0.01),
            Part("lamp/stand", "rect", (o.x - shade_w / 2, top, o.x + shade_w / 2, top + 0.18 * h),
                 radius=0.05 * t, shade=1.05),
            Part("lamp/bulb", "ellipse", (o.x - 0.22 * w, top + 0.15 * h, o.x + 0.22 * w, top + 0.25 * h),
                 emissive=True, material=Material("bulb", *MATERIALS["bulb"])),
        ]
    if k in ("pot", "vase"):
        top = o.y - h
        ry = _lerp(0.3, 0.5, t) * w if k == "vase" else 0.12 * h
        parts = [Part(k, "rect", (x0, top, x1, o.y), radius=min(_lerp(0.05, 0.45, t) * w, w / 2))]
        if k == "pot":
            parts.append(Part("pot", "rect", (x0 - 0.08 * w, top + 0.15 * h, x1 + 0.08 * w, top + 0.25 * h),
                              shade=0.85))
        else:
            parts.append(Part("vase", "ellipse", (x0, o.y - 2 * ry, x1, o.y)))
        return parts
    if k == "plate":
        return [Part("plate", "ellipse", (x0, o.y - h, x1, o.y)),
                Part("plate", "ellipse", (x0 + 0.2 * w, o.y - 0.8 * h, x1 - 0.2 * w, o.y - 0.2 * h), shade=0.93)]
    if k == "cutlery":
        return [Part(f"cutlery/{o.params.get('part', 'fork')}", "rect", (x0, o.y - h, x1, o.y),
                     radius=0.4 * w * t)]
    raise ValueError(f"unknown object kind {k!r}")


def _region(part: Part, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1 = part.box
    if part.shape == "ellipse":
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        rx, ry = max((x1 - x0) / 2, 1e-9), max((y1 - y0) / 2, 1e-9)
        return ((X - cx) / rx) ** 2 + ((Y - cy) / ry) ** 2 <= 1.0
    inside = (X >= x0) & (X < x1) & (Y >= y0) & (Y < y1)
    r = min(part.radius, (x1 - x0) / 2, (y1 - y0) / 2)
    if r <= 0:
        return inside
    # rounded corners: distance to the inner rectangle
    dx = np.maximum(np.maximum(x0 + r - X, X - (x1 - r)), 0.0)
    dy = np.maximum(np.maximum(y0 + r - Y, Y - (y1 - r)), 0.0)
    return inside & (dx * dx + dy * dy <= r * r)


def _value_noise(seed, X: np.ndarray, Y: np.ndarray, cell: float = 0.08) -> np.ndarray:
    """Bilinear value noise in [0, 1] over room coordinates."""
    rng = np.random.default_rng(seed)
    gx, gy = X / cell, Y / cell
    gx, gy = gx - np.floor(gx.min()), gy - np.floor(gy.min())
    grid = rng.random((int(gy.max()) + 2, int(gx.max()) + 2))
    ix, iy = np.floor(gx).astype(int), np.floor(gy).astype(int)
    fx, fy = gx - ix, gy - iy
    fx, fy = fx * fx * (3 - 2 * fx), fy * fy * (3 - 2 * fy)
    a = grid[iy, ix] * (1 - fx) + grid[iy, ix + 1] * fx
    b = grid[iy + 1, ix] * (1 - fx) + grid[iy + 1, ix + 1] * fx
    return a * (1 - fy) + b * fy


def camera_window(spec: SceneSpec, width: int, height: int) -> tuple[float, float, float, float]:
    """(x0, y0, x1, y1) of the visible room region."""
    cam = spec.camera
    view_w = 2.0 / cam.zoom
    view_h = view_w * height / width
    # trajectory: a pan along the room, clamped to keep the view inside it
    cx = _lerp(view_w / 2, ROOM_LENGTH - view_w / 2, cam.trajectory_t) + cam.position_jitter[0]
    cx = min(max(cx, view_w / 2), ROOM_LENGTH - view_w / 2)
    # keep the wall/floor boundary between 35% and 70% of the frame height
    frac = 0.52 + cam.position_jitter[1]
    frac = min(max(frac, 0.35), 0.7)
    y0 = spec.horizon - frac * view_h
    return cx - view_w / 2, y0, cx + view_w / 2, y0 + view_h


def _draw_order(spec: SceneSpec) -> list[tuple[int, ObjectInstance]]:
    idx = list(enumerate(spec.objects))
    return sorted(idx, key=lambda p: (p[1].layer, p[1].y, p[0]))


def render_labels(spec: SceneSpec, width: int, height: int) -> PartLabelMap:
    return _render(spec, width, height, with_color=False)[1]


def render_scene(spec: SceneSpec, width: int, height: int) -> tuple[RgbRaster, PartLabelMap]:
    """Paint the scene back to front; returns the RGB image and the part labels."""
    return _render(spec, width, height, with_color=True)


def _render(spec: SceneSpec, width: int, height: int, with_color: bool):
    if width < MIN_VIEW or height < MIN_VIEW:
        raise ValueError(f"viewport {width}x{height} is smaller than {MIN_VIEW}x{MIN_VIEW}")
    vx0, vy0, vx1, vy1 = camera_window(spec, width, height)
    xs = vx0 + (np.arange(width) + 0.5) * (vx1 - vx0) / width
    ys = vy0 + (np.arange(height) + 0.5) * (vy1 - vy0) / height
    X, Y = np.meshgrid(xs, ys)
    labels = np.zeros((height, width), dtype=np.uint16)
    rgb = np.zeros((height, width, 3))
    light = np.zeros((height, width, 3))
    ill = spec.illumination
    indoor_gain = 0.45 + 0.55 * ill.indoor_intensity + 0.35 * ill.day_factor * ill.outdoor_intensity
    # brighter toward the top of the frame where light enters
    yn = (Y - vy0) / (vy1 - vy0)
    gradient = 1.0 + (0.15 + 0.2 * ill.day_factor) * (0.5 - yn)
    sky = np.array(_lerp(np.array([0.05, 0.07, 0.18]), np.array([0.62, 0.78, 0.95]), ill.day_factor))
    outdoor = min(1.0, 0.3 + 0.7 * ill.outdoor_intensity) * _lerp(0.35, 1.0, ill.day_factor)

    for obj_index, obj in _draw_order(spec):
        for part_no, part in enumerate(obj.parts):
            region = _region(part, X, Y)
            if not region.any():
                continue
            labels[region] = LABEL_INDEX[part.label]
            if not with_color:
                continue
            mat = part.material or obj.material
            base = np.array(mat.color) * part.shade
            if part.emissive and part.label in ("window/pane", "road"):
                col = sky if part.label == "window/pane" else np.array([0.4, 0.4, 0.42])
                rgb[region] = col * outdoor
                light[region] = 1.0
                continue
            if part.emissive:
                glow = 0.35 + 0.65 * ill.indoor_intensity if part.label == "lamp/bulb" else 0.6
                rgb[region] = np.clip(base * glow, 0, 1)
                light[region] = 1.0
                continue
            noise = _value_noise([spec.seed & (2**64 - 1), obj_index, part_no], X[region], Y[region])
            tex = 1.0 + mat.noise * (noise - 0.5) * 1.6
            x0, y0, x1, y1 = part.box
            # glossy parts get a soft highlight band near their upper edge
            span = max(min(y1, vy1) - max(y0, vy0), 1e-6)
            v = (Y[region] - max(y0, vy0)) / span
            highlight = mat.gloss * 0.25 * np.exp(-((v - 0.2) / 0.15) ** 2)
            rgb[region] = base[None, :] * tex[:, None] + highlight[:, None]
            light[region] = 0.0

    if not with_color:
        return None, PartLabelMap(labels, LEGEND)
    lit = rgb * (indoor_gain * gradient)[..., None]
    out = np.where(light > 0, rgb, lit)
    return RgbRaster(np.clip(out, 0.0, 1.0)), PartLabelMap(labels, LEGEND)


def check_catalog_coverage(table: TransferTable) -> None:
    for path in CATALOG_LABELS:
        if resolve(table, path) is None:
            raise ConfigurationError(f"catalog label {path!r} has no match in the transfer table")


def render_affordance_pass(spec: SceneSpec, table: TransferTable, width: int, height: int) -> Sample:
    """Image plus fully covered affordance ground truth for one scene."""
    check_catalog_coverage(table)
    image, labels = render_scene(spec, width, height)
    target, mask = resolve_map(table, labels)
    return Sample(image, target, mask, f"sim-{spec.room_kind}-{spec.seed}")


def room_for(sample_seed: int, room_mix: float) -> str:
    """Room kind of a dataset sample; ``room_mix`` is the kitchen fraction."""
    u = np.random.default_rng([sample_seed & (2**64 - 1), 0x6B17]).random()
    return "kitchen" if u < room_mix else "living_room"


def generate_dataset(n: int, seed: int, room_mix: float, width: int, height: int, out_dir,
                     table: TransferTable | None = None) -> Path:
    """Render ``n`` scenes into ``out_dir`` and write ``manifest.json``.

    Sample ``i`` uses seed ``seed ^ i``, so any subset can be regenerated on
    its own.
    """
    from .core import save_image, save_mask, save_tensor

    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= room_mix <= 1.0:
        raise ValueError("room_mix must be in [0, 1]")
    table = table or bundled_table()
    check_catalog_coverage(table)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        s = (seed ^ i) & (2**64 - 1)
        spec = sample_scene(s, room_for(s, room_mix))
        sample = render_affordance_pass(spec, table, width, height)
        stem = f"sim_{i:05d}"
        save_image(sample.image, out_dir / f"{stem}.png")
        save_tensor(sample.target, out_dir / f"{stem}.afmt")
        save_mask(sample.mask, out_dir / f"{stem}.afmk")
        entries.append({"image": f"{stem}.png", "target": f"{stem}.afmt", "mask": f"{stem}.afmk",
                        "source_id": sample.source_id})
    return write_manifest(entries, out_dir / "manifest.json")
