"""2D scene geometry, the line-oriented scene file format and twin-pair generation.

A scene is a set of wall segments, each made of a material with a real relative
permittivity, a static receiver and an ordered list of transmitter positions.
The scene file format is one directive per line::

    # comment
    material <name> <eps_r>
    wall <ax> <ay> <bx> <by> <material>
    rx <x> <y>
    tx <id> <x> <y>
    band <f_min_hz> <f_max_hz> <n_points>

Lengths are in meters and frequencies in Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
BRICK_EPS_R = 3.91
BRICK = "brick"

Point = tuple[float, float]


class SceneError(ValueError):
    """Invalid scene content or scene file syntax."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Material:
    name: str
    eps_r: float

    def __post_init__(self):
        if not self.name or any(ch.isspace() for ch in self.name):
            raise SceneError(f"invalid material name {self.name!r}")
        if not (self.eps_r >= 1.0):
            raise SceneError(f"material {self.name!r}: eps_r={self.eps_r} < 1")


@dataclass(frozen=True)
class Wall:
    a: Point
    b: Point
    material: str

    def __post_init__(self):
        coords = (*self.a, *self.b)
        if not all(math.isfinite(c) for c in coords):
            raise SceneError("wall coordinates must be finite")
        if self.a == self.b:
            raise SceneError(f"zero-length wall at {self.a}")

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])


@dataclass(frozen=True)
class Band:
    f_min: float
    f_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 2:
            raise SceneError(f"band needs n_points >= 2, got {self.n_points}")
        if not (0.0 <= self.f_min < self.f_max) or not math.isfinite(self.f_max):
            raise SceneError(f"invalid band [{self.f_min}, {self.f_max}]")

    @property
    def center(self) -> float:
        return 0.5 * (self.f_min + self.f_max)

    @property
    def wavelength(self) -> float:
        """Wavelength at band center."""
        return SPEED_OF_LIGHT / self.center

    def frequencies(self) -> np.ndarray:
        return np.linspace(self.f_min, self.f_max, self.n_points)


@dataclass(frozen=True)
class Scene:
    """Immutable 2D scene.

    ``tx_positions[i]`` is the transmitter with id ``i``.
    """

    walls: tuple[Wall, ...]
    materials: tuple[Material, ...]
    rx: Point
    tx_positions: tuple[Point, ...]
    band: Band

    def __post_init__(self):
        names = [m.name for m in self.materials]
        if len(set(names)) != len(names):
            raise SceneError("duplicate material names")
        known = set(names)
        for wall in self.walls:
            if wall.material not in known:
                raise SceneError(f"unknown material {wall.material!r}")
        if not all(math.isfinite(c) for c in self.rx):
            raise SceneError("rx must be finite")
        for i, tx in enumerate(self.tx_positions):
            if not all(math.isfinite(c) for c in tx):
                raise SceneError(f"tx {i} must be finite")
            if tx == self.rx:
                raise SceneError(f"tx {i} coincides with rx")

    def material(self, name: str) -> Material:
        for m in self.materials:
            if m.name == name:
                return m
        raise KeyError(name)

    def wall_eps(self) -> np.ndarray:
        lookup = {m.name: m.eps_r for m in self.materials}
        return np.array([lookup[w.material] for w in self.walls], dtype=float)

    @property
    def n_tx(self) -> int:
        return len(self.tx_positions)

    def extent(self, margin: float = 0.0) -> tuple[float, float, float, float]:
        """Bounding box ``(xmin, ymin, xmax, ymax)`` of walls, rx and tx."""
        pts = [self.rx, *self.tx_positions]
        for w in self.walls:
            pts.extend((w.a, w.b))
        arr = np.asarray(pts, dtype=float)
        lo = arr.min(axis=0) - margin
        hi = arr.max(axis=0) + margin
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


# ---------------------------------------------------------------------------
# Scene file format
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _float(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise SceneError(f"expected a number, got {tok!r}", lineno) from None


def _int(tok: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise SceneError(f"expected an integer, got {tok!r}", lineno) from None


_ARITY = {"material": 2, "wall": 5, "rx": 2, "tx": 3, "band": 3}


def parse_scene(text: str) -> Scene:
    """Parse the scene file format into a :class:`Scene`.

    Materials must be declared before the walls that use them; all other
    directives may appear in any order.
    """
    materials: dict[str, Material] = {}
    walls: list[Wall] = []
    txs: dict[int, Point] = {}
    rx = None
    band = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *toks = line.split()
        if key not in _ARITY:
            raise SceneError(f"unknown directive {key!r}", lineno)
        if len(toks) != _ARITY[key]:
            raise SceneError(f"{key} expects {_ARITY[key]} arguments, got {len(toks)}", lineno)
        try:
            if key == "material":
                name = toks[0]
                if name in materials:
                    raise SceneError(f"duplicate material {name!r}", lineno)
                materials[name] = Material(name, _float(toks[1], lineno))
            elif key == "wall":
                ax, ay, bx, by = (_float(t, lineno) for t in toks[:4])
                if toks[4] not in materials:
                    raise SceneError(f"unknown material {toks[4]!r}", lineno)
                walls.append(Wall((ax, ay), (bx, by), toks[4]))
            elif key == "rx":
                if rx is not None:
                    raise SceneError("rx declared twice", lineno)
                rx = (_float(toks[0], lineno), _float(toks[1], lineno))
            elif key == "tx":
                tx_id = _int(toks[0], lineno)
                if tx_id in txs:
                    raise SceneError(f"duplicate tx id {tx_id}", lineno)
                txs[tx_id] = (_float(toks[1], lineno), _float(toks[2], lineno))
            elif key == "band":
                if band is not None:
                    raise SceneError("band declared twice", lineno)
                band = Band(_float(toks[0], lineno), _float(toks[1], lineno), _int(toks[2], lineno))
        except SceneError as exc:
            if exc.line is None:
                raise SceneError(str(exc), lineno) from None
            raise

    if rx is None:
        raise SceneError("missing rx directive")
    if band is None:
        raise SceneError("missing band directive")
    if sorted(txs) != list(range(len(txs))):
        raise SceneError("tx ids must be 0..N-1")
    return Scene(
        walls=tuple(walls),
        materials=tuple(materials.values()),
        rx=rx,
        tx_positions=tuple(txs[i] for i in range(len(txs))),
        band=band,
    )


def serialize_scene(scene: Scene) -> str:
    lines = [f"material {m.name} {_fmt(m.eps_r)}" for m in scene.materials]
    for w in scene.walls:
        lines.append(f"wall {_fmt(w.a[0])} {_fmt(w.a[1])} {_fmt(w.b[0])} {_fmt(w.b[1])} {w.material}")
    lines.append(f"rx {_fmt(scene.rx[0])} {_fmt(scene.rx[1])}")
    for i, (x, y) in enumerate(scene.tx_positions):
        lines.append(f"tx {i} {_fmt(x)} {_fmt(y)}")
    b = scene.band
    lines.append(f"band {_fmt(b.f_min)} {_fmt(b.f_max)} {b.n_points}")
    return "\n".join(lines) + "\n"


def load_scene(path) -> Scene:
    with open(path, encoding="utf-8") as fh:
        return parse_scene(fh.read())


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_scene(scene))


# ---------------------------------------------------------------------------
# Twin pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationSpec:
    """How the ground-truth scene departs from the all-brick twin.

    ``bbox`` is ``(xmin, ymin, xmax, ymax)``; ``None`` uses the base scene extent.
    """

    eps_range: tuple[float, float] = (2.0, 8.0)
    clutter_count: int = 2
    clutter_length: tuple[float, float] = (2.0, 8.0)
    bbox: tuple[float, float, float, float] | None = None
    clearance: float = 0.5

    @classmethod
    def identity(cls) -> "PerturbationSpec":
        return cls(eps_range=(BRICK_EPS_R, BRICK_EPS_R), clutter_count=0)


@dataclass(frozen=True)
class TwinPair:
    truth: Scene
    twin: Scene
    perturbation_seed: int
    n_base_walls: int = field(default=0)


def _segment_point_distance(a, b, p) -> float:
    a, b, p = (np.asarray(v, dtype=float) for v in (a, b, p))
    d = b - a
    t = np.clip(np.dot(p - a, d) / np.dot(d, d), 0.0, 1.0)
    return float(np.linalg.norm(a + t * d - p))


def _as_twin(base: Scene) -> Scene:
    walls = tuple(replace(w, material=BRICK) for w in base.walls)
    return replace(base, walls=walls, materials=(Material(BRICK, BRICK_EPS_R),))


def generate_twin_pair(base: Scene, perturb: PerturbationSpec, seed: int) -> TwinPair:
    """Build a (ground truth, uncalibrated twin) pair from ``base``.

    The twin keeps the base geometry with every wall made of brick. The truth
    draws an independent permittivity per wall and adds ``clutter_count``
    randomly placed walls that exist only in the truth.
    """
    lo, hi = perturb.eps_range
    if not (lo <= hi) or lo < 1.0:
        raise SceneError(f"empty or invalid eps_r range {perturb.eps_range}")
    if perturb.clutter_count < 0:
        raise SceneError("clutter_count must be >= 0")
    lmin, lmax = perturb.clutter_length
    if not (0.0 < lmin <= lmax):
        raise SceneError(f"invalid clutter length range {perturb.clutter_length}")

    rng = np.random.default_rng(seed)
    twin = _as_twin(base)

    materials = {BRICK: Material(BRICK, BRICK_EPS_R)}

    def material_for(eps: float, label: str) -> str:
        if eps == BRICK_EPS_R:
            return BRICK
        materials[label] = Material(label, eps)
        return label

    walls = []
    for i, w in enumerate(base.walls):
        eps = float(rng.uniform(lo, hi)) if hi > lo else lo
        walls.append(Wall(w.a, w.b, material_for(eps, f"truth_w{i:03d}")))

    bbox = perturb.bbox or base.extent()
    anchors = [base.rx, *base.tx_positions]
    for k in range(perturb.clutter_count):
        for _attempt in range(1000):
            cx = rng.uniform(bbox[0], bbox[2])
            cy = rng.uniform(bbox[1], bbox[3])
            theta = rng.uniform(0.0, math.pi)
            half = 0.5 * rng.uniform(lmin, lmax)
            a = (float(cx - half * math.cos(theta)), float(cy - half * math.sin(theta)))
            b = (float(cx + half * math.cos(theta)), float(cy + half * math.sin(theta)))
            if all(_segment_point_distance(a, b, p) >= perturb.clearance for p in anchors):
                break
        else:
            raise SceneError(f"could not place clutter wall {k} after 1000 attempts")
        eps = float(rng.uniform(lo, hi)) if hi > lo else lo
        walls.append(Wall(a, b, material_for(eps, f"clutter_{k:03d}")))

    used = {w.material for w in walls}
    truth = replace(
        base,
        walls=tuple(walls),
        materials=tuple(m for name, m in materials.items() if name in used or name == BRICK),
    )
    return TwinPair(truth=truth, twin=twin, perturbation_seed=seed, n_base_walls=len(base.walls))


# ---------------------------------------------------------------------------
# Built-in campus-like scene
# ---------------------------------------------------------------------------


def _rect_walls(x0, y0, x1, y1, material=BRICK):
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    return [Wall(corners[i], corners[(i + 1) % 4], material) for i in range(4)]


def point_in_polygon(p: Point, poly) -> bool:
    """Even-odd rule point-in-polygon test."""
    x, y = p
    inside = False
    n = len(poly)
    for i in range(n):
        (x1, y1), (x2, y2) = poly[i], poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return inside


def campus_buildings(scene: Scene) -> list[list[Point]]:
    """Recover the building footprints of a :func:`synthetic_campus` scene.

    Campus buildings are emitted as consecutive 4-wall loops.
    """
    polys = []
    walls = scene.walls
    for i in range(0, len(walls) - len(walls) % 4, 4):
        loop = walls[i : i + 4]
        if all(loop[j].b == loop[(j + 1) % 4].a for j in range(4)):
            polys.append([w.a for w in loop])
    return polys


def synthetic_campus(
    seed: int = 0,
    n_tx: int = 127,
    size: tuple[float, float] = (200.0, 150.0),
    band: Band = Band(2e9, 10e9, 8001),
    margin: float = 6.0,
) -> Scene:
    """Campus quad: four long buildings enclosing an open courtyard, a
    receiver near the middle and a serpentine route of transmitter positions
    through the courtyard.

    ``margin`` keeps transmitters off the facades; positions hugging a long
    wall see a near-grazing reflection that can cancel the direct path.
    """
    rng = np.random.default_rng([seed, 0xCA])
    width, height = size
    depth = [rng.uniform(8.0, 14.0) for _ in range(4)]
    inset = [rng.uniform(8.0, 16.0) for _ in range(4)]
    rects = [
        (inset[0], 0.0, width - inset[1], depth[0]),  # south
        (inset[2], height - depth[1], width - inset[3], height),  # north
        (0.0, depth[0] + 10.0, depth[2], height - depth[1] - 10.0),  # west
        (width - depth[3], depth[0] + 10.0, width, height - depth[1] - 10.0),  # east
    ]
    court = (depth[2] + 10, depth[0] + 10, width - depth[3] - 10, height - depth[1] - 10)
    rx = (
        round(rng.uniform(court[0] + 0.3 * (court[2] - court[0]), court[0] + 0.7 * (court[2] - court[0])), 3),
        round(rng.uniform(court[1] + 0.3 * (court[3] - court[1]), court[1] + 0.7 * (court[3] - court[1])), 3),
    )
    rects = [tuple(round(float(v), 3) for v in r) for r in rects]
    walls = []
    for r in rects:
        walls.extend(_rect_walls(*r))

    # the route stays inside the courtyard, off the inner facades
    yard = (depth[2] + margin, depth[0] + margin, width - depth[3] - margin, height - depth[1] - margin)

    def admissible(p):
        if math.hypot(p[0] - rx[0], p[1] - rx[1]) < 6.0:
            return False
        return yard[0] < p[0] < yard[2] and yard[1] < p[1] < yard[3]

    # serpentine grid over the site, densified until enough free points exist
    spacing = 14.0
    while True:
        xs = np.arange(spacing / 2, width, spacing)
        ys = np.arange(spacing / 2, height, spacing)
        route = []
        for j, y in enumerate(ys):
            row = xs if j % 2 == 0 else xs[::-1]
            route.extend((round(float(x), 3), round(float(y), 3)) for x in row)
        free = [p for p in route if admissible(p)]
        if len(free) >= n_tx:
            break
        spacing *= 0.93
    pick = np.unique(np.round(np.linspace(0, len(free) - 1, n_tx)).astype(int))
    txs = tuple(free[i] for i in pick)

    return Scene(
        walls=tuple(walls),
        materials=(Material(BRICK, BRICK_EPS_R),),
        rx=rx,
        tx_positions=txs,
        band=band,
    )
