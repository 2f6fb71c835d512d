"""PLY point cloud I/O and synthetic shape generation.

Clouds live on an integer voxel grid of side 2**b where b is the
coordinate precision in bits. Parsing keeps geometry (and normals when
present); color and any other vertex properties are skipped silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_PRECISION_B = 9

SHAPE_KINDS = ("sphere", "box", "torus", "blob")

_PLY_SCALAR_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyParseError(ValueError):
    """Malformed or truncated PLY input; carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(eq=False)
class PointCloud:
    """Deduplicated integer voxel coordinates plus optional unit normals."""

    points: np.ndarray
    precision_b: int = DEFAULT_PRECISION_B
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.int64).reshape(-1, 3)
        if self.precision_b < 1:
            raise ValueError(f"precision_b must be >= 1, got {self.precision_b}")
        side = 1 << self.precision_b
        if len(self.points):
            if self.points.min() < 0 or self.points.max() >= side:
                raise ValueError(
                    f"coordinates outside [0, {side - 1}] for precision_b={self.precision_b}"
                )
            if len(np.unique(self.points, axis=0)) != len(self.points):
                raise ValueError("duplicate points in cloud")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape[0] != self.points.shape[0]:
                raise ValueError("normals count does not match points count")
            norms = np.linalg.norm(self.normals, axis=1)
            if len(norms) and not np.allclose(norms, 1.0, atol=1e-6):
                raise ValueError("normals must have unit length")

    def __len__(self) -> int:
        return len(self.points)

    def same_points(self, other: "PointCloud") -> bool:
        """Set equality of coordinates (order independent)."""
        if len(self) != len(other):
            return False
        a = self.points[np.lexsort(self.points.T)]
        b = other.points[np.lexsort(other.points.T)]
        return bool(np.array_equal(a, b))


def _quantize(coords: np.ndarray, precision_b: int) -> np.ndarray:
    # round half up, then clamp to the grid
    grid_max = (1 << precision_b) - 1
    q = np.floor(np.asarray(coords, dtype=np.float64) + 0.5).astype(np.int64)
    return np.clip(q, 0, grid_max)


def _dedup_first(points: np.ndarray, normals: np.ndarray | None):
    _, first = np.unique(points, axis=0, return_index=True)
    keep = np.sort(first)
    return points[keep], (normals[keep] if normals is not None else None)


# ---------------------------------------------------------------------------
# PLY parsing


class _Element:
    __slots__ = ("name", "count", "props", "decl_offset", "has_list")

    def __init__(self, name, count, decl_offset):
        self.name = name
        self.count = count
        self.props = []  # (prop_name, numpy_format)
        self.decl_offset = decl_offset
        self.has_list = False


def _parse_header(data: bytes):
    if not data.startswith(b"ply"):
        raise PlyParseError("missing 'ply' magic", 0)
    pos = 0
    fmt = None
    elements: list[_Element] = []
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise PlyParseError("header not terminated by end_header", len(data))
        line_off = pos
        line = data[pos:nl].rstrip(b"\r").decode("ascii", "replace").strip()
        pos = nl + 1
        if line == "end_header":
            break
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        tokens = line.split()
        if tokens[0] == "ply":
            continue
        if tokens[0] == "format":
            if len(tokens) != 3 or tokens[2] != "1.0":
                raise PlyParseError(f"unsupported format declaration {line!r}", line_off)
            if tokens[1] not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"unsupported format {tokens[1]!r}", line_off)
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise PlyParseError(f"malformed element declaration {line!r}", line_off)
            try:
                count = int(tokens[2])
            except ValueError:
                raise PlyParseError(f"bad element count in {line!r}", line_off) from None
            if count < 0:
                raise PlyParseError(f"negative element count in {line!r}", line_off)
            elements.append(_Element(tokens[1], count, line_off))
        elif tokens[0] == "property":
            if not elements:
                raise PlyParseError("property before any element", line_off)
            if tokens[1] == "list":
                elements[-1].has_list = True
                elements[-1].props.append((tokens[-1], None))
                continue
            if len(tokens) != 3:
                raise PlyParseError(f"malformed property {line!r}", line_off)
            np_fmt = _PLY_SCALAR_TYPES.get(tokens[1])
            if np_fmt is None:
                raise PlyParseError(f"unsupported property type {tokens[1]!r}", line_off)
            elements[-1].props.append((tokens[2], np_fmt))
        else:
            raise PlyParseError(f"unrecognized header line {line!r}", line_off)
    if fmt is None:
        raise PlyParseError("header missing format declaration", 0)
    return fmt, elements, pos


def _ascii_rows(data: bytes, start: int, count: int, n_cols: int, want: dict[str, int]):
    """Parse `count` whitespace rows, returning columns listed in `want`."""
    out = {name: np.empty(count, dtype=np.float64) for name in want}
    pos = start
    for i in range(count):
        nl = data.find(b"\n", pos)
        if nl < 0:
            if pos >= len(data):
                raise PlyParseError(f"body truncated after {i} of {count} rows", len(data))
            nl = len(data)
        row_off = pos
        tokens = data[pos:nl].split()
        pos = nl + 1
        if len(tokens) < n_cols:
            raise PlyParseError(
                f"row has {len(tokens)} values, expected {n_cols}", row_off
            )
        for name, col in want.items():
            try:
                out[name][i] = float(tokens[col])
            except ValueError:
                raise PlyParseError(f"bad numeric value {tokens[col]!r}", row_off) from None
    return out, pos


def read_ply(data: bytes, precision_b: int = DEFAULT_PRECISION_B) -> PointCloud:
    """Parse PLY 1.0 bytes (ascii or binary_little_endian) into a PointCloud.

    Float coordinates are rounded half up onto the 2**precision_b grid and
    duplicate voxels are removed, keeping first occurrence order. Normals
    (nx, ny, nz) are kept when all three are present.
    """
    fmt, elements, body_start = _parse_header(data)
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise PlyParseError("no vertex element declared", 0)

    names = [p[0] for p in vertex.props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise PlyParseError(f"vertex element missing property {axis!r}", vertex.decl_offset)
    has_normals = all(n in names for n in ("nx", "ny", "nz"))
    wanted = ["x", "y", "z"] + (["nx", "ny", "nz"] if has_normals else [])

    if vertex.has_list:
        raise PlyParseError("list property on vertex element is unsupported", vertex.decl_offset)

    pos = body_start
    if fmt == "ascii":
        for elem in elements:
            if elem.name == "vertex":
                want = {n: names.index(n) for n in wanted}
                cols, pos = _ascii_rows(data, pos, elem.count, len(names), want)
                break
            if elem.has_list:
                raise PlyParseError(
                    f"cannot skip element {elem.name!r} with list property before vertex",
                    elem.decl_offset,
                )
            # skip fixed rows of a preceding element
            skip_want: dict[str, int] = {}
            _, pos = _ascii_rows(data, pos, elem.count, len(elem.props), skip_want)
    else:
        for elem in elements:
            if elem.name != "vertex":
                if elem.has_list:
                    raise PlyParseError(
                        f"cannot skip element {elem.name!r} with list property before vertex",
                        elem.decl_offset,
                    )
                pos += elem.count * sum(np.dtype(f).itemsize for _, f in elem.props)
                continue
            offsets, running = {}, 0
            for pname, pfmt in elem.props:
                offsets[pname] = running
                running += np.dtype(pfmt).itemsize
            if pos + elem.count * running > len(data):
                raise PlyParseError(
                    f"body truncated: need {elem.count * running} bytes for vertex data",
                    len(data),
                )
            vdt = np.dtype({
                "names": wanted,
                "formats": ["<" + dict(elem.props)[n] for n in wanted],
                "offsets": [offsets[n] for n in wanted],
                "itemsize": running,
            })
            rec = np.frombuffer(data, dtype=vdt, count=elem.count, offset=pos)
            cols = {n: rec[n].astype(np.float64) for n in wanted}
            break

    points = _quantize(np.stack([cols["x"], cols["y"], cols["z"]], axis=1), precision_b)
    normals = None
    if has_normals:
        normals = np.stack([cols["nx"], cols["ny"], cols["nz"]], axis=1)
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms == 0):
            raise PlyParseError("zero-length normal in vertex data", body_start)
        normals = normals / norms[:, None]
    points, normals = _dedup_first(points, normals)
    return PointCloud(points, precision_b, normals)


def write_ply(pc: PointCloud, binary: bool = False) -> bytes:
    """Serialize a cloud to PLY bytes; geometry round-trips exactly."""
    if (1 << pc.precision_b) - 1 >= (1 << 24):
        raise ValueError("precision_b too large for float32 PLY coordinates")
    props = ["property float x", "property float y", "property float z"]
    if pc.normals is not None:
        props += ["property float nx", "property float ny", "property float nz"]
    header = "\n".join(
        ["ply",
         "format " + ("binary_little_endian" if binary else "ascii") + " 1.0",
         f"element vertex {len(pc)}"]
        + props
        + ["end_header", ""]
    ).encode("ascii")
    if binary:
        n_cols = 3 if pc.normals is None else 6
        body = np.empty((len(pc), n_cols), dtype="<f4")
        body[:, :3] = pc.points
        if pc.normals is not None:
            body[:, 3:] = pc.normals
        return header + body.tobytes()
    lines = []
    if pc.normals is None:
        for x, y, z in pc.points:
            lines.append(f"{x} {y} {z}")
    else:
        for (x, y, z), (nx, ny, nz) in zip(pc.points, pc.normals):
            lines.append(f"{x} {y} {z} {nx:.9g} {ny:.9g} {nz:.9g}")
    return header + ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")


# ---------------------------------------------------------------------------
# Synthetic shapes


def _unit_directions(rng, n):
    v = rng.normal(size=(n, 3))
    norms = np.linalg.norm(v, axis=1)
    # resample the (measure zero) degenerate draws instead of dividing by 0
    while np.any(norms == 0):
        bad = norms == 0
        v[bad] = rng.normal(size=(int(bad.sum()), 3))
        norms = np.linalg.norm(v, axis=1)
    return v / norms[:, None]


def gen_shape(kind: str, n_points: int, precision_b: int = DEFAULT_PRECISION_B,
              seed: int = 0) -> PointCloud:
    """Sample a synthetic surface and quantize it onto the voxel grid.

    Deterministic in (kind, n_points, precision_b, seed). The returned
    cloud may hold fewer than n_points entries after voxel deduplication.
    """
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind {kind!r}, expected one of {SHAPE_KINDS}")
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rng = np.random.default_rng(seed)
    extent = (1 << precision_b) - 1
    center = extent / 2.0

    if kind == "sphere":
        r = 0.35 * extent
        pts = center + r * _unit_directions(rng, n_points)
    elif kind == "box":
        h = 0.35 * extent
        face = rng.integers(0, 6, size=n_points)
        uv = rng.uniform(-h, h, size=(n_points, 2))
        pts = np.empty((n_points, 3))
        axis = face % 3
        sign = np.where(face < 3, 1.0, -1.0)
        for a in range(3):
            sel = axis == a
            others = [i for i in range(3) if i != a]
            pts[sel, a] = sign[sel] * h
            pts[sel, others[0]] = uv[sel, 0]
            pts[sel, others[1]] = uv[sel, 1]
        pts += center
    elif kind == "torus":
        big_r = 0.30 * extent
        small_r = 0.12 * extent
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n_points)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n_points)
        ring = big_r + small_r * np.cos(phi)
        pts = np.stack(
            [ring * np.cos(theta), ring * np.sin(theta), small_r * np.sin(phi)], axis=1
        )
        pts += center
    else:  # blob: sphere with a smooth random radial field
        r0 = 0.30 * extent
        n_modes = 4
        amps = rng.uniform(-1.0, 1.0, size=n_modes) / np.arange(1, n_modes + 1)
        freqs = rng.integers(1, 4, size=(n_modes, 3)).astype(np.float64)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=n_modes)
        u = _unit_directions(rng, n_points)
        bump = np.zeros(n_points)
        for m in range(n_modes):
            bump += amps[m] * np.cos(u @ freqs[m] + phases[m])
        radius = np.maximum(r0 * (1.0 + 0.35 * bump), 0.25 * r0)
        pts = center + radius[:, None] * u

    points, _ = _dedup_first(_quantize(pts, precision_b), None)
    return PointCloud(points, precision_b)
