"""File formats: PGM images, raw volumes with JSON headers, OFF meshes, sweep manifests.

Byte-level layouts are documented in ``docs/formats.md``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import SchemaError, ValidationError
from .geometry import GridSpec, Pose, PosedSlice
from .mesh import Mesh
from .metrics import EvaluationReport
from .sparse_volume import CLASS_NAMES, DenseVolume, LabelVolume, SliceLabelMask, SparseVolume

VOLUME_FORMAT = "icecontour-volume"
MANIFEST_FORMAT = "icecontour-sweep"


def dump_json(obj, path):
    """Deterministic JSON (sorted keys, shortest round-trip floats, NaN -> null)."""
    Path(path).write_text(json.dumps(_nan_to_none(obj), indent=2, sort_keys=True) + "\n")


def _nan_to_none(o):
    if isinstance(o, float) and math.isnan(o):
        return None
    if isinstance(o, dict):
        return {k: _nan_to_none(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_nan_to_none(v) for v in o]
    if isinstance(o, np.generic):
        return _nan_to_none(o.item())
    return o


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e})") from None


# -- PGM ----------------------------------------------------------------------

def write_pgm(path, array, maxval):
    a = np.asarray(array)
    if a.ndim != 2:
        raise ValidationError("PGM images are 2D")
    if maxval not in (255, 65535):
        raise ValidationError("maxval must be 255 or 65535")
    if a.size and (a.min() < 0 or a.max() > maxval):
        raise ValidationError("PGM sample out of range")
    h, w = a.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(a.astype(dtype).tobytes())


def read_pgm(path):
    """Return ``(array, maxval)`` for a binary (P5) PGM."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    need = w * h * np.dtype(dtype).itemsize
    if len(data) - pos != need:
        raise ValidationError(f"{path}: payload is {len(data) - pos} bytes, header implies {need}")
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.int64), maxval


def intensity_to_pgm(values, maxval=65535):
    return np.rint((np.asarray(values, float) + 1.0) * 0.5 * maxval).astype(np.int64)


def pgm_to_intensity(k, maxval):
    return 2.0 * np.asarray(k, float) / maxval - 1.0


# -- volumes ------------------------------------------------------------------

def _raw_path(header_path):
    return Path(header_path).with_suffix(".raw")


def save_volume(path, vol, meta=None):
    """Write ``path`` (JSON header) plus the adjacent ``.raw`` payload.

    Accepts :class:`SparseVolume`, :class:`DenseVolume` or :class:`LabelVolume`.
    """
    path = Path(path)
    if isinstance(vol, SparseVolume):
        kind, arrays, dtype = "sparse", [vol.values, vol.occupancy], "<f4"
        names = ["values", "occupancy"]
    elif isinstance(vol, DenseVolume):
        kind, arrays, dtype, names = "dense", [vol.values], "<f4", ["values"]
    elif isinstance(vol, LabelVolume):
        kind, arrays, dtype, names = "labels", [vol.classes], "u1", ["classes"]
    else:
        raise ValidationError(f"cannot save {type(vol).__name__} as a volume")
    raw = _raw_path(path)
    header = {
        "format": VOLUME_FORMAT,
        "version": 1,
        "kind": kind,
        **vol.grid.to_dict(),
        "dtype": "float32" if dtype == "<f4" else "uint8",
        "byteorder": "little",
        "order": "x-fastest",
        "arrays": names,
        "data": raw.name,
        "meta": dict(meta or getattr(vol, "meta", {}) or {}),
    }
    if kind == "labels":
        header["classes"] = list(CLASS_NAMES)
    with open(raw, "wb") as f:
        for a in arrays:
            f.write(np.asarray(a).astype(dtype).tobytes(order="F"))
    dump_json(header, path)
    return path


def _req(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError(f"{where}.{key}" if where else key, "missing required field")
    return d[key]


def load_volume(path):
    path = Path(path)
    h = load_json(path)
    if h.get("format") != VOLUME_FORMAT:
        raise SchemaError("format", f"expected {VOLUME_FORMAT!r}")
    kind = _req(h, "kind", "")
    try:
        grid = GridSpec(_req(h, "dims", ""), _req(h, "spacing", ""), _req(h, "origin", ""))
    except (TypeError, ValueError) as e:
        raise SchemaError("dims", str(e)) from None
    dtype = {"float32": "<f4", "uint8": "u1"}.get(_req(h, "dtype", ""))
    if dtype is None:
        raise SchemaError("dtype", "must be float32 or uint8")
    if h.get("order", "x-fastest") != "x-fastest" or h.get("byteorder", "little") != "little":
        raise SchemaError("order", "only little-endian x-fastest payloads are supported")
    names = _req(h, "arrays", "")
    raw = path.parent / _req(h, "data", "")
    try:
        buf = raw.read_bytes()
    except FileNotFoundError:
        raise ValidationError(f"raw payload not found: {raw}") from None
    n = grid.size
    need = n * np.dtype(dtype).itemsize * len(names)
    if len(buf) != need:
        raise ValidationError(f"{raw}: payload is {len(buf)} bytes, header implies {need}")
    flat = np.frombuffer(buf, dtype=dtype)
    arrays = [flat[i * n:(i + 1) * n].reshape(grid.dims, order="F") for i in range(len(names))]
    if kind == "sparse":
        return SparseVolume(grid, arrays[0].astype(float), arrays[1].astype(float), dict(h.get("meta", {})))
    if kind == "dense":
        return DenseVolume(grid, arrays[0].astype(float))
    if kind == "labels":
        return LabelVolume(grid, arrays[0].copy())
    raise SchemaError("kind", f"unknown volume kind {kind!r}")


# -- meshes -------------------------------------------------------------------

def save_mesh(path, mesh: Mesh):
    lines = ["OFF", f"# class_id {mesh.class_id}", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
    lines += [" ".join(f"{x:.17g}" for x in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def load_mesh(path):
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    class_id = 1
    body = []
    for line in text.splitlines():
        s = line.strip()
        if s.startswith("#"):
            parts = s[1:].split()
            if len(parts) == 2 and parts[0] == "class_id":
                class_id = int(parts[1])
            continue
        if s:
            body.append(s)
    if not body or body[0] != "OFF":
        raise ValidationError(f"{path}: missing OFF header")
    try:
        nv, nf, _ = (int(x) for x in body[1].split())
        verts = np.array([[float(x) for x in body[2 + i].split()] for i in range(nv)])
        faces = []
        for j in range(nf):
            toks = [int(x) for x in body[2 + nv + j].split()]
            if toks[0] != 3 or len(toks) != 4:
                raise ValidationError(f"{path}: face {j} is not a triangle")
            faces.append(toks[1:])
    except (IndexError, ValueError) as e:
        raise ValidationError(f"{path}: malformed OFF ({e})") from None
    return Mesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3), class_id)


# -- sweep manifests ------------------------------------------------------------

def save_manifest(directory, slices, patient_id="phantom", image_maxval=65535, name="manifest.json"):
    """Write slice images (PGM) and ``manifest.json`` under ``directory``."""
    d = Path(directory)
    (d / "slices").mkdir(parents=True, exist_ok=True)
    entries = []
    for k, s in enumerate(slices):
        img = f"slices/slice_{k:03d}.pgm"
        write_pgm(d / img, intensity_to_pgm(s.pixels, image_maxval), image_maxval)
        e = {"image": img, "pose": s.pose.to_list(), "spacing": [s.spacing_u, s.spacing_v]}
        if not s.validity.all():
            e["validity"] = f"slices/slice_{k:03d}_valid.pgm"
            write_pgm(d / e["validity"], s.validity.astype(np.int64) * 255, 255)
        if s.labels is not None:
            e["labels"] = f"slices/slice_{k:03d}_labels.pgm"
            write_pgm(d / e["labels"], s.labels.astype(np.int64), 255)
        entries.append(e)
    manifest = {"format": MANIFEST_FORMAT, "version": 1, "patient_id": patient_id,
                "classes": list(CLASS_NAMES), "slices": entries}
    dump_json(manifest, d / name)
    return d / name


def load_manifest(path):
    """Parse a manifest and load every slice; schema errors name the offending field."""
    path = Path(path)
    m = load_json(path)
    _req(m, "patient_id", "")
    entries = _req(m, "slices", "")
    if not isinstance(entries, list) or not entries:
        raise SchemaError("slices", "must be a non-empty list")
    base = path.parent
    out = []
    for k, e in enumerate(entries):
        where = f"slices[{k}]"
        pose_vals = _req(e, "pose", where)
        if not isinstance(pose_vals, list) or len(pose_vals) != 16:
            raise SchemaError(f"{where}.pose", "must be 16 numbers (row-major 4x4)")
        try:
            pose = Pose(np.array(pose_vals, dtype=float))
        except (ValidationError, TypeError, ValueError) as err:
            raise SchemaError(f"{where}.pose", str(err)) from None
        sp = _req(e, "spacing", where)
        if not isinstance(sp, list) or len(sp) != 2:
            raise SchemaError(f"{where}.spacing", "must be [spacing_u, spacing_v]")
        img_path = base / _req(e, "image", where)
        if not img_path.exists():
            raise SchemaError(f"{where}.image", f"file not found: {img_path}")
        k_img, maxval = read_pgm(img_path)
        pixels = pgm_to_intensity(k_img, maxval)
        validity = labels = None
        if "validity" in e:
            vp = base / e["validity"]
            if not vp.exists():
                raise SchemaError(f"{where}.validity", f"file not found: {vp}")
            validity = read_pgm(vp)[0] > 0
        if "labels" in e:
            lp = base / e["labels"]
            if not lp.exists():
                raise SchemaError(f"{where}.labels", f"file not found: {lp}")
            labels = read_pgm(lp)[0]
        try:
            out.append(PosedSlice(pixels, float(sp[0]), float(sp[1]), pose, validity, labels))
        except ValidationError as err:
            raise SchemaError(where, str(err)) from None
    return m, out


def save_mask(path, mask: SliceLabelMask):
    write_pgm(path, mask.classes.astype(np.int64), 255)


def load_mask(path):
    return read_pgm(path)[0].astype(np.uint8)


# -- reports ------------------------------------------------------------------

def save_reports(path, reports):
    dump_json({"models": [r.to_dict() for r in reports]}, path)


def load_reports(path):
    d = load_json(path)
    models = _req(d, "models", "")

    def fix(row):
        return {k: (math.nan if v is None else v) for k, v in row.items()}

    out = []
    for i, r in enumerate(models):
        _req(r, "name", f"models[{i}]")
        out.append(EvaluationReport(r["name"], {k: fix(v) for k, v in r.get("per_structure", {}).items()},
                                    fix(r.get("total", {}))))
    return out
