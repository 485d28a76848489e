"""File formats: binary sequence datasets, checkpoints, OBJ meshes.

Both binary containers share one envelope, little-endian throughout:

    magic (8 bytes) | u32 version | u32 header_len | header JSON | payload

The header JSON carries user metadata plus an ``arrays`` manifest, an
ordered list of ``{"name", "dtype", "shape"}`` records whose raw buffers
follow back to back in the payload. Every read is bounds-checked so a
truncated or corrupted file fails with a typed error instead of garbage.
Writes go through a temp file in the target directory plus os.replace,
so a crash never leaves a half-written file behind.
"""

import dataclasses
import json
import os
import struct
import tempfile

import numpy as np

from .errors import (DataFormatError, DimensionError, MagicError,
                     TruncationError, VersionError)
from .motion import Skeleton, motion_dim

DATA_MAGIC = b"UNICDATA"
CKPT_MAGIC = b"UNICCKPT"
FORMAT_VERSION = 1

_ALLOWED_DTYPES = ("<f4", "<f8", "<i4", "<i8")
_MAX_HEADER = 1 << 26


def atomic_write_bytes(path, payloads):
    """Write an iterable of byte chunks to `path` via temp file + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-",
                               suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            for chunk in payloads:
                fh.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dtype_code(arr):
    code = np.dtype(arr.dtype).newbyteorder("<").str
    if code not in _ALLOWED_DTYPES:
        raise DataFormatError(f"unsupported array dtype {arr.dtype}")
    return code


def write_container(path, magic, metadata, arrays):
    """`arrays` is an ordered name -> ndarray mapping."""
    manifest = []
    chunks = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        code = _dtype_code(arr)
        manifest.append({"name": name, "dtype": code,
                         "shape": list(arr.shape)})
        chunks.append(arr.astype(code, copy=False).tobytes())
    header = dict(metadata)
    header["arrays"] = manifest
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [magic, struct.pack("<II", FORMAT_VERSION, len(header_bytes)),
             header_bytes]
    parts.extend(chunks)
    atomic_write_bytes(path, parts)


def _read_exact(fh, n, path, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncationError(
            f"{path}: truncated while reading {what} "
            f"(wanted {n} bytes, got {len(buf)})")
    return buf


def read_container(path, magic):
    with open(path, "rb") as fh:
        got = _read_exact(fh, len(magic), path, "magic")
        if got != magic:
            raise MagicError(
                f"{path}: bad magic {got!r}, expected {magic!r}")
        version, header_len = struct.unpack(
            "<II", _read_exact(fh, 8, path, "envelope"))
        if version != FORMAT_VERSION:
            raise VersionError(
                f"{path}: format version {version} not supported "
                f"(reader handles {FORMAT_VERSION})")
        if header_len > _MAX_HEADER:
            raise DataFormatError(
                f"{path}: header length {header_len} exceeds limit")
        header_bytes = _read_exact(fh, header_len, path, "header")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataFormatError(f"{path}: header is not valid JSON: {e}") from e
        if not isinstance(header, dict) or "arrays" not in header:
            raise DataFormatError(f"{path}: header missing array manifest")
        arrays = {}
        for rec in header["arrays"]:
            try:
                name = rec["name"]
                code = rec["dtype"]
                shape = tuple(int(s) for s in rec["shape"])
            except (TypeError, KeyError, ValueError) as e:
                raise DataFormatError(
                    f"{path}: malformed manifest entry {rec!r}") from e
            if code not in _ALLOWED_DTYPES:
                raise DataFormatError(
                    f"{path}: array {name!r} has unsupported dtype {code!r}")
            if any(s < 0 for s in shape):
                raise DimensionError(
                    f"{path}: array {name!r} has negative shape {shape}")
            count = 1
            for s in shape:
                count *= s
            nbytes = count * np.dtype(code).itemsize
            buf = _read_exact(fh, nbytes, path, f"array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype=np.dtype(code)).reshape(shape)
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError(f"{path}: trailing bytes after last array")
        metadata = {k: v for k, v in header.items() if k != "arrays"}
        return metadata, arrays


@dataclasses.dataclass
class SequenceDataset:
    """One simulated clip: motion features plus garment and body geometry.

    motion       (T, D) float32 motion frames
    garment      (T, V, 3) float32 cloth positions; frame 0 is the settled drape
    body_pos     (T, B, 3) float32 body shell vertices
    body_nrm     (T, B, 3) float32 body shell normals (unit)
    garment_faces (F, 3) int32, body_faces (Fb, 3) int32
    """

    fps: float
    num_joints: int
    motion: np.ndarray
    garment: np.ndarray
    body_pos: np.ndarray
    body_nrm: np.ndarray
    garment_faces: np.ndarray
    body_faces: np.ndarray
    cell_size: float
    skeleton: dict
    garment_name: str = ""
    kind: str = ""
    seed: int = 0

    @property
    def frames(self):
        return self.motion.shape[0]

    @property
    def num_vertices(self):
        return self.garment.shape[1]

    def validate(self):
        T = self.motion.shape[0]
        D = motion_dim(self.num_joints)
        if self.motion.ndim != 2 or self.motion.shape[1] != D:
            raise DimensionError(
                f"motion shape {self.motion.shape}, expected (T, {D})")
        for name, arr, width in (("garment", self.garment, None),
                                 ("body_pos", self.body_pos, None),
                                 ("body_nrm", self.body_nrm, None)):
            if arr.ndim != 3 or arr.shape[0] != T or arr.shape[2] != 3:
                raise DimensionError(
                    f"{name} shape {arr.shape}, expected ({T}, *, 3)")
        if self.body_pos.shape != self.body_nrm.shape:
            raise DimensionError("body_pos and body_nrm shapes differ")
        for name, arr in (("garment_faces", self.garment_faces),
                          ("body_faces", self.body_faces)):
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise DimensionError(
                    f"{name} shape {arr.shape}, expected (F, 3)")
        return self

    def skeleton_obj(self):
        return Skeleton.from_dict(self.skeleton)


def write_dataset(path, ds):
    ds.validate()
    meta = {
        "fps": float(ds.fps),
        "num_joints": int(ds.num_joints),
        "cell_size": float(ds.cell_size),
        "skeleton": ds.skeleton,
        "garment_name": ds.garment_name,
        "kind": ds.kind,
        "seed": int(ds.seed),
    }
    arrays = {
        "motion": np.asarray(ds.motion, dtype=np.float32),
        "garment": np.asarray(ds.garment, dtype=np.float32),
        "body_pos": np.asarray(ds.body_pos, dtype=np.float32),
        "body_nrm": np.asarray(ds.body_nrm, dtype=np.float32),
        "garment_faces": np.asarray(ds.garment_faces, dtype=np.int32),
        "body_faces": np.asarray(ds.body_faces, dtype=np.int32),
    }
    write_container(path, DATA_MAGIC, meta, arrays)


def read_dataset(path):
    meta, arrays = read_container(path, DATA_MAGIC)
    required = ("motion", "garment", "body_pos", "body_nrm",
                "garment_faces", "body_faces")
    missing = [n for n in required if n not in arrays]
    if missing:
        raise DataFormatError(f"{path}: dataset missing arrays {missing}")
    try:
        ds = SequenceDataset(
            fps=float(meta["fps"]),
            num_joints=int(meta["num_joints"]),
            motion=arrays["motion"],
            garment=arrays["garment"],
            body_pos=arrays["body_pos"],
            body_nrm=arrays["body_nrm"],
            garment_faces=arrays["garment_faces"],
            body_faces=arrays["body_faces"],
            cell_size=float(meta["cell_size"]),
            skeleton=meta["skeleton"],
            garment_name=meta.get("garment_name", ""),
            kind=meta.get("kind", ""),
            seed=int(meta.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{path}: bad dataset metadata: {e}") from e
    return ds.validate()


def save_checkpoint(path, model, step=0, optimizer_state=None, extra=None):
    from .model import model_metadata

    meta = model_metadata(model)
    meta["step"] = int(step)
    if extra:
        meta["extra"] = extra
    arrays = dict(model.named_arrays())
    if optimizer_state:
        for name, arr in optimizer_state.items():
            arrays[f"opt.{name}"] = np.asarray(arr)
    write_container(path, CKPT_MAGIC, meta, arrays)


def load_checkpoint(path):
    """Returns (model, step, optimizer_state, extra)."""
    from .model import model_from_metadata

    meta, arrays = read_container(path, CKPT_MAGIC)
    try:
        model = model_from_metadata(meta)
        step = int(meta.get("step", 0))
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{path}: bad checkpoint metadata: {e}") from e
    model.load_arrays({k: v for k, v in arrays.items()
                       if not k.startswith("opt.")})
    opt_state = {k[len("opt."):]: np.array(v) for k, v in arrays.items()
                 if k.startswith("opt.")}
    return model, step, opt_state, meta.get("extra")


def load_obj(path):
    """Triangle mesh from a Wavefront OBJ; polygons are fan-triangulated.

    Only v and f records are honored; texture/normal indices in face
    tokens are ignored. Malformed records fail with the line number.
    """
    verts = []
    faces = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            kw = tokens[0]
            if kw == "v":
                if len(tokens) < 4:
                    raise DataFormatError(
                        f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(t) for t in tokens[1:4]])
                except ValueError as e:
                    raise DataFormatError(
                        f"{path}:{lineno}: bad vertex coordinate: {e}") from e
            elif kw == "f":
                idx = []
                for tok in tokens[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError as e:
                        raise DataFormatError(
                            f"{path}:{lineno}: bad face index {tok!r}") from e
                    if i == 0:
                        raise DataFormatError(
                            f"{path}:{lineno}: face index 0 (OBJ is 1-based)")
                    i = i - 1 if i > 0 else len(verts) + i
                    if not 0 <= i < len(verts):
                        raise DataFormatError(
                            f"{path}:{lineno}: face index {tok!r} out of range "
                            f"(have {len(verts)} vertices)")
                    idx.append(i)
                if len(idx) < 3:
                    raise DataFormatError(
                        f"{path}:{lineno}: face needs at least 3 indices, "
                        f"got {len(idx)}")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise DataFormatError(f"{path}: no vertices")
    return (np.asarray(verts, dtype=np.float64),
            np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(path, verts, faces):
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    lines = []
    for v in verts:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
    for f in faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    atomic_write_bytes(path, ["".join(lines).encode("utf-8")])


def load_json_config(path, schema=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON: {e}") from e
    if schema is not None:
        import jsonschema

        try:
            jsonschema.validate(doc, schema)
        except jsonschema.ValidationError as e:
            raise DataFormatError(
                f"{path}: config rejected: {e.message}") from e
    return doc
