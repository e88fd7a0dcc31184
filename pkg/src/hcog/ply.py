"""Binary little-endian PLY persistence for scenes.

Vertex layout: x y z, scale_0..2 (log-scale), rot_0..3 (quaternion wxyz),
red green blue (float in [0,1]), opacity (logit), seg_logit, block_id
(int32), mark (uint8). Extra scalar vertex properties are parsed and carried
through round-trips untouched. List properties and non-vertex elements are
not supported.
"""

from __future__ import annotations

import numpy as np

from .scene import Scene

__all__ = [
    "PlyError",
    "PlyHeaderError",
    "PlyMissingPropertyError",
    "PlyTruncatedError",
    "save_ply",
    "load_ply",
]

_PLY_DTYPES = {
    "char": "<i1",
    "int8": "<i1",
    "uchar": "<u1",
    "uint8": "<u1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
}

_DTYPE_NAMES = {
    np.dtype(np.int8): "char",
    np.dtype(np.uint8): "uchar",
    np.dtype(np.int16): "short",
    np.dtype(np.uint16): "ushort",
    np.dtype(np.int32): "int",
    np.dtype(np.uint32): "uint",
    np.dtype(np.float32): "float",
    np.dtype(np.float64): "double",
}

_REQUIRED = (
    "x",
    "y",
    "z",
    "scale_0",
    "scale_1",
    "scale_2",
    "rot_0",
    "rot_1",
    "rot_2",
    "rot_3",
    "red",
    "green",
    "blue",
    "opacity",
    "seg_logit",
    "block_id",
    "mark",
)


class PlyError(Exception):
    """Base class for PLY I/O failures."""


class PlyHeaderError(PlyError):
    pass


class PlyMissingPropertyError(PlyError):
    def __init__(self, prop: str):
        super().__init__(f"required vertex property missing: {prop}")
        self.property = prop


class PlyTruncatedError(PlyError):
    def __init__(self, prop: str, needed: int, got: int):
        super().__init__(f"payload truncated while reading property {prop!r}: need {needed} bytes, got {got}")
        self.property = prop


def save_ply(scene: Scene, path) -> None:
    n = len(scene)
    columns: list[tuple[str, str, np.ndarray]] = [
        ("x", "float", scene.positions[:, 0]),
        ("y", "float", scene.positions[:, 1]),
        ("z", "float", scene.positions[:, 2]),
        ("scale_0", "float", scene.log_scales[:, 0]),
        ("scale_1", "float", scene.log_scales[:, 1]),
        ("scale_2", "float", scene.log_scales[:, 2]),
        ("rot_0", "float", scene.rotations[:, 0]),
        ("rot_1", "float", scene.rotations[:, 1]),
        ("rot_2", "float", scene.rotations[:, 2]),
        ("rot_3", "float", scene.rotations[:, 3]),
        ("red", "float", scene.colors[:, 0]),
        ("green", "float", scene.colors[:, 1]),
        ("blue", "float", scene.colors[:, 2]),
        ("opacity", "float", scene.opacity_logits),
        ("seg_logit", "float", scene.seg_logits),
        ("block_id", "int", scene.block_ids),
        ("mark", "uchar", scene.marks),
    ]
    for name, values in scene.extras.items():
        type_name = _DTYPE_NAMES.get(values.dtype)
        if type_name is None:
            raise PlyError(f"extra property {name!r} has unsupported dtype {values.dtype}")
        columns.append((name, type_name, values))

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {type_name} {name}" for name, type_name, _ in columns]
    header.append("end_header")

    record = np.dtype([(name, _PLY_DTYPES[type_name]) for name, type_name, _ in columns])
    body = np.empty(n, dtype=record)
    for name, _, values in columns:
        body[name] = values

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(body.tobytes())


def _parse_header(fh) -> tuple[int, list[tuple[str, str]]]:
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise PlyHeaderError("not a PLY file: missing 'ply' magic")
    fmt = fh.readline().strip()
    if fmt != b"format binary_little_endian 1.0":
        raise PlyHeaderError(f"unsupported format line: {fmt.decode('ascii', 'replace')!r}")

    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    while True:
        line = fh.readline()
        if not line:
            raise PlyHeaderError("header ended before end_header")
        tokens = line.strip().decode("ascii", "replace").split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "end_header":
            break
        if tokens[0] == "element":
            if len(tokens) != 3:
                raise PlyHeaderError(f"malformed element line: {' '.join(tokens)!r}")
            if tokens[1] == "vertex":
                in_vertex = True
                try:
                    count = int(tokens[2])
                except ValueError:
                    raise PlyHeaderError(f"bad vertex count: {tokens[2]!r}") from None
            else:
                if int(tokens[2]) != 0:
                    raise PlyHeaderError(f"unsupported element {tokens[1]!r} with nonzero count")
                in_vertex = False
        elif tokens[0] == "property":
            if not in_vertex:
                continue
            if tokens[1] == "list":
                raise PlyHeaderError(f"list property {tokens[-1]!r} is not supported")
            if len(tokens) != 3 or tokens[1] not in _PLY_DTYPES:
                raise PlyHeaderError(f"malformed property line: {' '.join(tokens)!r}")
            props.append((tokens[2], tokens[1]))
        else:
            raise PlyHeaderError(f"unexpected header line: {' '.join(tokens)!r}")
    if count is None:
        raise PlyHeaderError("no vertex element in header")
    return count, props


def load_ply(path, seed: int = 0) -> Scene:
    with open(path, "rb") as fh:
        count, props = _parse_header(fh)
        names = [p[0] for p in props]
        for req in _REQUIRED:
            if req not in names:
                raise PlyMissingPropertyError(req)

        record = np.dtype([(name, _PLY_DTYPES[type_name]) for name, type_name in props])
        payload = fh.read(record.itemsize * count)
        if len(payload) < record.itemsize * count:
            rows_read = len(payload) // record.itemsize
            offset = len(payload) - rows_read * record.itemsize
            # name the property whose bytes ran out in the partial row
            prop = props[-1][0]
            for (name, type_name), end in zip(props, np.cumsum([np.dtype(_PLY_DTYPES[t]).itemsize for _, t in props])):
                if offset < end:
                    prop = name
                    break
            raise PlyTruncatedError(prop, record.itemsize * count, len(payload))
        body = np.frombuffer(payload, dtype=record, count=count)

    extras = {name: body[name].copy() for name in names if name not in _REQUIRED}
    return Scene(
        positions=np.stack([body["x"], body["y"], body["z"]], axis=1) if count else np.empty((0, 3)),
        log_scales=np.stack([body["scale_0"], body["scale_1"], body["scale_2"]], axis=1) if count else np.empty((0, 3)),
        rotations=np.stack([body[f"rot_{i}"] for i in range(4)], axis=1) if count else np.empty((0, 4)),
        colors=np.stack([body["red"], body["green"], body["blue"]], axis=1) if count else np.empty((0, 3)),
        opacity_logits=body["opacity"],
        seg_logits=body["seg_logit"],
        block_ids=body["block_id"],
        marks=body["mark"],
        trainable=np.ones(count, dtype=bool),
        rng_seed=seed,
        extras=extras,
    )
