"""Binary PLY persistence in the layout common splatting viewers expect.

Per vertex: x,y,z, nx,ny,nz (zeros), f_dc_0..2, f_rest_* (channel-major:
all red band-1.. coefficients, then green, then blue), opacity (logit),
scale_0..2 (log std-dev), rot_0..3 (quaternion wxyz, stored as-is). All
properties are little-endian float32.
"""

from __future__ import annotations

import numpy as np

from .scene import Scene, sh_basis_size


class PlyParseError(ValueError):
    """Malformed PLY input; byte_offset points at the offending location."""

    def __init__(self, message: str, byte_offset: int = 0):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


def _property_names(degree: int) -> list[str]:
    rest = 3 * (sh_basis_size(degree) - 1)
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def write_ply(scene: Scene, path) -> None:
    if len(scene) == 0:
        raise ValueError("refusing to write an empty scene")
    k = len(scene)
    basis = sh_basis_size(scene.sh_degree)
    names = _property_names(scene.sh_degree)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {k}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")

    data = np.empty((k, len(names)), dtype="<f4")
    data[:, 0:3] = scene.positions
    data[:, 3:6] = 0.0
    data[:, 6:9] = scene.sh[:, 0, :]
    # channel-major rest block: (K, basis-1, 3) -> (K, 3, basis-1)
    rest = scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(k, 3 * (basis - 1))
    data[:, 9 : 9 + 3 * (basis - 1)] = rest
    off = 9 + 3 * (basis - 1)
    data[:, off] = scene.opacity_logits
    data[:, off + 1 : off + 4] = scene.log_scales
    data[:, off + 4 : off + 8] = scene.rotations

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def read_ply(path) -> Scene:
    with open(path, "rb") as f:
        blob = f.read()

    end_marker = b"end_header\n"
    end = blob.find(end_marker)
    if not blob.startswith(b"ply\n") or end < 0:
        raise PlyParseError("missing header", 0)
    header_lines = blob[:end].decode("ascii", errors="replace").splitlines()
    payload_start = end + len(end_marker)

    if "format binary_little_endian 1.0" not in header_lines[1]:
        raise PlyParseError(f"unsupported format line {header_lines[1]!r}", len(b"ply\n"))

    count = None
    props: list[str] = []
    offset = 0
    for line in header_lines:
        if line.startswith("element vertex"):
            count = int(line.split()[-1])
        elif line.startswith("element "):
            raise PlyParseError(f"unexpected element {line.split()[1]!r}", offset)
        elif line.startswith("property"):
            parts = line.split()
            if parts[1] != "float":
                raise PlyParseError(f"unsupported property type in {line!r}", offset)
            props.append(parts[2])
        offset += len(line) + 1
    if count is None:
        raise PlyParseError("header lacks an 'element vertex' line", payload_start)

    degree = None
    for d in range(4):
        if props == _property_names(d):
            degree = d
            break
    if degree is None:
        expected_sets = {d: set(_property_names(d)) for d in range(4)}
        extra = set(props) - expected_sets[3]
        detail = f"unexpected property {sorted(extra)[0]!r}" if extra else f"{len(props)} properties do not match any SH degree"
        raise PlyParseError(f"unknown property layout for element 'vertex': {detail}", payload_start)

    n_props = len(props)
    expected_bytes = count * n_props * 4
    if len(blob) - payload_start < expected_bytes:
        raise PlyParseError(
            f"truncated payload for element 'vertex': expected {expected_bytes} bytes, found {len(blob) - payload_start}",
            payload_start,
        )
    data = np.frombuffer(blob, dtype="<f4", count=count * n_props, offset=payload_start)
    data = data.reshape(count, n_props).astype(float)

    basis = sh_basis_size(degree)
    sh = np.empty((count, basis, 3))
    sh[:, 0, :] = data[:, 6:9]
    rest = data[:, 9 : 9 + 3 * (basis - 1)].reshape(count, 3, basis - 1)
    sh[:, 1:, :] = rest.transpose(0, 2, 1)
    off = 9 + 3 * (basis - 1)
    return Scene(
        positions=data[:, 0:3].copy(),
        log_scales=data[:, off + 1 : off + 4].copy(),
        rotations=data[:, off + 4 : off + 8].copy(),
        opacity_logits=data[:, off].copy(),
        sh=sh,
        sh_degree=degree,
    )
