"""Design/response ingestion and group-structure parsing.

CSV files use comma delimiters with an optional header row.  The raw
binary matrix format is magic "SGXM", u32 version, u64 n, u64 p, then
n*p little-endian binary64 values in column-major order.
"""

import struct

import numpy as np

from .engine import GroupConfig
from .errors import ChainIoError, ConfigError
from .groups import GroupPrior

MATRIX_MAGIC = b"SGXM"
MATRIX_VERSION = 1


def load_csv_matrix(path, header=False):
    arr = np.genfromtxt(path, delimiter=",", skip_header=int(bool(header)),
                        dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if np.any(~np.isfinite(arr)):
        raise ChainIoError(f"{path}: non-finite or unparseable entries")
    return arr


def load_csv_vector(path, header=False):
    arr = load_csv_matrix(path, header=header)
    if arr.shape[1] != 1:
        raise ChainIoError(f"{path}: expected a single column")
    return arr[:, 0]


def write_binary_matrix(path, values):
    values = np.asarray(values, dtype=np.float64)
    n, p = values.shape
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<IQQ", MATRIX_VERSION, n, p))
        fh.write(np.asfortranarray(values).tobytes(order="F"))


def load_binary_matrix(path):
    with open(path, "rb") as fh:
        head = fh.read(24)
        if len(head) < 24 or head[:4] != MATRIX_MAGIC:
            raise ChainIoError(f"{path}: not a binary design file")
        version, n, p = struct.unpack("<IQQ", head[4:])
        if version != MATRIX_VERSION:
            raise ChainIoError(f"{path}: unsupported version {version}")
        data = np.fromfile(fh, dtype="<f8", count=n * p)
    if len(data) != n * p:
        raise ChainIoError(f"{path}: truncated payload")
    return data.reshape((n, p), order="F").copy()


def load_group_map(path, default_pi_a=0.5, prior=None):
    """Group structure from a CSV of (coordinate, group id, constrained).

    Returns GroupConfig entries ordered by group id.
    """
    rows = np.genfromtxt(path, delimiter=",", dtype=np.int64)
    if rows.ndim == 1:
        rows = rows.reshape(1, -1)
    if rows.shape[1] != 3:
        raise ConfigError(f"{path}: expected 3 columns")
    by_group = {}
    for coord, gid, constrained in rows:
        entry = by_group.setdefault(int(gid), {"coords": [], "con": bool(constrained)})
        entry["coords"].append(int(coord))
        entry["con"] = entry["con"] or bool(constrained)
    configs = []
    for gid in sorted(by_group):
        e = by_group[gid]
        configs.append(GroupConfig(
            indices=tuple(sorted(e["coords"])), constrained=e["con"],
            pi_a=default_pi_a,
            prior=prior if prior is not None else GroupPrior()))
    return configs


def parse_group_ranges(specs, default_pi_a=0.5, prior=None):
    """Group structure from CLI range strings like "0-7:zerosum"."""
    configs = []
    for spec in specs:
        part, _, flag = spec.partition(":")
        constrained = flag.strip().lower() in ("zerosum", "zero-sum", "1")
        if "-" in part:
            lo, hi = part.split("-")
            indices = tuple(range(int(lo), int(hi) + 1))
        else:
            indices = tuple(int(x) for x in part.split(","))
        configs.append(GroupConfig(
            indices=indices, constrained=constrained, pi_a=default_pi_a,
            prior=prior if prior is not None else GroupPrior()))
    return configs
