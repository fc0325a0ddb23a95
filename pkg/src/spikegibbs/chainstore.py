"""Bit-exact sparse binary persistence of Gibbs draws.

Every stream is a sequence of 16-byte pairs: a little-endian binary64
value and a little-endian signed 64-bit index.  A draw's record starts
with a sentinel pair (-t in the value slot, -active_count in the index
slot, both non-positive) followed by the ascending (value, coordinate)
entries.  Records are framed by the sentinel-first convention, so a
coordinate index of zero is never ambiguous.  Pairs are buffered in
memory and appended to disk whenever the incoming record would not fit.
"""

import os
import struct

import numpy as np

from .errors import ChainIoError, CorruptRecord

MAGIC = b"SGBC"
VERSION = 1
HEADER_SIZE = 24
PAIR_DTYPE = np.dtype([("value", "<f8"), ("index", "<i8")])
DEFAULT_CAPACITY = 65536


def _write_header(fh, p):
    fh.write(MAGIC)
    fh.write(struct.pack("<IQQ", VERSION, p, 0))


def read_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE or raw[:4] != MAGIC:
        raise ChainIoError(f"{path}: not a chain file")
    version, p, _ = struct.unpack("<IQQ", raw[4:])
    if version != VERSION:
        raise ChainIoError(f"{path}: unsupported version {version}")
    return p


class PairWriter:
    """Buffered writer of (value, index) pairs with a sentinel-framed format."""

    def __init__(self, path, p, capacity=DEFAULT_CAPACITY):
        self.path = path
        self.capacity = int(capacity)
        self._buf = np.empty(self.capacity, dtype=PAIR_DTYPE)
        self._fill = 0
        self._fh = open(path, "wb")
        _write_header(self._fh, p)

    def flush(self):
        if self._fill:
            self._fh.write(self._buf[: self._fill].tobytes())
            self._fill = 0

    def _append(self, values, indices):
        k = len(values)
        if self._fill + k > self.capacity:
            self.flush()
        if k > self.capacity:
            arr = np.empty(k, dtype=PAIR_DTYPE)
            arr["value"] = values
            arr["index"] = indices
            self._fh.write(arr.tobytes())
            return
        self._buf["value"][self._fill : self._fill + k] = values
        self._buf["index"][self._fill : self._fill + k] = indices
        self._fill += k

    def append_draw(self, iteration, indices, values):
        """Append one sparse record: sentinel pair then ascending entries."""
        indices = np.asarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        k = len(indices)
        if k != len(values):
            raise ChainIoError("index/value length mismatch")
        if k and (np.any(np.diff(indices) <= 0) or np.any(indices < 0)):
            raise ChainIoError("record indices must be nonnegative and ascending")
        if np.any(values == 0.0):
            raise ChainIoError("record values must be nonzero")
        vals = np.concatenate(([-float(iteration)], values))
        idxs = np.concatenate(([-k], indices))
        self._append(vals, idxs)

    def append_pair(self, value, index):
        """Append one raw pair (used by the energy stream)."""
        if not np.isfinite(value):
            raise ChainIoError("energy values must be finite")
        self._append(np.array([value]), np.array([index], dtype=np.int64))

    def close(self):
        if self._fh is not None:
            self.flush()
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_pairs(path):
    """All pairs of a stream; a trailing partial pair is dropped."""
    size = os.path.getsize(path) - HEADER_SIZE
    n = size // PAIR_DTYPE.itemsize
    return np.fromfile(path, dtype=PAIR_DTYPE, count=n, offset=HEADER_SIZE)


def iter_records(path, pairs=None):
    """Yield (iteration, indices, values); report truncation via StopIteration.

    Raises CorruptRecord (with the byte offset) when a sentinel slot holds
    a positive value.  A trailing partially-written record is ignored, so
    any prefix of a flushed file parses to a prefix of the record
    sequence.
    """
    if pairs is None:
        pairs = read_pairs(path)
    pos = 0
    total = len(pairs)
    while pos < total:
        v = pairs["value"][pos]
        i = pairs["index"][pos]
        if v > 0 or i > 0:
            raise CorruptRecord(
                f"{path}: expected sentinel at pair {pos}",
                byte_offset=HEADER_SIZE + pos * PAIR_DTYPE.itemsize,
            )
        count = int(-i)
        if pos + 1 + count > total:
            return  # truncated trailing record
        t = int(-v)
        block = pairs[pos + 1 : pos + 1 + count]
        yield t, block["index"], block["value"]
        pos += 1 + count


def read_records(path):
    return list(iter_records(path))


def read_coefficient_trace(path, j, iter_range=None):
    """Per-iteration series of one coefficient, zeros filled.

    Returns (iterations, values) over the stored records (optionally
    restricted to ``iter_range`` = (lo, hi) half-open).
    """
    ts, vals = [], []
    for t, idx, val in iter_records(path):
        if iter_range is not None and not (iter_range[0] <= t < iter_range[1]):
            continue
        pos = np.searchsorted(idx, j)
        ts.append(t)
        if pos < len(idx) and idx[pos] == j:
            vals.append(float(val[pos]))
        else:
            vals.append(0.0)
    return np.array(ts, dtype=np.int64), np.array(vals)


# ---------------------------------------------------------------------------
# energy stream and its sorted index

def append_energy(writer, iteration, log_post):
    writer.append_pair(log_post, iteration)


def read_energy(path):
    """(iterations, log densities) in append order."""
    pairs = read_pairs(path)
    return pairs["index"].copy(), pairs["value"].copy()


def sort_energy_index(energy_path, index_path=None):
    """Write the permutation of the energy stream ordered by log density.

    The index file holds (value, original position) pairs sorted by value
    ascending, enabling O(log N + matches) window lookups.
    """
    if index_path is None:
        index_path = energy_path + ".idx"
    pairs = read_pairs(energy_path)
    order = np.argsort(pairs["value"], kind="stable")
    with open(index_path, "wb") as fh:
        _write_header(fh, 0)
        out = np.empty(len(order), dtype=PAIR_DTYPE)
        out["value"] = pairs["value"][order]
        out["index"] = order
        fh.write(out.tobytes())
    return index_path


def read_energy_index(index_path):
    pairs = read_pairs(index_path)
    return pairs["value"].copy(), pairs["index"].copy()


def energy_window(sorted_values, positions, target, eps):
    """Positions of all stored states with |logP - target| < eps."""
    lo = np.searchsorted(sorted_values, target - eps, side="left")
    hi = np.searchsorted(sorted_values, target + eps, side="right")
    sel = positions[lo:hi]
    strict = np.abs(sorted_values[lo:hi] - target) < eps
    return sel[strict]


# ---------------------------------------------------------------------------
# Rao-Blackwellized inclusion probabilities

def compute_mips(mip_path, p, default=0.0):
    """Average stored per-sweep inclusion probabilities per coordinate.

    Coordinates absent from a sweep's record take the stored default.
    """
    total = np.zeros(p)
    counts = np.zeros(p, dtype=np.int64)
    sweeps = 0
    for _, idx, val in iter_records(mip_path):
        sweeps += 1
        total[idx] += val
        counts[idx] += 1
    if sweeps == 0:
        return np.full(p, default)
    total += default * (sweeps - counts)
    return total / sweeps


def group_frequencies(tau_path, n_groups):
    """Raw on-state frequency per group from the tau stream."""
    total = np.zeros(n_groups)
    sweeps = 0
    for _, idx, _ in iter_records(tau_path):
        sweeps += 1
        total[idx] += 1.0
    return total / max(sweeps, 1), sweeps


# ---------------------------------------------------------------------------
# dense unbounded-draw stream

class UnboundedWriter:
    """Dense per-sweep rows of always-active coefficient draws."""

    def __init__(self, path, watchlist):
        self.path = path
        self.watchlist = np.asarray(sorted(watchlist), dtype=np.int64)
        self._fh = open(path, "wb")
        _write_header(self._fh, len(self.watchlist))
        self._fh.write(self.watchlist.tobytes())

    def append_row(self, values):
        values = np.asarray(values, dtype=np.float64)
        if len(values) != len(self.watchlist):
            raise ChainIoError("unbounded row width mismatch")
        self._fh.write(values.astype("<f8").tobytes())

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_unbounded(path):
    """(watchlist, rows) with any trailing partial row dropped."""
    w = read_header(path)
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE)
        watchlist = np.frombuffer(fh.read(8 * w), dtype=np.int64)
        raw = fh.read()
    n_rows = len(raw) // (8 * w) if w else 0
    rows = np.frombuffer(raw[: n_rows * 8 * w], dtype="<f8").reshape(n_rows, w)
    return watchlist.copy(), rows.copy()


# ---------------------------------------------------------------------------
# hyperparameter sidecar (for exact state reload at merges)

class HyperWriter:
    """Fixed-width (iteration, sigma2, pi_a) rows."""

    ROW = struct.Struct("<qdd")

    def __init__(self, path):
        self._fh = open(path, "wb")
        _write_header(self._fh, 0)

    def append(self, iteration, sigma2, pi_a):
        self._fh.write(self.ROW.pack(iteration, sigma2, pi_a))

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_hyper(path):
    dtype = np.dtype([("iter", "<i8"), ("sigma2", "<f8"), ("pi_a", "<f8")])
    size = os.path.getsize(path) - HEADER_SIZE
    n = size // dtype.itemsize
    return np.fromfile(path, dtype=dtype, count=n, offset=HEADER_SIZE)


# ---------------------------------------------------------------------------
# per-chain file set

class ChainFileSet:
    """Paths (and open writers) for one chain's streams."""

    STREAMS = ("beta", "tau", "mip", "energy", "hyper", "unbounded")

    def __init__(self, directory, capacity=DEFAULT_CAPACITY):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)
        self.paths = {s: os.path.join(directory, s + ".bin") for s in self.STREAMS}
        self.capacity = capacity
        self.writers = {}

    def open(self, p, n_groups, watchlist=()):
        self.writers["beta"] = PairWriter(self.paths["beta"], p, self.capacity)
        self.writers["tau"] = PairWriter(self.paths["tau"], n_groups, self.capacity)
        self.writers["mip"] = PairWriter(self.paths["mip"], p, self.capacity)
        self.writers["energy"] = PairWriter(self.paths["energy"], 0, self.capacity)
        self.writers["hyper"] = HyperWriter(self.paths["hyper"])
        if len(watchlist):
            self.writers["unbounded"] = UnboundedWriter(
                self.paths["unbounded"], watchlist)
        return self

    def close(self):
        for w in self.writers.values():
            w.close()
        self.writers = {}

    @property
    def energy_index_path(self):
        return self.paths["energy"] + ".idx"
