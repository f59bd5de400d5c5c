"""TCK tractogram reader/writer plus a labeled sidecar text format.

The TCK layout: a text header starting with the line ``mrtrix tracks``,
``key: value`` entries including ``datatype`` and ``file: . <offset>``,
terminated by ``END``; then a binary section of 3-component vertices in the
declared datatype. A vertex of all-NaN ends a streamline, a vertex of
all-Inf ends the file.

Labels live in a sidecar UTF-8 text file (one class identifier per
streamline) because TCK has no per-streamline field.
"""

from __future__ import annotations

import warnings

import numpy as np

from .tractogram import Tractogram

MAGIC = "mrtrix tracks"

DATATYPES = {
    "Float32LE": "<f4",
    "Float32BE": ">f4",
    "Float64LE": "<f8",
    "Float64BE": ">f8",
}


class TckError(ValueError):
    pass


def _parse_header(data: bytes):
    end = data.find(b"END\n")
    if end < 0:
        end = data.find(b"END")
        if end < 0:
            raise TckError("no END line in header")
    text = data[: end].decode("ascii", errors="replace")
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise TckError("not a TCK file")
    entries = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        if ":" not in line:
            raise TckError(f"malformed header line: {line!r}")
        key, value = line.split(":", 1)
        entries.setdefault(key.strip(), []).append(value.strip())
    return entries


def read_tck(data: bytes) -> Tractogram:
    """Parse TCK bytes into an unlabeled Tractogram."""
    entries = _parse_header(data)
    if "datatype" not in entries:
        raise TckError("header missing datatype")
    dtag = entries["datatype"][0]
    if dtag not in DATATYPES:
        raise TckError(f"unknown datatype {dtag!r}")
    dtype = np.dtype(DATATYPES[dtag])
    if "file" not in entries:
        raise TckError("header missing file offset")
    file_entry = entries["file"][0].split()
    offset = int(file_entry[-1])
    declared = int(entries["count"][0]) if "count" in entries else None

    body = data[offset:]
    n_vals = len(body) // dtype.itemsize
    values = np.frombuffer(body[: n_vals * dtype.itemsize], dtype=dtype)
    values = values.astype(np.float64)
    n_rows = len(values) // 3
    rows = values[: n_rows * 3].reshape(-1, 3)

    inf_rows = np.flatnonzero(np.all(np.isinf(rows), axis=1))
    if len(inf_rows) == 0:
        raise TckError("unexpected EOF: missing Inf terminator")
    rows = rows[: inf_rows[0]]  # never read past the terminator

    nan_rows = np.flatnonzero(np.all(np.isnan(rows), axis=1))
    streamlines = []
    start = 0
    bounds = list(nan_rows) + [len(rows)]
    for stop in bounds:
        seg = rows[start:stop]
        start = stop + 1
        if len(seg) == 0:
            continue
        if len(seg) < 2:
            raise TckError(
                f"streamline {len(streamlines)} has fewer than 2 points"
            )
        streamlines.append(np.array(seg))
    if declared is not None and declared != len(streamlines):
        warnings.warn(
            f"TCK header declares count {declared} but file contains "
            f"{len(streamlines)} streamlines"
        )
    return Tractogram(streamlines=streamlines)


def write_tck(t: Tractogram, datatype: str = "Float32LE") -> bytes:
    """Serialize a tractogram to TCK bytes."""
    if len(t) == 0:
        raise TckError("cannot write an empty tractogram")
    if datatype not in DATATYPES:
        raise TckError(f"unknown datatype {datatype!r}")
    dtype = np.dtype(DATATYPES[datatype])
    if dtype.itemsize == 4:
        limit = np.finfo(np.float32).max
        for i, s in enumerate(t.streamlines):
            if np.any(np.abs(s) > limit):
                raise TckError(
                    f"value not representable in Float32 (streamline {i})"
                )

    base = f"{MAGIC}\ndatatype: {datatype}\ncount: {len(t)}\n"
    # The offset appears inside the header, so solve the fixed point.
    offset = 0
    for _ in range(4):
        header = base + f"file: . {offset}\nEND\n"
        if len(header) == offset:
            break
        offset = len(header)
    header = base + f"file: . {offset}\nEND\n"

    nan_row = np.full(3, np.nan)
    inf_row = np.full(3, np.inf)
    chunks = []
    for s in t.streamlines:
        chunks.append(s)
        chunks.append(nan_row[None])
    chunks.append(inf_row[None])
    body = np.concatenate(chunks, axis=0).astype(dtype).tobytes()
    return header.encode("ascii") + body


LABEL_MAGIC = "streamline labels"


def write_labeled(t: Tractogram) -> str:
    """Serialize a tractogram's labels and class names to sidecar text."""
    if t.labels is None:
        raise TckError("tractogram has no labels to write")
    class_names = t.class_names
    if class_names is None:
        class_names = sorted(set(t.labels))
    lines = [LABEL_MAGIC, f"classes: {len(class_names)}"]
    lines.extend(str(c) for c in class_names)
    lines.append(f"labels: {len(t.labels)}")
    lines.extend(str(lab) for lab in t.labels)
    return "\n".join(lines) + "\n"


def read_labeled(text: str, n_streamlines: int | None = None):
    """Parse sidecar text into (labels, class_names).

    If ``n_streamlines`` is given, the label count must match it.
    """
    lines = text.splitlines()
    if not lines or lines[0] != LABEL_MAGIC:
        raise TckError("not a streamline label file")
    if len(lines) < 2 or not lines[1].startswith("classes:"):
        raise TckError("missing classes header")
    n_classes = int(lines[1].split(":", 1)[1])
    class_names = lines[2 : 2 + n_classes]
    pos = 2 + n_classes
    if pos >= len(lines) or not lines[pos].startswith("labels:"):
        raise TckError("missing labels header")
    n_labels = int(lines[pos].split(":", 1)[1])
    labels = lines[pos + 1 : pos + 1 + n_labels]
    if len(labels) != n_labels:
        raise TckError("label section truncated")
    known = set(class_names)
    for i, lab in enumerate(labels):
        if lab not in known:
            raise TckError(f"label {lab!r} on line {pos + 2 + i} not in class names")
    if n_streamlines is not None and n_labels != n_streamlines:
        raise TckError(
            f"{n_labels} labels for {n_streamlines} streamlines"
        )
    if n_streamlines is not None and n_streamlines > 0 and n_labels == 0:
        raise TckError("empty label file for nonempty tractogram")
    return labels, class_names


def load_labeled_tractogram(tck_path, labels_path) -> Tractogram:
    """Read a TCK file and its label sidecar into one labeled Tractogram."""
    with open(tck_path, "rb") as f:
        t = read_tck(f.read())
    with open(labels_path, "r", encoding="utf-8") as f:
        labels, class_names = read_labeled(f.read(), n_streamlines=len(t))
    return Tractogram(streamlines=t.streamlines, labels=labels, class_names=class_names)


def save_labeled_tractogram(t: Tractogram, tck_path, labels_path, datatype="Float32LE"):
    """Write a labeled tractogram as a TCK file plus a label sidecar."""
    with open(tck_path, "wb") as f:
        f.write(write_tck(t, datatype))
    with open(labels_path, "w", encoding="utf-8") as f:
        f.write(write_labeled(t))
