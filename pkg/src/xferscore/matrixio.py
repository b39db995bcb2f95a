"""On-disk formats and validating loaders.

Formats
-------
CSV
    Comma separated, no header, ``.`` decimal point, one row per sample.
FMB (matrices)
    Little-endian.  Magic ``b"FMB1"``, dtype ``u8`` (1 = f32, 2 = f64),
    rows ``u64``, cols ``u64``, then ``rows * cols`` values in row-major order.
FLB (labels)
    Little-endian.  Magic ``b"FLB1"``, n ``u64``, then ``n`` ``u32`` labels.
Task manifest
    TSV with header ``id features labels softpred accuracy num_classes``.
    ``softpred`` may be ``-``; ``num_classes`` may be ``-`` when unknown.
    Relative paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MissingFieldError, ParseError, ValidationError

FMB_MAGIC = b"FMB1"
FLB_MAGIC = b"FLB1"
_FMB_HEADER = struct.Struct("<4sBQQ")
_FLB_HEADER = struct.Struct("<4sQ")
_FMB_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}

MANIFEST_COLUMNS = ("id", "features", "labels", "softpred", "accuracy", "num_classes")

SOFTPRED_ROW_TOL = 1e-6


@dataclass(frozen=True)
class LabelVector:
    """Contiguous 0-based labels plus the original label of each code."""

    labels: np.ndarray
    classes: tuple

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def __len__(self) -> int:
        return len(self.labels)


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        return fmt
    suffix = path.suffix.lower()
    if suffix in (".fmb", ".flb", ".bin"):
        return "fmb"
    return "csv"


def validate_feature_matrix(F) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-D, got shape {F.shape}")
    if F.shape[0] < 1 or F.shape[1] < 1:
        raise ValidationError(f"feature matrix must be non-empty, got shape {F.shape}")
    if not np.all(np.isfinite(F)):
        raise ValidationError("feature matrix contains NaN or Inf")
    return F


def _read_csv_matrix(path: Path) -> np.ndarray:
    try:
        text = path.read_text()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not a text file") from exc
    rows = [line.split(",") for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValidationError(f"{path}: empty matrix")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValidationError(f"{path}: ragged row {i + 1} ({len(row)} fields, expected {width})")
    try:
        return np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _read_fmb_matrix(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < _FMB_HEADER.size:
        raise ParseError(f"{path}: truncated FMB header")
    magic, code, rows, cols = _FMB_HEADER.unpack_from(raw)
    if magic != FMB_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if code not in _FMB_DTYPES:
        raise ParseError(f"{path}: unknown dtype code {code}")
    dtype = _FMB_DTYPES[code]
    expected = rows * cols * dtype.itemsize
    payload = raw[_FMB_HEADER.size:]
    if len(payload) != expected:
        raise ParseError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(rows, cols)


def read_matrix(path, format: str | None = None) -> np.ndarray:
    """Read a matrix without semantic validation (values keep their stored dtype)."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    fmt = _infer_format(path, format)
    if fmt == "csv":
        return _read_csv_matrix(path)
    if fmt == "fmb":
        return _read_fmb_matrix(path)
    raise ValueError(f"unknown matrix format {fmt!r}")


def load_feature_matrix(path, format: str | None = None) -> np.ndarray:
    """Load an ``n_t x d`` feature matrix as float64, rejecting NaN/Inf."""
    return validate_feature_matrix(read_matrix(path, format))


def write_matrix(path, M, format: str | None = None, dtype: str = "f64") -> None:
    path = Path(path)
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {M.shape}")
    fmt = _infer_format(path, format)
    if fmt == "csv":
        with path.open("w") as fh:
            for row in M:
                fh.write(",".join(f"{v:.17g}" for v in row.tolist()))
                fh.write("\n")
        return
    if fmt != "fmb":
        raise ValueError(f"unknown matrix format {fmt!r}")
    code = {"f32": 1, "f64": 2}[dtype]
    data = np.ascontiguousarray(M, dtype=_FMB_DTYPES[code])
    with path.open("wb") as fh:
        fh.write(_FMB_HEADER.pack(FMB_MAGIC, code, data.shape[0], data.shape[1]))
        fh.write(data.tobytes())


def encode_labels(raw: Sequence) -> LabelVector:
    """Remap arbitrary labels to ``0..C-1`` in order of first appearance."""
    raw = np.asarray(raw)
    if raw.ndim != 1:
        raise ValidationError(f"labels must be 1-D, got shape {raw.shape}")
    if raw.size == 0:
        raise ValidationError("label vector is empty")
    uniq, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    labels = rank[inverse.reshape(-1)].astype(np.int64)
    classes = tuple(v.item() if hasattr(v, "item") else v for v in uniq[order])
    return LabelVector(labels=labels, classes=classes)


def load_labels(path, format: str | None = None) -> LabelVector:
    """Load integer labels (text: one per line; or FLB) and remap them contiguously."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    fmt = format or ("fmb" if path.suffix.lower() in (".flb", ".fmb", ".bin") else "txt")
    if fmt in ("fmb", "flb"):
        raw = path.read_bytes()
        if len(raw) < _FLB_HEADER.size:
            raise ParseError(f"{path}: truncated FLB header")
        magic, n = _FLB_HEADER.unpack_from(raw)
        if magic != FLB_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}")
        payload = raw[_FLB_HEADER.size:]
        if len(payload) != 4 * n:
            raise ParseError(f"{path}: payload has {len(payload)} bytes, header implies {4 * n}")
        values = np.frombuffer(payload, dtype="<u4").astype(np.int64)
    else:
        tokens = [line.strip() for line in path.read_text().splitlines() if line.strip()]
        try:
            values = np.array([int(t) for t in tokens], dtype=np.int64)
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    if values.size == 0:
        raise ValidationError(f"{path}: empty label file")
    return encode_labels(values)


def write_labels(path, labels, format: str | None = None) -> None:
    path = Path(path)
    labels = np.asarray(labels, dtype=np.int64)
    fmt = format or ("fmb" if path.suffix.lower() in (".flb", ".fmb", ".bin") else "txt")
    if fmt in ("fmb", "flb"):
        if labels.size and (labels.min() < 0 or labels.max() > np.iinfo(np.uint32).max):
            raise ValidationError("FLB labels must fit in u32")
        with path.open("wb") as fh:
            fh.write(_FLB_HEADER.pack(FLB_MAGIC, labels.size))
            fh.write(labels.astype("<u4").tobytes())
    else:
        path.write_text("".join(f"{int(v)}\n" for v in labels))


def validate_soft_predictions(P) -> np.ndarray:
    """Check entries in [0, 1] and row sums within 1e-6, then renormalize rows."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 1 or P.shape[1] < 1:
        raise ValidationError(f"soft predictions must be a non-empty 2-D matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValidationError("soft predictions contain NaN or Inf")
    if P.min() < 0.0 or P.max() > 1.0:
        raise ValidationError("soft prediction entries must lie in [0, 1]")
    sums = P.sum(axis=1)
    worst = np.max(np.abs(sums - 1.0))
    if worst > SOFTPRED_ROW_TOL:
        raise ValidationError(f"soft prediction rows must sum to 1 (worst deviation {worst:.3g})")
    return P / sums[:, None]


def load_soft_predictions(path, format: str | None = None) -> np.ndarray:
    return validate_soft_predictions(read_matrix(path, format))


@dataclass(frozen=True)
class TaskRecord:
    """One row of a task manifest.  Referenced files are read on demand."""

    id: str
    features: Path
    labels: Path
    accuracy: float
    softpred: Path | None = None
    num_classes: int | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def load_features(self) -> np.ndarray:
        return load_feature_matrix(self.features)

    def load_labels(self) -> LabelVector:
        return load_labels(self.labels)

    def load_softpred(self) -> np.ndarray | None:
        if self.softpred is None:
            return None
        return load_soft_predictions(self.softpred)


def _optional(value: str) -> str | None:
    value = value.strip()
    return None if value in ("", "-") else value


def load_task_bundle(manifest) -> list[TaskRecord]:
    """Parse a task manifest into :class:`TaskRecord` objects (files are not opened)."""
    manifest = Path(manifest)
    if not manifest.exists():
        raise ParseError(f"{manifest}: no such file")
    base = manifest.parent
    lines = [ln for ln in manifest.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ParseError(f"{manifest}: empty manifest")
    reader = csv.reader(lines, delimiter="\t")
    header = [h.strip() for h in next(reader)]
    missing = [c for c in MANIFEST_COLUMNS if c not in header]
    if missing:
        raise MissingFieldError(f"{manifest}: header lacks column(s) {', '.join(missing)}")
    col = {name: header.index(name) for name in MANIFEST_COLUMNS}

    records: list[TaskRecord] = []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        def get(name: str) -> str:
            i = col[name]
            return row[i] if i < len(row) else ""

        for required in ("id", "features", "labels", "accuracy"):
            if not get(required).strip():
                raise MissingFieldError(f"{manifest}:{lineno}: missing {required}")
        task_id = get("id").strip()
        if task_id in seen:
            raise ValidationError(f"{manifest}:{lineno}: duplicate task id {task_id!r}")
        seen.add(task_id)
        try:
            accuracy = float(get("accuracy"))
        except ValueError as exc:
            raise ParseError(f"{manifest}:{lineno}: accuracy {get('accuracy')!r} is not a number") from exc
        if not 0.0 <= accuracy <= 1.0:
            raise ValidationError(f"{manifest}:{lineno}: accuracy {accuracy} outside [0, 1]")
        n_classes = _optional(get("num_classes"))
        if n_classes is not None:
            try:
                n_classes = int(n_classes)
            except ValueError as exc:
                raise ParseError(f"{manifest}:{lineno}: num_classes {n_classes!r} is not an integer") from exc
            if n_classes < 2:
                raise ValidationError(f"{manifest}:{lineno}: num_classes must be >= 2")
        softpred = _optional(get("softpred"))
        records.append(
            TaskRecord(
                id=task_id,
                features=base / get("features").strip(),
                labels=base / get("labels").strip(),
                accuracy=accuracy,
                softpred=None if softpred is None else base / softpred,
                num_classes=n_classes,
            )
        )
    return records


def format_manifest_row(record: TaskRecord, base: Path | None = None) -> str:
    def rel(p: Path | None) -> str:
        if p is None:
            return "-"
        if base is not None:
            try:
                return str(Path(p).relative_to(base))
            except ValueError:
                pass
        return str(p)

    n_classes = "-" if record.num_classes is None else str(record.num_classes)
    return "\t".join(
        [record.id, rel(record.features), rel(record.labels), rel(record.softpred), f"{record.accuracy:.17g}", n_classes]
    )


def write_task_bundle(manifest, records: Sequence[TaskRecord]) -> None:
    manifest = Path(manifest)
    base = manifest.parent
    lines = ["\t".join(MANIFEST_COLUMNS)] + [format_manifest_row(r, base) for r in records]
    manifest.write_text("\n".join(lines) + "\n")
