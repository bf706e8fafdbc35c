"""CSV ingestion with schema-driven encoding, and versioned model files."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import SurvivalDataset
from .network import ArchSpec, CovariatePartition, param_names, param_shapes

FORMAT_VERSION = 1
COVARIATE_KINDS = ("ordinal_monotone", "ordinal", "nominal")
DIRECTIONS = ("survival_decreasing", "survival_increasing")


class DataError(ValueError):
    """Malformed input file or content."""


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str
    direction: str = "survival_decreasing"

    def __post_init__(self):
        if self.kind not in COVARIATE_KINDS:
            raise DataError(f"covariate {self.name!r}: kind must be one of {COVARIATE_KINDS}")
        if self.direction not in DIRECTIONS:
            raise DataError(f"covariate {self.name!r}: direction must be one of {DIRECTIONS}")


@dataclass(frozen=True)
class DatasetSchema:
    id_column: str
    duration_column: str
    event_column: str
    covariates: tuple[Covariate, ...]

    def __post_init__(self):
        covs = tuple(c if isinstance(c, Covariate) else Covariate(**c) for c in self.covariates)
        object.__setattr__(self, "covariates", covs)
        names = [c.name for c in covs]
        if len(set(names)) != len(names):
            raise DataError("covariate names must be unique")
        special = {self.id_column, self.duration_column, self.event_column}
        if len(special) != 3 or special & set(names):
            raise DataError("id, duration and event columns must be distinct and not covariates")

    def of_kind(self, kind: str) -> list[Covariate]:
        return [c for c in self.covariates if c.kind == kind]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSchema":
        try:
            return cls(data["id_column"], data["duration_column"], data["event_column"], tuple(data["covariates"]))
        except (KeyError, TypeError) as exc:
            raise DataError(f"invalid schema: {exc}") from exc


@dataclass
class NormalizationStats:
    """Per-column centering/scaling, sign flips, category levels and the duration factor."""

    centers: dict[str, float]
    scales: dict[str, float]
    signs: dict[str, float]
    categories: dict[str, list[str]]
    duration_factor: float

    def __post_init__(self):
        if any(s <= 0 for s in self.scales.values()) or self.duration_factor <= 0:
            raise DataError("normalization scales must be positive")

    def identity(self) -> "NormalizationStats":
        """Same categories, no transformation of numbers."""
        return NormalizationStats({k: 0.0 for k in self.centers}, {k: 1.0 for k in self.scales},
                                  {k: 1.0 for k in self.signs}, dict(self.categories), 1.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationStats":
        return cls(**data)


@dataclass
class LoadedData:
    dataset: SurvivalDataset
    partition: CovariatePartition
    stats: NormalizationStats
    column_names: list[str]
    raw_durations: np.ndarray


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc


def load_schema(path) -> DatasetSchema:
    return DatasetSchema.from_dict(read_json(path))


def _read_rows(csv_path, schema: DatasetSchema):
    try:
        with open(csv_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            needed = [schema.id_column, schema.duration_column, schema.event_column] + [c.name for c in schema.covariates]
            missing = [c for c in needed if c not in header]
            if missing:
                raise DataError(f"{csv_path}: missing column(s) {missing}")
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"{csv_path}: {exc.strerror}") from exc
    if not rows:
        raise DataError(f"{csv_path}: no data rows")
    return rows


def _number(row, column, line):
    text = row[column]
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataError(f"line {line}, column {column!r}: non-numeric value {text!r}") from None
    if not np.isfinite(value):
        raise DataError(f"line {line}, column {column!r}: non-finite value {text!r}")
    return value


def load_dataset(csv_path, schema: DatasetSchema, stats: NormalizationStats | None = None) -> LoadedData:
    """Read and encode a mission CSV.

    Column order is monotone ordinals, then other ordinals, then one
    indicator column per level of each nominal covariate.  Monotone columns
    marked survival_increasing are negated.  Numeric columns are
    standardized and durations multiplied by a factor making the smallest
    one equal to 1.  Pass ``stats`` to reuse the encoding of a training file.
    """
    rows = _read_rows(csv_path, schema)
    monotone = schema.of_kind("ordinal_monotone")
    ordinal = schema.of_kind("ordinal")
    nominal = schema.of_kind("nominal")

    z, delta, vids = [], [], []
    numeric = {c.name: [] for c in monotone + ordinal}
    labels = {c.name: [] for c in nominal}
    for r, row in enumerate(rows):
        line = r + 2
        zi = _number(row, schema.duration_column, line)
        if zi <= 0:
            raise DataError(f"line {line}, column {schema.duration_column!r}: duration must be positive, got {zi}")
        di = _number(row, schema.event_column, line)
        if di not in (0.0, 1.0):
            raise DataError(f"line {line}, column {schema.event_column!r}: event flag must be 0 or 1, got {row[schema.event_column]!r}")
        z.append(zi)
        delta.append(di)
        vids.append(row[schema.id_column])
        for name in numeric:
            numeric[name].append(_number(row, name, line))
        for name in labels:
            labels[name].append(row[name])
    z = np.array(z)

    if stats is None:
        signs = {c.name: -1.0 if c.direction == "survival_increasing" and c.kind == "ordinal_monotone" else 1.0
                 for c in monotone + ordinal}
        centers, scales = {}, {}
        for name, values in numeric.items():
            v = signs[name] * np.array(values)
            centers[name] = float(v.mean())
            sd = float(v.std())
            scales[name] = sd if sd > 0 else 1.0
        categories = {name: sorted(set(values)) for name, values in labels.items()}
        stats = NormalizationStats(centers, scales, signs, categories, float(1.0 / z.min()))

    columns, names = [], []
    for c in monotone + ordinal:
        try:
            v = stats.signs[c.name] * np.array(numeric[c.name])
            columns.append((v - stats.centers[c.name]) / stats.scales[c.name])
        except KeyError:
            raise DataError(f"column {c.name!r}: no normalization statistics") from None
        names.append(c.name)
    for c in nominal:
        levels = stats.categories.get(c.name)
        if levels is None:
            raise DataError(f"column {c.name!r}: no category levels")
        index = {lvl: i for i, lvl in enumerate(levels)}
        for r, lbl in enumerate(labels[c.name]):
            if lbl not in index:
                raise DataError(f"line {r + 2}, column {c.name!r}: unknown category {lbl!r}")
        codes = np.array([index[lbl] for lbl in labels[c.name]])
        for i, lvl in enumerate(levels):
            columns.append((codes == i).astype(float))
            names.append(f"{c.name}={lvl}")

    n = len(rows)
    X = np.column_stack(columns) if columns else np.zeros((n, 0))
    d_a, d_b = len(monotone), len(ordinal)
    d = X.shape[1]
    partition = CovariatePartition(tuple(range(d_a)), tuple(range(d_a, d_a + d_b)), tuple(range(d_a + d_b, d)), d)
    dataset = SurvivalDataset(np.array(vids), X, z * stats.duration_factor, np.array(delta))
    return LoadedData(dataset, partition, stats, names, z)


def write_normalized_csv(data: LoadedData, schema: DatasetSchema, path) -> None:
    """Write the encoded numbers back in the schema's column layout (categories as labels).

    Reloading the result with ``stats.identity()`` reproduces the same matrix.
    """
    ds = data.dataset
    header = [schema.id_column, schema.duration_column, schema.event_column] + [c.name for c in schema.covariates]
    col_of = {name: j for j, name in enumerate(data.column_names)}
    out_rows = []
    for i in range(len(ds)):
        row = {schema.id_column: ds.vehicle_ids[i], schema.duration_column: repr(float(ds.z[i])),
               schema.event_column: int(ds.delta[i])}
        for c in schema.covariates:
            if c.kind == "nominal":
                levels = data.stats.categories[c.name]
                hot = [lvl for lvl in levels if ds.X[i, col_of[f"{c.name}={lvl}"]] == 1.0]
                row[c.name] = hot[0]
            else:
                row[c.name] = repr(float(ds.X[i, col_of[c.name]]))
        out_rows.append(row)
    atomic_write(path, _csv_text(header, out_rows))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    """Atomically write a list of dicts as CSV."""
    atomic_write(path, _csv_text(header, rows))


def atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# fitted models


class ModelFormatError(DataError):
    pass


@dataclass
class FittedModel:
    spec: ArchSpec
    params: dict
    schema: DatasetSchema
    stats: NormalizationStats
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "spec": self.spec.to_dict(),
            "params": {name: np.asarray(self.params[name]).tolist() for name in param_names(self.spec)},
            "schema": self.schema.to_dict(),
            "stats": self.stats.to_dict(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FittedModel":
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {version!r} (expected {FORMAT_VERSION})")
        try:
            spec = ArchSpec.from_dict(data["spec"])
            shapes = param_shapes(spec)
            params = {}
            for name in param_names(spec):
                arr = np.array(data["params"][name], dtype=float)
                if arr.shape != shapes[name]:
                    raise ModelFormatError(f"parameter {name!r} has shape {arr.shape}, expected {shapes[name]}")
                params[name] = arr
            return cls(spec, params, DatasetSchema.from_dict(data["schema"]),
                       NormalizationStats.from_dict(data["stats"]), data.get("metadata", {}), version)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"corrupt model file: {exc}") from exc


def save_model(model: FittedModel, path) -> None:
    atomic_write(path, dump_json(model.to_dict()))


def load_model(path) -> FittedModel:
    data = read_json(path)
    if not isinstance(data, dict):
        raise ModelFormatError(f"{path}: not a model file")
    return FittedModel.from_dict(data)
