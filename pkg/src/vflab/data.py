"""Dataset ingestion, standardization, and vertical partitioning.

A `FeatureMatrix` is the unit of data movement everywhere: row-major
float32 features plus opaque string IDs and optional integer labels.
`vertical_split` turns one table into the two-participant layout (the
label-holding side and the feature-only side) with a seeded aligned
subset, simulating the outcome of an ID-intersection step.
"""

from __future__ import annotations

import csv as _csv
import json
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

VAL_FRACTION_DEFAULT = 0.10


@dataclass
class FeatureMatrix:
    ids: np.ndarray                 # unique strings, one per row
    features: np.ndarray            # (n, d) float32
    feature_names: list[str]
    labels: np.ndarray | None = None  # (n,) int64 when present

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=str)
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got {self.features.shape}")
        if len(self.ids) != self.features.shape[0]:
            raise DataError(
                f"{len(self.ids)} ids for {self.features.shape[0]} rows"
            )
        if len(set(self.ids.tolist())) != len(self.ids):
            raise DataError("duplicate sample ids")
        if len(self.feature_names) != self.features.shape[1]:
            raise DataError(
                f"{len(self.feature_names)} names for {self.features.shape[1]} columns"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.ids):
                raise DataError(
                    f"{len(self.labels)} labels for {len(self.ids)} rows"
                )

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_cols(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "FeatureMatrix":
        idx = np.asarray(indices)
        return FeatureMatrix(
            self.ids[idx],
            self.features[idx],
            list(self.feature_names),
            None if self.labels is None else self.labels[idx],
        )

    def select_columns(self, names: list[str]) -> "FeatureMatrix":
        missing = [n for n in names if n not in self.feature_names]
        if missing:
            raise ConfigError(f"unknown feature name(s): {missing}")
        cols = [self.feature_names.index(n) for n in names]
        return FeatureMatrix(
            self.ids, self.features[:, cols], list(names), self.labels
        )

    def drop_labels(self) -> "FeatureMatrix":
        return FeatureMatrix(self.ids, self.features, list(self.feature_names), None)


def load_csv(path, id_column: str = "id", label_column: str | None = None) -> FeatureMatrix:
    """Read a feature table: header row, one ID column, optional integer
    label column, every other column numeric.

    Parse failures point at the offending row (1-based, header = row 1)
    and column.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if id_column not in header:
            raise DataError(f"{path}: missing id column {id_column!r}")
        if label_column is not None and label_column not in header:
            raise DataError(f"{path}: missing label column {label_column!r}")
        id_pos = header.index(id_column)
        label_pos = header.index(label_column) if label_column else None
        feat_pos = [
            i for i in range(len(header)) if i != id_pos and i != label_pos
        ]
        names = [header[i] for i in feat_pos]
        ids, rows, labels = [], [], []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}"
                )
            rid = row[id_pos]
            if rid in seen:
                raise DataError(f"{path}: duplicate id {rid!r} at row {lineno}")
            seen.add(rid)
            ids.append(rid)
            vals = []
            for i in feat_pos:
                cell = row[i].strip()
                if cell == "":
                    raise DataError(
                        f"{path}: missing value at row {lineno}, column {header[i]!r}"
                    )
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, "
                        f"column {header[i]!r}"
                    ) from None
            rows.append(vals)
            if label_pos is not None:
                try:
                    labels.append(int(row[label_pos]))
                except ValueError:
                    raise DataError(
                        f"{path}: non-integer label {row[label_pos]!r} at row {lineno}"
                    ) from None
    if not ids:
        raise DataError(f"{path}: no data rows")
    return FeatureMatrix(
        np.array(ids, dtype=str),
        np.array(rows, dtype=np.float32),
        names,
        np.array(labels, dtype=np.int64) if label_column else None,
    )


def write_csv(path, fm: FeatureMatrix, id_column: str = "id", label_column: str = "label") -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = _csv.writer(fh)
        header = [id_column]
        if fm.labels is not None:
            header.append(label_column)
        header.extend(fm.feature_names)
        w.writerow(header)
        for i in range(fm.n_rows):
            row = [fm.ids[i]]
            if fm.labels is not None:
                row.append(int(fm.labels[i]))
            row.extend(repr(float(v)) for v in fm.features[i])
            w.writerow(row)


@dataclass
class ColumnStats:
    mean: np.ndarray
    std: np.ndarray  # population std; zero-variance columns stored as 0

    def apply(self, features: np.ndarray) -> np.ndarray:
        safe = np.where(self.std == 0.0, 1.0, self.std)
        return ((features - self.mean) / safe).astype(np.float32)


def standardize(
    train: FeatureMatrix, others: list[FeatureMatrix] = ()
) -> tuple[FeatureMatrix, list[FeatureMatrix], ColumnStats]:
    """Z-score columns with statistics from `train` only, then apply the
    same stats to every matrix in `others` (no leakage from held-out
    rows). Zero-variance columns map to all-zeros.
    """
    if train.n_rows == 0:
        raise DataError("cannot standardize an empty training matrix")
    x = train.features.astype(np.float64)
    stats = ColumnStats(mean=x.mean(axis=0), std=x.std(axis=0))
    out_train = replace(train, features=stats.apply(train.features))
    out_others = [replace(o, features=stats.apply(o.features)) for o in others]
    return out_train, out_others, stats


def stable_seed(*parts) -> int:
    """Deterministic 32-bit seed from strings/ints (stable across runs)."""
    blob = "|".join(str(p) for p in parts).encode()
    return zlib.crc32(blob)


@dataclass
class ScenarioConfig:
    """One cell of the experiment grid."""

    dataset_id: str
    active_features: list[str]
    aligned_count: int
    val_fraction: float = VAL_FRACTION_DEFAULT
    test_count: int = 0
    lam: float = 0.01
    distill_loss: str = "mse"
    batch_size: int = 32
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    partition_seed: int = 0

    def __post_init__(self):
        if self.aligned_count < 1:
            raise ConfigError("aligned_count must be positive (the shared set may not be empty)")
        if self.lam < 0:
            raise ConfigError(f"distillation weight must be >= 0, got {self.lam}")
        if self.test_count < 0:
            raise ConfigError(f"test_count must be >= 0, got {self.test_count}")
        if self.test_count and self.test_count >= self.aligned_count:
            raise ConfigError(
                f"test_count {self.test_count} must be < aligned_count {self.aligned_count}"
            )
        self.seeds = tuple(int(s) for s in self.seeds)

    @property
    def n_active(self) -> int:
        return len(self.active_features)

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "active_features": list(self.active_features),
            "aligned_count": self.aligned_count,
            "val_fraction": self.val_fraction,
            "test_count": self.test_count,
            "lambda": self.lam,
            "distill_loss": self.distill_loss,
            "batch_size": self.batch_size,
            "seeds": list(self.seeds),
            "partition_seed": self.partition_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(
            dataset_id=d["dataset_id"],
            active_features=list(d["active_features"]),
            aligned_count=int(d["aligned_count"]),
            val_fraction=float(d.get("val_fraction", VAL_FRACTION_DEFAULT)),
            test_count=int(d.get("test_count", 0)),
            lam=float(d.get("lambda", 0.01)),
            distill_loss=d.get("distill_loss", "mse"),
            batch_size=int(d.get("batch_size", 32)),
            seeds=tuple(d.get("seeds", (0, 1, 2, 3, 4))),
            partition_seed=int(d.get("partition_seed", 0)),
        )


@dataclass
class VerticalSplit:
    """Two-participant view of one table.

    Both sides keep every row (vertically split); only `aligned_mask`
    rows carry the same ID verbatim on both sides, so intersecting the
    two ID sets recovers exactly the aligned set. Unaligned rows get a
    per-party suffix. Masks index rows in the original dataset order.
    """

    active: FeatureMatrix
    passive: FeatureMatrix
    aligned_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    @property
    def aligned_ids(self) -> set:
        return set(self.active.ids[self.aligned_mask].tolist())

    @property
    def val_ids(self) -> set:
        return set(self.active.ids[self.val_mask].tolist())

    @property
    def test_ids(self) -> set:
        return set(self.active.ids[self.test_mask].tolist())


def vertical_split(data: FeatureMatrix, cfg: ScenarioConfig) -> VerticalSplit:
    """Partition features between the two parties and sample the aligned,
    test and validation sets.

    The label holder gets `cfg.active_features`; the other side gets the
    complement and no labels. The test rows (when any) are drawn from
    the aligned set; validation rows are drawn from everything that is
    not test.
    """
    if data.labels is None:
        raise DataError("vertical_split needs labels on the input table")
    unknown = [f for f in cfg.active_features if f not in data.feature_names]
    if unknown:
        raise ConfigError(f"unknown feature name(s): {unknown}")
    n = data.n_rows
    if cfg.aligned_count > n:
        raise DataError(
            f"aligned_count {cfg.aligned_count} exceeds {n} rows"
        )
    # independent substreams so e.g. the validation draw does not shift
    # when only the aligned count changes between scenarios
    rng_aligned = np.random.default_rng(np.random.SeedSequence([cfg.partition_seed, 1]))
    rng_test = np.random.default_rng(np.random.SeedSequence([cfg.partition_seed, 2]))
    rng_val = np.random.default_rng(np.random.SeedSequence([cfg.partition_seed, 3]))
    aligned_idx = rng_aligned.choice(n, size=cfg.aligned_count, replace=False)
    aligned_mask = np.zeros(n, dtype=bool)
    aligned_mask[aligned_idx] = True

    test_mask = np.zeros(n, dtype=bool)
    if cfg.test_count:
        test_idx = rng_test.choice(np.sort(aligned_idx), size=cfg.test_count, replace=False)
        test_mask[test_idx] = True

    pool = np.flatnonzero(~test_mask)
    n_val = int(round(cfg.val_fraction * len(pool)))
    val_mask = np.zeros(n, dtype=bool)
    if n_val:
        val_mask[rng_val.choice(pool, size=n_val, replace=False)] = True

    passive_features = [f for f in data.feature_names if f not in cfg.active_features]
    active_fm = data.select_columns(list(cfg.active_features))
    passive_fm = data.select_columns(passive_features).drop_labels()

    active_ids = np.where(aligned_mask, data.ids, np.char.add(data.ids, "@A"))
    passive_ids = np.where(aligned_mask, data.ids, np.char.add(data.ids, "@P"))
    active_fm = replace(active_fm, ids=active_ids)
    passive_fm = replace(passive_fm, ids=passive_ids)
    return VerticalSplit(active_fm, passive_fm, aligned_mask, val_mask, test_mask)


# ---------------------------------------------------------------------------
# Scenario registry


@dataclass
class DatasetSpec:
    dataset_id: str
    base_active: list[str]          # the five features the label holder starts with
    transfer_order: list[str]       # given up one by one to shrink the active side
    aligned_counts: list[int]
    batch_size: int
    splitnn_test_count: int
    csv: str | None = None
    id_column: str = "id"
    label_column: str = "label"
    reduce_rows: int | None = None
    reduce_seed: int = 7
    loader: object = None           # callable() -> FeatureMatrix, for built-ins

    def active_feature_sets(self) -> list[list[str]]:
        sets = [list(self.base_active)]
        cur = list(self.base_active)
        for moved in self.transfer_order:
            cur = [f for f in cur if f != moved]
            sets.append(list(cur))
        return sets


def _load_breast_cancer() -> FeatureMatrix:
    from sklearn.datasets import load_breast_cancer

    raw = load_breast_cancer()
    ids = np.array([str(i) for i in range(raw.data.shape[0])])
    return FeatureMatrix(
        ids,
        raw.data.astype(np.float32),
        [str(n) for n in raw.feature_names],
        raw.target.astype(np.int64),
    )


def builtin_registry() -> dict[str, DatasetSpec]:
    breast = DatasetSpec(
        dataset_id="breast_cancer",
        base_active=[
            "worst compactness",
            "concave points error",
            "smoothness error",
            "mean texture",
            "worst fractal dimension",
        ],
        transfer_order=[
            "worst compactness",
            "concave points error",
            "smoothness error",
        ],
        aligned_counts=[250, 200, 150, 100],
        batch_size=8,
        splitnn_test_count=50,
        reduce_rows=500,
        loader=_load_breast_cancer,
    )
    mimic_active = ["Age", "NumCallouts", "NumDiagnosis", "NumProcs", "NumCPTevents"]
    mimic = DatasetSpec(
        dataset_id="mimic3",
        base_active=mimic_active,
        transfer_order=["NumCPTevents", "NumProcs", "Age"],
        aligned_counts=[10000, 7500, 5000, 2500],
        batch_size=128,
        splitnn_test_count=500,
        reduce_rows=20000,
    )
    mimic_reduced = replace(
        mimic, dataset_id="mimic3_reduced", aligned_counts=[750, 500, 250, 100]
    )
    credit = DatasetSpec(
        dataset_id="uci_credit",
        base_active=["X3", "X5", "X7", "X9", "X11"],
        transfer_order=["X3", "X5", "X7"],
        aligned_counts=[10000, 7500, 5000, 2500],
        batch_size=128,
        splitnn_test_count=500,
        reduce_rows=20000,
    )
    return {s.dataset_id: s for s in (breast, mimic, mimic_reduced, credit)}


def load_registry(path=None) -> dict[str, DatasetSpec]:
    """Built-in dataset specs, optionally overlaid with a JSON file that
    maps dataset_id -> {csv, id_column, label_column, base_active,
    transfer_order, aligned_counts, batch_size, ...}.
    """
    reg = builtin_registry()
    if path is None:
        return reg
    raw = json.loads(Path(path).read_text())
    for did, entry in raw.items():
        base = reg.get(did)
        merged = {
            "dataset_id": did,
            "base_active": entry.get(
                "base_active", base.base_active if base else None
            ),
            "transfer_order": entry.get(
                "transfer_order", base.transfer_order if base else []
            ),
            "aligned_counts": entry.get(
                "aligned_counts", base.aligned_counts if base else None
            ),
            "batch_size": entry.get("batch_size", base.batch_size if base else 32),
            "splitnn_test_count": entry.get(
                "splitnn_test_count", base.splitnn_test_count if base else 0
            ),
            "csv": entry.get("csv", base.csv if base else None),
            "id_column": entry.get("id_column", base.id_column if base else "id"),
            "label_column": entry.get(
                "label_column", base.label_column if base else "label"
            ),
            "reduce_rows": entry.get("reduce_rows", base.reduce_rows if base else None),
            "reduce_seed": entry.get("reduce_seed", base.reduce_seed if base else 7),
            "loader": base.loader if base else None,
        }
        if merged["base_active"] is None or merged["aligned_counts"] is None:
            raise ConfigError(
                f"registry entry {did!r} needs base_active and aligned_counts"
            )
        reg[did] = DatasetSpec(**merged)
    return reg


def resolve_data_path(path) -> Path:
    """Relative CSV paths resolve against $VFLAB_DATA_DIR when it is set."""
    import os

    p = Path(path)
    base = os.environ.get("VFLAB_DATA_DIR")
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def load_dataset(spec: DatasetSpec) -> FeatureMatrix:
    if spec.loader is not None:
        fm = spec.loader()
    elif spec.csv:
        fm = load_csv(resolve_data_path(spec.csv), spec.id_column, spec.label_column)
    else:
        raise ConfigError(
            f"dataset {spec.dataset_id!r} has no csv path configured"
        )
    if spec.reduce_rows and spec.reduce_rows < fm.n_rows:
        rng = np.random.default_rng(spec.reduce_seed)
        keep = np.sort(rng.choice(fm.n_rows, size=spec.reduce_rows, replace=False))
        fm = fm.take(keep)
    return fm


def scenario_grid(
    dataset_id: str,
    registry: dict[str, DatasetSpec] | None = None,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
) -> list[ScenarioConfig]:
    """Cross-validated evaluation cells: every aligned-count level times
    every active-feature set (the base five, then three successively
    smaller sets), 16 per dataset.
    """
    registry = registry or builtin_registry()
    if dataset_id not in registry:
        raise ConfigError(f"unknown dataset {dataset_id!r}")
    spec = registry[dataset_id]
    cells = []
    for aligned in spec.aligned_counts:
        for feats in spec.active_feature_sets():
            cells.append(
                ScenarioConfig(
                    dataset_id=dataset_id,
                    active_features=feats,
                    aligned_count=aligned,
                    test_count=0,
                    batch_size=spec.batch_size,
                    seeds=seeds,
                    partition_seed=stable_seed(dataset_id, len(feats)),
                )
            )
    return cells


def splitnn_scenarios(
    dataset_id: str,
    registry: dict[str, DatasetSpec] | None = None,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
) -> list[ScenarioConfig]:
    """Held-out-test cells for the iterative baseline: one per aligned
    count, base feature set, with the dataset's test reservation.
    """
    registry = registry or builtin_registry()
    if dataset_id not in registry:
        raise ConfigError(f"unknown dataset {dataset_id!r}")
    spec = registry[dataset_id]
    return [
        ScenarioConfig(
            dataset_id=dataset_id,
            active_features=list(spec.base_active),
            aligned_count=aligned,
            test_count=spec.splitnn_test_count,
            batch_size=spec.batch_size,
            seeds=seeds,
            partition_seed=stable_seed(dataset_id, len(spec.base_active)),
        )
        for aligned in spec.aligned_counts
    ]


# ---------------------------------------------------------------------------
# Synthetic data for oracles


def synth_dataset(
    n: int,
    a_dim: int,
    p_dim: int,
    classes: int = 2,
    label_rule: str = "passive-only",
    seed: int = 0,
) -> FeatureMatrix:
    """Deterministic synthetic table with a_dim + p_dim features.

    Rules:
      active-only   label is a linear function of the active block.
      passive-only  label is carried linearly by the passive block; the
                    active block sees it only through a modular (XOR-like)
                    pair of latents, so a linear model on the active block
                    alone is near chance while the concatenation is easy.
      mixed         label is a linear function of both blocks together.

    Active feature names start with "a", passive with "p". The intended
    vertical split assigns the "a" columns to the label holder.
    """
    if n < 1:
        raise ConfigError(f"need at least one row, got n={n}")
    if a_dim < 1 or p_dim < 1:
        raise ConfigError("a_dim and p_dim must be >= 1")
    if classes < 2:
        raise ConfigError("need at least two classes")
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, a_dim))
    p = rng.normal(size=(n, p_dim))
    if label_rule == "active-only":
        w = rng.normal(size=a_dim)
        score = a @ w
        y = _quantile_classes(score, classes)
    elif label_rule == "mixed":
        wa = rng.normal(size=a_dim)
        wp = rng.normal(size=p_dim)
        score = a @ wa + p @ wp
        y = _quantile_classes(score, classes)
    elif label_rule == "passive-only":
        if a_dim < 2:
            raise ConfigError("passive-only rule needs a_dim >= 2")
        c1 = rng.integers(0, classes, size=n)
        c2 = rng.integers(0, classes, size=n)
        y = (c1 + c2) % classes
        a[:, 0] = (c1 - (classes - 1) / 2.0) + 0.1 * rng.normal(size=n)
        a[:, 1] = (c2 - (classes - 1) / 2.0) + 0.1 * rng.normal(size=n)
        p[:, 0] = (y - (classes - 1) / 2.0) + 0.1 * rng.normal(size=n)
    else:
        raise ConfigError(f"unknown label_rule {label_rule!r}")
    names = [f"a{i}" for i in range(a_dim)] + [f"p{i}" for i in range(p_dim)]
    ids = np.array([f"s{i:05d}" for i in range(n)])
    feats = np.concatenate([a, p], axis=1).astype(np.float32)
    return FeatureMatrix(ids, feats, names, y.astype(np.int64))


def _quantile_classes(score: np.ndarray, classes: int) -> np.ndarray:
    edges = np.quantile(score, [i / classes for i in range(1, classes)])
    return np.digitize(score, edges)
