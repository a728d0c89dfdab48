"""Scenario execution: the four methods, seed handling, reports.

Methods:
  local     10-fold CV of the linear probe on the label holder's raw
            (standardized) features.
  ablation  the final encoder trained on local data only (no latent
            matching), then CV on its representations.
  apcvfl    the full pipeline. On scenarios without a held-out test set
            this is the four-step flow ending in CV on the enhanced
            dataset. On scenarios with a test reservation it runs the
            fully-aligned variant used against the iterative baseline:
            everything is restricted to the shared rows and the probe is
            trained on the joint (teacher) representations directly --
            with every training row shared there is nothing to distill.
  splitnn   the iterative baseline over the wire protocol, with test
            metrics and round/byte accounting.

Each repeat seed drives every random choice of that repeat through
stable per-component derivations, so results are reproducible from the
manifest alone and independent of scheduling. The two federated methods
are written as separate per-party stages, which lets one process drive
both sides over an in-process or loopback-TCP transport and also lets
two processes split the roles across a network.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .classifier import (
    METRIC_KEYS,
    CvReport,
    LogisticRegressionProbe,
    MetricSet,
    compute_metrics,
    kfold_scores,
)
from .data import (
    DatasetSpec,
    FeatureMatrix,
    ScenarioConfig,
    VerticalSplit,
    load_dataset,
    load_registry,
    stable_seed,
    standardize,
    synth_dataset,
    vertical_split,
)
from .errors import AlignmentError, ConfigError, DataError
from .nn.layers import ACT_IDENTITY, ACT_SELU, build_mlp
from .protocol.footprint import (
    footprint_apcvfl,
    footprint_splitnn,
    footprint_vfedtrans,
)
from .protocol.session import (
    SplitnnActiveParty,
    SplitnnPassiveParty,
    exchange_active,
    exchange_passive,
    run_paired,
    splitnn_active,
    splitnn_passive,
)
from .protocol.transport import (
    CommLedger,
    LedgeredEndpoint,
    inprocess_pair,
    tcp_accept,
    tcp_connect,
    tcp_listen,
)
from .representation import (
    LOCAL_PASSIVE_LATENT,
    ROLE_JOINT,
    ROLE_LOCAL_ACTIVE,
    ROLE_LOCAL_PASSIVE,
    AlignedRepresentations,
    Autoencoder,
    build_enhanced_dataset,
    distill_final_encoder,
    encoder_widths,
    learn_joint_representation,
)

METHODS = ("local", "ablation", "apcvfl", "splitnn")
SCHEMA_VERSION = 1
CV_FOLDS = 10


def seed_for(root_seed: int, label: str) -> int:
    """Stable per-component seed derivation."""
    return stable_seed(root_seed, label)


def scenario_hash(scenario: ScenarioConfig) -> str:
    blob = json.dumps(scenario.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _endpoint_pair(transport: str) -> tuple[LedgeredEndpoint, LedgeredEndpoint]:
    if transport == "inproc":
        a, p = inprocess_pair()
    elif transport == "tcp":
        srv = tcp_listen()
        port = srv.getsockname()[1]
        p = tcp_connect("127.0.0.1", port)
        a = tcp_accept(srv)
        srv.close()
    else:
        raise ConfigError(f"unknown transport {transport!r}")
    return LedgeredEndpoint(a, "active"), LedgeredEndpoint(p, "passive")


def _std_party(fm: FeatureMatrix, train_mask: np.ndarray) -> FeatureMatrix:
    """Standardize a party's features with statistics from its training rows."""
    train = fm.take(np.flatnonzero(train_mask))
    _, (full,), _ = standardize(train, [fm])
    return full


@dataclass
class RepeatResult:
    fold_metrics: Optional[list[MetricSet]] = None
    test_metrics: Optional[MetricSet] = None
    ledger: Optional[CommLedger] = None
    epochs_run: Optional[int] = None
    n_transmit: Optional[int] = None
    final_encoder: Optional[Autoencoder] = None


def _probe_factory(seed: int) -> LogisticRegressionProbe:
    return LogisticRegressionProbe(seed=seed)


def _cv_on(fm: FeatureMatrix, seed: int, n_classes: int) -> list[MetricSet]:
    return kfold_scores(
        fm.features,
        fm.labels,
        CV_FOLDS,
        seed_for(seed, "cv-folds"),
        _probe_factory,
        n_classes=n_classes,
    )


def _fit_local_autoencoder(
    role: str, fm: FeatureMatrix, train_mask, val_mask, sc: ScenarioConfig, seed: int, label: str
) -> Autoencoder:
    ae = Autoencoder(
        encoder_widths(role, fm.n_cols),
        batch_size=sc.batch_size,
        seed=seed_for(seed, label),
    )
    ae.fit(
        fm.features[train_mask],
        fm.features[val_mask] if np.any(val_mask) else None,
    )
    return ae


# ---------------------------------------------------------------------------
# Baselines on the label holder's side only


def run_local_once(split: VerticalSplit, sc: ScenarioConfig, seed: int, n_classes: int) -> RepeatResult:
    not_test = ~split.test_mask
    act = _std_party(split.active, not_test & ~split.val_mask)
    table = act.take(np.flatnonzero(not_test))
    return RepeatResult(fold_metrics=_cv_on(table, seed, n_classes), ledger=CommLedger())


def run_ablation_once(split: VerticalSplit, sc: ScenarioConfig, seed: int, n_classes: int) -> RepeatResult:
    not_test = ~split.test_mask
    act = _std_party(split.active, not_test & ~split.val_mask)
    table = act.take(np.flatnonzero(not_test))
    val_ids = set(act.ids[split.val_mask & not_test].tolist())
    encoder = distill_final_encoder(
        table,
        None,
        lam=0.0,
        val_ids=val_ids,
        batch_size=sc.batch_size,
        seed=seed_for(seed, "final-encoder"),
    )
    enhanced = build_enhanced_dataset(encoder, table)
    return RepeatResult(
        fold_metrics=_cv_on(enhanced, seed, n_classes),
        ledger=CommLedger(),
        final_encoder=encoder,
    )


# ---------------------------------------------------------------------------
# Representation-sharing pipeline, per-party stages


def apcvfl_passive_fn(split: VerticalSplit, sc: ScenarioConfig, seed: int):
    """Feature-only side: fit the local autoencoder on the shared training
    rows, then serve latent vectors for whatever row sets are requested.
    """
    shash = scenario_hash(sc)
    fully_aligned = bool(sc.test_count)
    if fully_aligned:
        pool_mask, val_mask, train_mask = _aligned_pool_masks(split, sc)
        shared_mask = pool_mask
    else:
        not_test = ~split.test_mask
        train_mask = not_test & ~split.val_mask
        val_mask = split.aligned_mask & split.val_mask & not_test
        shared_mask = split.aligned_mask & not_test
        train_mask = split.aligned_mask & train_mask
    pas = _std_party(split.passive, _party_std_mask(split, sc))
    ae = Autoencoder(
        encoder_widths(ROLE_LOCAL_PASSIVE, pas.n_cols),
        batch_size=sc.batch_size,
        seed=seed_for(seed, "local-passive"),
    )
    ae.fit(
        pas.features[train_mask],
        pas.features[val_mask] if np.any(val_mask) else None,
    )
    row_of = {i: r for r, i in enumerate(pas.ids.tolist())}
    shared_ids = set(pas.ids[shared_mask].tolist())

    def encode_for(order):
        unknown = [i for i in order if i not in row_of][:20]
        if unknown:
            raise AlignmentError(f"rows not present on the feature-only side: {unknown}")
        rows = np.array([row_of[i] for i in order])
        return ae.transform(pas.features[rows])

    def passive_fn(ep):
        exchange_passive(ep, shared_ids, encode_for, shash)

    return passive_fn


def _party_std_mask(split: VerticalSplit, sc: ScenarioConfig) -> np.ndarray:
    """Rows whose statistics parties may use for standardization."""
    if sc.test_count:
        pool_mask, val_mask, train_mask = _aligned_pool_masks(split, sc)
        return train_mask
    return ~split.test_mask & ~split.val_mask


def _aligned_pool_masks(split: VerticalSplit, sc: ScenarioConfig):
    """Masks for the fully-aligned variant: the shared non-test pool, a
    validation draw inside it, and the remaining training rows."""
    pool_mask = split.aligned_mask & ~split.test_mask
    pool_idx = np.flatnonzero(pool_mask)
    rng = np.random.default_rng(
        np.random.SeedSequence([sc.partition_seed, 4])
    )
    n_val = int(round(sc.val_fraction * len(pool_idx)))
    val_mask = np.zeros(len(pool_mask), dtype=bool)
    if n_val:
        val_mask[rng.choice(pool_idx, size=n_val, replace=False)] = True
    return pool_mask, val_mask, pool_mask & ~val_mask


def apcvfl_active_fn(split: VerticalSplit, sc: ScenarioConfig, seed: int, n_classes: int):
    """Label holder's side of the pipeline; returns a callable driving the
    exchange over an endpoint and finishing the run locally.
    """
    if sc.test_count:
        return _apcvfl_fully_aligned_active_fn(split, sc, seed, n_classes)
    shash = scenario_hash(sc)
    not_test = ~split.test_mask
    train_mask = not_test & ~split.val_mask
    act = _std_party(split.active, train_mask)
    al_train = split.aligned_mask & train_mask
    al_val = split.aligned_mask & split.val_mask & not_test
    transmit_mask = split.aligned_mask & not_test

    def active_fn(ep) -> RepeatResult:
        ae_a = _fit_local_autoencoder(
            ROLE_LOCAL_ACTIVE, act, al_train, al_val, sc, seed, "local-active"
        )
        transmit_ids = act.ids[transmit_mask]
        reps_p, _ = exchange_active(
            ep, transmit_ids.tolist(), LOCAL_PASSIVE_LATENT, shash
        )
        reps_a = AlignedRepresentations(
            transmit_ids.copy(), ae_a.transform(act.features[transmit_mask])
        )
        _, joint = learn_joint_representation(
            reps_a,
            reps_p,
            val_ids=set(act.ids[al_val].tolist()),
            batch_size=sc.batch_size,
            seed=seed_for(seed, "joint-encoder"),
        )
        table = act.take(np.flatnonzero(not_test))
        encoder = distill_final_encoder(
            table,
            joint,
            lam=sc.lam,
            distill_loss=sc.distill_loss,
            val_ids=set(act.ids[split.val_mask & not_test].tolist()),
            batch_size=sc.batch_size,
            seed=seed_for(seed, "final-encoder"),
        )
        enhanced = build_enhanced_dataset(encoder, table)
        return RepeatResult(
            fold_metrics=_cv_on(enhanced, seed, n_classes),
            n_transmit=int(transmit_mask.sum()),
            final_encoder=encoder,
        )

    return active_fn


def _apcvfl_fully_aligned_active_fn(split: VerticalSplit, sc: ScenarioConfig, seed: int, n_classes: int):
    shash = scenario_hash(sc)
    pool_mask, val_mask, train_mask = _aligned_pool_masks(split, sc)
    act = _std_party(split.active, train_mask)
    test_idx = np.flatnonzero(split.test_mask)

    def active_fn(ep) -> RepeatResult:
        ae_a = _fit_local_autoencoder(
            ROLE_LOCAL_ACTIVE, act, train_mask, val_mask, sc, seed, "local-active"
        )
        transmit_ids = act.ids[pool_mask]
        test_ids = act.ids[test_idx]
        reps_p, z_p_test = exchange_active(
            ep,
            transmit_ids.tolist(),
            LOCAL_PASSIVE_LATENT,
            shash,
            inference_ids=test_ids.tolist(),
        )
        reps_a = AlignedRepresentations(
            transmit_ids.copy(), ae_a.transform(act.features[pool_mask])
        )
        teacher, joint = learn_joint_representation(
            reps_a,
            reps_p,
            val_ids=set(act.ids[val_mask].tolist()),
            batch_size=sc.batch_size,
            seed=seed_for(seed, "joint-encoder"),
        )
        id_row = {i: r for r, i in enumerate(joint.ids.tolist())}
        train_rows = np.array([id_row[i] for i in act.ids[train_mask].tolist()])
        probe = LogisticRegressionProbe(seed=seed_for(seed, "probe"))
        if val_mask.any():
            val_rows = np.array([id_row[i] for i in act.ids[val_mask].tolist()])
            probe.fit(
                joint.z[train_rows],
                act.labels[train_mask],
                joint.z[val_rows],
                act.labels[val_mask],
            )
        else:
            probe.fit(joint.z[train_rows], act.labels[train_mask])
        z_a_test = ae_a.transform(act.features[test_idx])
        z_test = teacher.transform(np.concatenate([z_a_test, z_p_test], axis=1))
        metrics = compute_metrics(
            act.labels[test_idx], probe.predict(z_test), n_classes
        )
        return RepeatResult(
            test_metrics=metrics, n_transmit=int(pool_mask.sum())
        )

    return active_fn


def run_apcvfl_once(
    split: VerticalSplit,
    sc: ScenarioConfig,
    seed: int,
    n_classes: int,
    transport: str = "inproc",
) -> RepeatResult:
    a_ep, p_ep = _endpoint_pair(transport)
    result, ledger = run_paired(
        apcvfl_active_fn(split, sc, seed, n_classes),
        apcvfl_passive_fn(split, sc, seed),
        a_ep,
        p_ep,
    )
    result.ledger = ledger
    return result


# ---------------------------------------------------------------------------
# Iterative baseline


def splitnn_parties(split: VerticalSplit, sc: ScenarioConfig, seed: int, n_classes: int):
    if not sc.test_count:
        raise ConfigError(
            "the iterative baseline needs a held-out test set (test_count > 0)"
        )
    train_mask = split.aligned_mask & ~split.test_mask
    act = _std_party(split.active, train_mask)
    pas = _std_party(split.passive, train_mask)
    train_idx = np.flatnonzero(train_mask)
    test_idx = np.flatnonzero(split.test_mask)
    extractor_a = build_mlp(
        encoder_widths(ROLE_LOCAL_ACTIVE, act.n_cols),
        seed=seed_for(seed, "sn-active-extractor"),
    )
    extractor_p = build_mlp(
        encoder_widths(ROLE_LOCAL_PASSIVE, pas.n_cols),
        seed=seed_for(seed, "sn-passive-extractor"),
    )
    head_widths = encoder_widths(ROLE_JOINT) + [n_classes]
    head = build_mlp(
        head_widths,
        [ACT_SELU] * (len(head_widths) - 2) + [ACT_IDENTITY],
        seed=seed_for(seed, "sn-head"),
    )
    active = SplitnnActiveParty(
        ids_train=act.ids[train_idx].tolist(),
        x_train=act.features[train_idx],
        y_train=act.labels[train_idx],
        ids_test=act.ids[test_idx].tolist(),
        x_test=act.features[test_idx],
        y_test=act.labels[test_idx],
        extractor=extractor_a,
        head=head,
        n_classes=n_classes,
        batch_size=sc.batch_size,
        passive_latent_dim=extractor_p.output_dim,
        seed=seed_for(seed, "sn-shuffle"),
    )
    passive = SplitnnPassiveParty(
        ids=pas.ids.tolist(), x=pas.features, extractor=extractor_p
    )
    return active, passive


def run_splitnn_once(
    split: VerticalSplit,
    sc: ScenarioConfig,
    seed: int,
    n_classes: int,
    transport: str = "inproc",
) -> RepeatResult:
    shash = scenario_hash(sc)
    active, passive = splitnn_parties(split, sc, seed, n_classes)
    a_ep, p_ep = _endpoint_pair(transport)
    result, ledger = run_paired(
        lambda ep: splitnn_active(ep, active, shash),
        lambda ep: splitnn_passive(ep, passive, shash),
        a_ep,
        p_ep,
    )
    metrics = compute_metrics(result.y_true, result.y_pred, n_classes)
    return RepeatResult(
        test_metrics=metrics,
        ledger=ledger,
        epochs_run=result.epochs_run,
        n_transmit=len(active.ids_train),
    )


def run_repeat(
    method: str,
    split: VerticalSplit,
    sc: ScenarioConfig,
    seed: int,
    n_classes: int,
    transport: str = "inproc",
) -> RepeatResult:
    if method == "local":
        return run_local_once(split, sc, seed, n_classes)
    if method == "ablation":
        return run_ablation_once(split, sc, seed, n_classes)
    if method == "apcvfl":
        return run_apcvfl_once(split, sc, seed, n_classes, transport)
    if method == "splitnn":
        return run_splitnn_once(split, sc, seed, n_classes, transport)
    raise ConfigError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Reports


def _utcnow() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def build_report(
    method: str,
    sc: ScenarioConfig,
    dataset_descriptor: dict,
    repeats: list[RepeatResult],
    transport: str,
) -> dict:
    manifest = {
        "method": method,
        "scenario": sc.to_dict(),
        "dataset": dataset_descriptor,
        "package_version": __version__,
        "created_utc": _utcnow(),
        "transport": transport,
        "seeds": list(sc.seeds),
    }
    results: dict = {}
    if repeats[0].fold_metrics is not None:
        cv = CvReport.from_runs([r.fold_metrics for r in repeats])
        results["cv"] = cv.to_dict()
    else:
        per_seed = [r.test_metrics.to_dict() for r in repeats]
        results["test"] = {
            "per_seed": per_seed,
            "mean": {k: float(np.mean([m[k] for m in per_seed])) for k in METRIC_KEYS},
            "std": {k: float(np.std([m[k] for m in per_seed])) for k in METRIC_KEYS},
            "epochs_run": [r.epochs_run for r in repeats],
        }
    ledgers = [r.ledger.to_dict() if r.ledger else None for r in repeats]

    n_transmit = repeats[0].n_transmit
    footprints: dict = {"apcvfl": None, "splitnn_per_seed": None, "vfedtrans": None}
    if n_transmit:
        x_t = sc.n_active
        x_d = dataset_descriptor.get("n_features", x_t) - x_t
        footprints["apcvfl"] = footprint_apcvfl(n_transmit, 256)
        if x_d > 0:
            footprints["vfedtrans"] = footprint_vfedtrans(n_transmit, x_t, x_d)
        if method == "splitnn":
            footprints["splitnn_per_seed"] = [
                footprint_splitnn(r.epochs_run, n_transmit, 256, sc.batch_size)
                for r in repeats
            ]
    return {
        "schema_version": SCHEMA_VERSION,
        "manifest": manifest,
        "results": results,
        "ledgers": ledgers,
        "footprints": footprints,
    }


def report_digest(report: dict) -> str:
    """Hash of the deterministic content (volatile fields excluded)."""
    trimmed = json.loads(json.dumps(report))
    trimmed["manifest"].pop("created_utc", None)
    trimmed["manifest"].pop("transport", None)
    blob = json.dumps(trimmed, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_report(path, report: dict) -> None:
    """Atomic write: the file appears only if serialization succeeded."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


# ---------------------------------------------------------------------------
# Scenario drivers


def resolve_dataset(
    descriptor: dict, registry: dict[str, DatasetSpec] | None = None
) -> FeatureMatrix:
    source = descriptor.get("source", "registry")
    if source == "registry":
        registry = registry or load_registry()
        did = descriptor["dataset_id"]
        if did not in registry:
            raise ConfigError(f"unknown dataset {did!r}")
        return load_dataset(registry[did])
    if source == "synth":
        return synth_dataset(
            n=descriptor["n"],
            a_dim=descriptor["a_dim"],
            p_dim=descriptor["p_dim"],
            classes=descriptor.get("classes", 2),
            label_rule=descriptor.get("label_rule", "passive-only"),
            seed=descriptor.get("seed", 0),
        )
    raise ConfigError(f"unknown dataset source {source!r}")


def run_scenario_detailed(
    method: str,
    sc: ScenarioConfig,
    data: FeatureMatrix | None = None,
    *,
    dataset_descriptor: dict | None = None,
    registry: dict[str, DatasetSpec] | None = None,
    transport: str = "inproc",
) -> tuple[dict, list[RepeatResult]]:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    if dataset_descriptor is None:
        dataset_descriptor = {"source": "registry", "dataset_id": sc.dataset_id}
    if data is None:
        data = resolve_dataset(dataset_descriptor, registry)
    dataset_descriptor = dict(dataset_descriptor)
    dataset_descriptor["n_features"] = data.n_cols
    if data.labels is None:
        raise DataError("scenario data must carry labels")
    n_classes = int(data.labels.max()) + 1
    split = vertical_split(data, sc)
    repeats = [run_repeat(method, split, sc, s, n_classes, transport) for s in sc.seeds]
    return build_report(method, sc, dataset_descriptor, repeats, transport), repeats


def run_scenario(
    method: str,
    sc: ScenarioConfig,
    data: FeatureMatrix | None = None,
    *,
    dataset_descriptor: dict | None = None,
    registry: dict[str, DatasetSpec] | None = None,
    transport: str = "inproc",
) -> dict:
    """Run one method over every repeat seed and assemble the report."""
    report, _ = run_scenario_detailed(
        method,
        sc,
        data,
        dataset_descriptor=dataset_descriptor,
        registry=registry,
        transport=transport,
    )
    return report


def run_from_manifest(
    manifest: dict, registry: dict[str, DatasetSpec] | None = None
) -> dict:
    """Re-execute a run from its manifest (reports are self-describing)."""
    sc = ScenarioConfig.from_dict(manifest["scenario"])
    return run_scenario(
        manifest["method"],
        sc,
        dataset_descriptor=manifest["dataset"],
        registry=registry,
        transport="inproc",
    )


def run_distributed_role(
    method: str,
    sc: ScenarioConfig,
    data: FeatureMatrix,
    role: str,
    raw_endpoint,
    *,
    dataset_descriptor: dict | None = None,
) -> Optional[dict]:
    """One side of a two-process run over an established connection.

    Both processes load the same table and derive identical partitions
    from the scenario. Repeats run back to back over the single
    connection; the label holder assembles and returns the report.
    """
    if method not in ("apcvfl", "splitnn"):
        raise ConfigError(f"method {method!r} has no distributed mode")
    if role not in ("active", "passive"):
        raise ConfigError(f"unknown role {role!r}")
    if dataset_descriptor is None:
        dataset_descriptor = {"source": "registry", "dataset_id": sc.dataset_id}
    dataset_descriptor = dict(dataset_descriptor)
    dataset_descriptor["n_features"] = data.n_cols
    n_classes = int(data.labels.max()) + 1
    split = vertical_split(data, sc)
    shash = scenario_hash(sc)
    repeats = []
    for seed in sc.seeds:
        ep = LedgeredEndpoint(raw_endpoint, role)
        if role == "passive":
            if method == "apcvfl":
                apcvfl_passive_fn(split, sc, seed)(ep)
            else:
                _, passive = splitnn_parties(split, sc, seed, n_classes)
                splitnn_passive(ep, passive, shash)
            continue
        if method == "apcvfl":
            result = apcvfl_active_fn(split, sc, seed, n_classes)(ep)
        else:
            active, _ = splitnn_parties(split, sc, seed, n_classes)
            sn = splitnn_active(ep, active, shash)
            result = RepeatResult(
                test_metrics=compute_metrics(sn.y_true, sn.y_pred, n_classes),
                epochs_run=sn.epochs_run,
                n_transmit=len(active.ids_train),
            )
        result.ledger = ep.ledger
        repeats.append(result)
    if role == "passive":
        return None
    return build_report(method, sc, dataset_descriptor, repeats, "tcp")


# ---------------------------------------------------------------------------
# Grid runner


GRID_CSV_COLUMNS = (
    "dataset",
    "aligned",
    "a",
    "method",
    "metric",
    "mean_of_means",
    "std",
    "rounds",
    "bytes",
)


def grid_rows(report: dict) -> list[dict]:
    """Flatten one report into union-schema CSV rows (one per metric)."""
    man = report["manifest"]
    sc = man["scenario"]
    ledgers = [led for led in report["ledgers"] if led]
    rounds = float(np.mean([led["rounds"] for led in ledgers])) if ledgers else 0.0
    byts = (
        float(np.mean([sum(led["data_bytes"].values()) for led in ledgers]))
        if ledgers
        else 0.0
    )
    if "cv" in report["results"]:
        mom = report["results"]["cv"]["mean_of_means"]
        std = report["results"]["cv"]["std"]
    else:
        mom = report["results"]["test"]["mean"]
        std = report["results"]["test"]["std"]
    rows = []
    for key in METRIC_KEYS:
        rows.append(
            {
                "dataset": sc["dataset_id"],
                "aligned": sc["aligned_count"],
                "a": len(sc["active_features"]),
                "method": man["method"],
                "metric": key,
                "mean_of_means": mom[key],
                "std": std[key],
                "rounds": rounds,
                "bytes": byts,
            }
        )
    return rows


def write_grid_csv(path, rows: list[dict]) -> None:
    import csv as _csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        w = _csv.DictWriter(fh, fieldnames=GRID_CSV_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow(row)
    os.replace(tmp, path)


def run_grid(
    dataset_id: str,
    methods: list[str],
    *,
    registry: dict[str, DatasetSpec] | None = None,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    out_dir=None,
    transport: str = "inproc",
    progress=None,
) -> tuple[list[dict], list[dict], list[tuple[str, str, Exception]]]:
    """Run every grid cell for the CV methods and every alignment level
    for the iterative baseline. Returns (csv rows, reports, failures);
    per-cell failures are recorded and the grid continues.

    Cells whose result cannot depend on the aligned count (local and
    ablation never touch the shared set) are computed once per feature
    partition and reused.
    """
    from .data import scenario_grid, splitnn_scenarios

    registry = registry or load_registry()
    if dataset_id not in registry:
        raise ConfigError(f"unknown dataset {dataset_id!r}")
    data = load_dataset(registry[dataset_id])
    rows: list[dict] = []
    reports: list[dict] = []
    failures: list[tuple[str, str, Exception]] = []
    cache: dict = {}
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}")
        cells = (
            splitnn_scenarios(dataset_id, registry, seeds)
            if method == "splitnn"
            else scenario_grid(dataset_id, registry, seeds)
        )
        for sc in cells:
            label = f"{method}/aligned={sc.aligned_count}/a={sc.n_active}"
            key = None
            if method in ("local", "ablation"):
                key = (method, tuple(sc.active_features), sc.seeds)
            try:
                if key is not None and key in cache:
                    report = json.loads(json.dumps(cache[key]))
                    report["manifest"]["scenario"] = sc.to_dict()
                else:
                    report = run_scenario(
                        method, sc, data, registry=registry, transport=transport
                    )
                    if key is not None:
                        cache[key] = report
            except Exception as e:  # record and continue with the grid
                failures.append((method, label, e))
                continue
            reports.append(report)
            rows.extend(grid_rows(report))
            if progress:
                progress(label)
            if out_dir:
                name = f"{dataset_id}_{method}_al{sc.aligned_count}_a{sc.n_active}.json"
                write_report(Path(out_dir) / name, report)
    if out_dir:
        write_grid_csv(Path(out_dir) / f"{dataset_id}_grid.csv", rows)
    return rows, reports, failures
