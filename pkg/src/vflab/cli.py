"""Command-line entry point.

Subcommands:
  run        execute one method on a scenario file, write report JSON + CSV
  grid       run every cell of a dataset's scenario grid
  footprint  analytic communication-cost calculator
  probe      train an encoder while tracking probe quality per epoch
  make-data  materialize a bundled dataset as CSV

Everything is batch: reports land in --out as JSON/CSV for external
plotting.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import (
    METRIC_KEYS,
    LogisticRegressionProbe,
    raw_baseline_metrics,
    representation_quality_trace,
    similarity_decision,
)
from .data import (
    ScenarioConfig,
    load_dataset,
    load_registry,
    vertical_split,
    write_csv,
)
from .errors import VflabError
from .experiments import (
    grid_rows,
    run_grid,
    write_grid_csv,
    write_report,
)
from .nn.serialize import save_networks
from .protocol.footprint import (
    footprint_apcvfl,
    footprint_splitnn,
    footprint_vfedtrans,
    format_bytes,
)
from .representation import (
    ROLE_FINAL,
    ROLE_JOINT,
    ROLE_LOCAL_ACTIVE,
    ROLE_LOCAL_PASSIVE,
    Autoencoder,
    encoder_widths,
)

ENCODER_ROLES = (ROLE_LOCAL_ACTIVE, ROLE_LOCAL_PASSIVE, ROLE_JOINT, ROLE_FINAL)


def _load_scenario(path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(json.loads(Path(path).read_text()))


def _add_run(sub):
    p = sub.add_parser("run", help="run one method on one scenario")
    p.add_argument("method", choices=["local", "ablation", "apcvfl", "splitnn"])
    p.add_argument("--scenario", required=True, help="scenario config JSON")
    p.add_argument("--registry", default=None, help="dataset registry JSON")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seeds", type=int, nargs="*", default=None)
    p.add_argument("--transport", choices=["inproc", "tcp"], default="inproc")
    p.add_argument(
        "--role",
        choices=["active", "passive"],
        default=None,
        help="two-process TCP mode: which party this process plays",
    )
    p.add_argument("--listen", default=None, metavar="HOST:PORT")
    p.add_argument("--connect", default=None, metavar="HOST:PORT")
    p.add_argument("--save-models", default=None, help="directory for model files")
    p.set_defaults(func=cmd_run)


def _host_port(spec: str) -> tuple[str, int]:
    host, _, port = spec.rpartition(":")
    return host or "127.0.0.1", int(port)


def _run_distributed(args, sc, registry) -> int:
    from .experiments import run_distributed_role
    from .protocol.transport import tcp_accept, tcp_connect, tcp_listen

    data = load_dataset(registry[sc.dataset_id])
    if args.listen:
        host, port = _host_port(args.listen)
        srv = tcp_listen(host, port)
        print(f"listening on {srv.getsockname()[0]}:{srv.getsockname()[1]}", file=sys.stderr)
        raw = tcp_accept(srv)
        srv.close()
    elif args.connect:
        host, port = _host_port(args.connect)
        raw = tcp_connect(host, port)
    else:
        print("TCP role mode needs --listen or --connect", file=sys.stderr)
        return 2
    report = run_distributed_role(args.method, sc, data, args.role, raw)
    raw.close()
    if args.role == "passive":
        return 0
    out = Path(args.out or ".")
    stem = f"{sc.dataset_id}_{args.method}_al{sc.aligned_count}_a{sc.n_active}"
    write_report(out / f"{stem}.json", report)
    write_grid_csv(out / f"{stem}.csv", grid_rows(report))
    print(f"report written to {out / (stem + '.json')}")
    return 0


def cmd_run(args) -> int:
    sc = _load_scenario(args.scenario)
    if args.seeds:
        sc.seeds = tuple(args.seeds)
    registry = load_registry(args.registry)
    if args.role:
        return _run_distributed(args, sc, registry)
    from .experiments import run_scenario_detailed

    report, repeats = run_scenario_detailed(
        args.method, sc, registry=registry, transport=args.transport
    )
    if args.save_models and repeats[0].final_encoder is not None:
        out = Path(args.save_models)
        out.mkdir(parents=True, exist_ok=True)
        ae = repeats[0].final_encoder
        save_networks(
            out / f"{sc.dataset_id}_{args.method}_final.vflm",
            [ae.encoder_, ae.decoder_],
        )
    if args.out:
        out = Path(args.out)
        stem = f"{sc.dataset_id}_{args.method}_al{sc.aligned_count}_a{sc.n_active}"
        write_report(out / f"{stem}.json", report)
        write_grid_csv(out / f"{stem}.csv", grid_rows(report))
        print(f"report written to {out / (stem + '.json')}")
    else:
        json.dump(report, sys.stdout, indent=2)
        print()
    return 0


def _add_grid(sub):
    p = sub.add_parser("grid", help="run a dataset's full scenario grid")
    p.add_argument("dataset_id")
    p.add_argument(
        "--methods",
        nargs="+",
        default=["local", "ablation", "apcvfl"],
        choices=["local", "ablation", "apcvfl", "splitnn"],
    )
    p.add_argument("--registry", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, nargs="*", default=None)
    p.add_argument("--transport", choices=["inproc", "tcp"], default="inproc")
    p.set_defaults(func=cmd_grid)


def cmd_grid(args) -> int:
    registry = load_registry(args.registry)
    seeds = tuple(args.seeds) if args.seeds else (0, 1, 2, 3, 4)
    rows, _, failures = run_grid(
        args.dataset_id,
        args.methods,
        registry=registry,
        seeds=seeds,
        out_dir=args.out,
        transport=args.transport,
        progress=lambda label: print(f"done: {label}", file=sys.stderr),
    )
    print(f"{len(rows)} rows -> {Path(args.out) / (args.dataset_id + '_grid.csv')}")
    for method, label, err in failures:
        print(f"FAILED {label}: {err}", file=sys.stderr)
    return 1 if failures else 0


def _add_footprint(sub):
    p = sub.add_parser("footprint", help="communication cost calculator")
    p.add_argument("method", choices=["apcvfl", "splitnn", "vfedtrans"])
    p.add_argument("--d-a", type=int, required=True, help="transmitted sample count")
    p.add_argument("--z-p", type=int, default=256, help="latent width on the wire")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--x-t", type=int, default=None, help="label holder's feature count")
    p.add_argument("--x-d", type=int, default=None, help="other party's feature count")
    p.set_defaults(func=cmd_footprint)


def cmd_footprint(args) -> int:
    if args.method == "apcvfl":
        n = footprint_apcvfl(args.d_a, args.z_p)
    elif args.method == "splitnn":
        if args.epochs is None:
            print("splitnn needs --epochs", file=sys.stderr)
            return 2
        n = footprint_splitnn(args.epochs, args.d_a, args.z_p, args.batch)
    else:
        if args.x_t is None or args.x_d is None:
            print("vfedtrans needs --x-t and --x-d", file=sys.stderr)
            return 2
        n = footprint_vfedtrans(args.d_a, args.x_t, args.x_d)
    print(format_bytes(n))
    return 0


def _add_probe(sub):
    p = sub.add_parser(
        "probe", help="train an encoder, tracking probe quality per epoch"
    )
    p.add_argument("--scenario", required=True)
    p.add_argument("--registry", default=None)
    p.add_argument("--encoder", choices=ENCODER_ROLES, default=ROLE_FINAL)
    p.add_argument("--metric", choices=METRIC_KEYS, default="accuracy")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--r", type=float, required=True, help="similarity threshold")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the per-epoch CSV here")
    p.set_defaults(func=cmd_probe)


def cmd_probe(args) -> int:
    sc = _load_scenario(args.scenario)
    registry = load_registry(args.registry)
    data = load_dataset(registry[sc.dataset_id])
    split = vertical_split(data, sc)
    x, y = _probe_inputs(args.encoder, split, sc, args.seed)
    ae = Autoencoder(
        encoder_widths(args.encoder, x.shape[1])
        if args.encoder != ROLE_JOINT
        else encoder_widths(ROLE_JOINT),
        batch_size=sc.batch_size,
        seed=args.seed,
    )
    factory = lambda s: LogisticRegressionProbe(seed=s)
    trace = representation_quality_trace(
        ae,
        x,
        y,
        factory,
        args.k,
        args.metric,
        args.epochs,
        batch_size=sc.batch_size,
        seed=args.seed,
    )
    baseline = raw_baseline_metrics(x, y, factory, args.k, args.metric, seed=args.seed)
    verdict = similarity_decision(baseline, trace.final_metrics(), args.r)
    lines = ["epoch,train_loss," + ",".join(f"fold{i}" for i in range(args.k))]
    for e, entry in enumerate(trace.epochs, start=1):
        lines.append(
            f"{e},{entry['train_loss']!r},"
            + ",".join(repr(v) for v in entry["metrics"])
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"similar={'true' if verdict else 'false'} (r={args.r})")
    return 0


def _probe_inputs(role, split, sc, seed):
    """Feature matrix and labels for the probed encoder role."""
    from .data import standardize

    not_test = ~split.test_mask
    train_mask = not_test & ~split.val_mask
    if role in (ROLE_LOCAL_ACTIVE, ROLE_FINAL):
        side = split.active
    elif role == ROLE_LOCAL_PASSIVE:
        side = split.passive
    else:
        side = None
    if side is not None:
        tr = side.take(np.flatnonzero(train_mask))
        _, (full,), _ = standardize(tr, [side])
        x = full.features[not_test]
        labels = split.active.labels[not_test]
        return x, labels
    # joint role: build the concatenated local latents of the shared rows
    from .representation import (
        AlignedRepresentations,
        Autoencoder as _AE,
    )

    al_train = split.aligned_mask & train_mask
    al_val = split.aligned_mask & split.val_mask & not_test
    act_tr = split.active.take(np.flatnonzero(train_mask))
    _, (act,), _ = standardize(act_tr, [split.active])
    pas_tr = split.passive.take(np.flatnonzero(train_mask))
    _, (pas,), _ = standardize(pas_tr, [split.passive])
    ae_a = _AE(
        encoder_widths(ROLE_LOCAL_ACTIVE, act.n_cols), batch_size=sc.batch_size, seed=seed
    )
    ae_a.fit(act.features[al_train], act.features[al_val] if al_val.any() else None)
    ae_p = _AE(
        encoder_widths(ROLE_LOCAL_PASSIVE, pas.n_cols), batch_size=sc.batch_size, seed=seed + 1
    )
    ae_p.fit(pas.features[al_train], pas.features[al_val] if al_val.any() else None)
    keep = split.aligned_mask & not_test
    x = np.concatenate(
        [ae_a.transform(act.features[keep]), ae_p.transform(pas.features[keep])], axis=1
    )
    return x, split.active.labels[keep]


def _add_make_data(sub):
    p = sub.add_parser("make-data", help="write a bundled dataset as CSV")
    p.add_argument("dataset_id", choices=["breast_cancer"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_data)


def cmd_make_data(args) -> int:
    registry = load_registry()
    fm = load_dataset(registry[args.dataset_id])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_csv(args.out, fm)
    print(f"{fm.n_rows} rows, {fm.n_cols} features -> {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vflab", description="vertical federated learning lab"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_grid(sub)
    _add_footprint(sub)
    _add_probe(sub)
    _add_make_data(sub)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VflabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
