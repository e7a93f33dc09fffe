"""Command-line surface: train, certify, plot, probe.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags,
unreadable config, missing input paths).  The environment variable
PBCERT_OUTPUT_ROOT, when set, is prepended to relative output paths.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from pbcert import certify as cert
from pbcert.config import ConfigError, RunConfig, load_config
from pbcert.curvature import (
    CurvatureEstimate,
    all_block_hessians,
    diag_fisher,
    landscape_probe,
)
from pbcert.data import collapse_classes, load_cifar_bin, load_idx, synthetic_blobs
from pbcert.manifest import (
    load_dataset,
    load_train_record,
    save_dataset,
    save_train_record,
)
from pbcert.nnet import NetSpec, TrainerConfig, train
from pbcert.plotting import risk_complexity_svg
from pbcert.rng import child_seed


class UsageError(Exception):
    pass


def _resolve_out(path) -> Path:
    path = Path(path)
    root = os.environ.get("PBCERT_OUTPUT_ROOT")
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _build_datasets(config: RunConfig):
    get = config.get
    source = get("data", "source")
    seed = get("run", "seed")
    if source == "blobs":
        train_ds = synthetic_blobs(get("data", "n"), get("data", "d"),
                                   get("data", "k"), get("data", "separation"),
                                   child_seed(seed, "data"), split="train")
        test_ds = synthetic_blobs(get("data", "test_n"), get("data", "d"),
                                  get("data", "k"), get("data", "separation"),
                                  child_seed(seed, "data"), split="test")
    elif source == "idx":
        for key in ("images", "labels", "test_images", "test_labels"):
            path = get("data", key)
            if not path or not Path(path).exists():
                raise UsageError(f"dataset path missing or unreadable: "
                                 f"data.{key}={path!r}")
        train_ds = load_idx(get("data", "images"), get("data", "labels"), "train")
        test_ds = load_idx(get("data", "test_images"), get("data", "test_labels"),
                           "test")
    elif source == "cifar":
        batches = get("data", "batches").split(":")
        test_batches = get("data", "test_batches").split(":")
        for path in batches + test_batches:
            if not path or not Path(path).exists():
                raise UsageError(f"dataset path missing or unreadable: {path!r}")
        train_ds = load_cifar_bin(batches, split="train")
        test_ds = load_cifar_bin(test_batches, split="test")
    else:
        raise ConfigError(f"unknown data source {source!r}")
    collapse = get("data", "collapse")
    if collapse:
        train_ds = collapse_classes(train_ds, collapse)
        test_ds = collapse_classes(test_ds, collapse)
    return train_ds, test_ds


def _net_spec(config: RunConfig, train_ds) -> NetSpec:
    hidden = config.get("net", "hidden")
    return NetSpec((train_ds.d, *hidden, train_ds.k))


def cmd_train(config: RunConfig, out_dir) -> Path:
    train_ds, test_ds = _build_datasets(config)
    spec = _net_spec(config, train_ds)
    tc = TrainerConfig(
        optimizer=config.get("train", "optimizer"),
        lr=config.get("train", "lr"),
        momentum=config.get("train", "momentum"),
        decay=config.get("train", "decay"),
        epochs=config.get("train", "epochs"),
        batch_size=config.get("train", "batch_size"),
        loss=config.get("train", "loss"),
        init_gain=config.get("train", "init_gain"),
    )
    record = train(spec, train_ds, tc, config.get("run", "seed"),
                   test_data=test_ds)
    out_dir = _resolve_out(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(out_dir / "train_data.bin", train_ds)
    save_dataset(out_dir / "test_data.bin", test_ds)
    save_train_record(out_dir, record, extra={
        "k": train_ds.k,
        "collapse": config.get("data", "collapse"),
        "data_source": config.get("data", "source"),
    })
    print(f"trained: {out_dir} "
          f"train_error={record.final_train_error:.4f} "
          f"test_error={record.final_test_error:.4f}")
    return out_dir


def _load_run(run_dir):
    run_dir = Path(run_dir)
    if not (run_dir / "meta.json").exists():
        raise UsageError(f"run manifest not found: {run_dir / 'meta.json'}")
    record = load_train_record(run_dir)
    import json
    with open(run_dir / "meta.json") as f:
        k = json.load(f)["k"]
    train_ds = load_dataset(run_dir / "train_data.bin", k, "train")
    test_ds = load_dataset(run_dir / "test_data.bin", k, "test")
    return record, train_ds, test_ds


def _curvature_for(families, record, train_ds, run_dir, seed):
    """Fisher / block Hessians computed on demand and cached on disk."""
    fisher = blocks = None
    if {"closed-diag", "closed-joint"} & set(families):
        cache = Path(run_dir) / "fisher_cache.npy"
        if cache.exists():
            fisher = CurvatureEstimate(spec=record.spec, n_used=train_ds.n,
                                       seed=child_seed(seed, "fisher"),
                                       diag_fisher=np.load(cache))
        else:
            fisher = diag_fisher(record.spec, record.theta_star, train_ds.X,
                                 child_seed(seed, "fisher"))
            np.save(cache, fisher.diag_fisher)
    if "skfac-block" in families:
        blocks = all_block_hessians(record.spec, record.theta_star, train_ds.X)
    return fisher, blocks


def cmd_certify(config: RunConfig, run_dir) -> None:
    record, train_ds, test_ds = _load_run(_resolve_out(run_dir))
    families = config.get("posterior", "families")
    seed = config.get("run", "seed")
    fisher, blocks = _curvature_for(families, record, train_ds,
                                    _resolve_out(run_dir), seed)
    ctx = cert.GridContext(
        spec=record.spec, theta_star=record.theta_star, theta0=record.theta0,
        data=train_ds, m=config.get("bound", "m"),
        delta=config.get("bound", "delta"),
        delta_prime=config.get("bound", "delta_prime"),
        b=config.get("bound", "b"), c=config.get("bound", "c"),
        seed=seed, fisher=fisher, blocks=blocks,
        vi_epochs=config.get("posterior", "vi_epochs"),
        vi_batch_size=config.get("posterior", "vi_batch_size"),
        vi_lr=config.get("posterior", "vi_lr"),
    )
    all_certs = []
    fronts = {}
    for family in families:
        result = cert.grid_search(family, config.beta_grid, config.lambda_grid,
                                  ctx)
        for beta, lam, message in result.failures:
            print(f"cell failure [{family} beta={beta} lambda={lam}]: {message}",
                  file=sys.stderr)
        all_certs.extend(result.certificates)
        fronts[family] = cert.pareto_front(
            cert.certificates_to_points(result.certificates))
    star = cert.reference_star(record, train_ds, test_ds)
    fronts["reference"] = [star]
    out_dir = _resolve_out(run_dir)
    cert.write_certificates_csv(out_dir / "certificates.csv", all_certs)
    cert.write_pareto_csv(out_dir / "pareto.csv", fronts)
    n_nonvac = sum(1 for c in all_certs if c.bound_value < 1.0)
    print(f"certified: {len(all_certs)} cells, {n_nonvac} non-vacuous; "
          f"wrote {out_dir / 'certificates.csv'}")


def cmd_plot(csv_paths, out_path, log_x: bool, title: str) -> None:
    fronts = {}
    star = None
    for path in csv_paths:
        if not Path(path).exists():
            raise UsageError(f"CSV not found: {path}")
        with open(path, newline="") as f:
            header = next(csv.reader(f), None)
        if header is None or header[0] != "schema_version":
            raise ValueError(f"{path}: malformed CSV (no schema_version)")
        if "bound_value" in header:
            certs = cert.read_certificates_csv(path)
            by_family = {}
            for c in certs:
                by_family.setdefault(c.family, []).append(c)
            for family, group in by_family.items():
                front = cert.pareto_front(cert.certificates_to_points(group))
                fronts[family] = [(p.x, p.y) for p in front]
        else:
            with open(path, newline="") as f:
                for row in csv.DictReader(f):
                    point = (float(row["risk_mc"]), float(row["complexity"]))
                    if row["family"] == "reference":
                        star = point
                    else:
                        fronts.setdefault(row["family"], []).append(point)
    svg = risk_complexity_svg(fronts, star=star, log_x=log_x, title=title)
    out_path = _resolve_out(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(svg)
    print(f"wrote {out_path}")


def cmd_probe(config: RunConfig, run_dir) -> None:
    record, train_ds, _ = _load_run(_resolve_out(run_dir))
    probe = landscape_probe(
        record.spec, record.theta_star, train_ds,
        config.get("probe", "n_directions"),
        np.linspace(config.get("probe", "t_min"), config.get("probe", "t_max"),
                    config.get("probe", "t_points")),
        config.get("probe", "lambdas"),
        config.get("run", "seed"),
        loss_kind=config.get("train", "loss"),
    )
    out_dir = _resolve_out(run_dir)
    with open(out_dir / "landscape.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["schema_version", "direction", "t", "loss", "fit"])
        for i in range(probe.directions.shape[0]):
            fit = np.polyval(probe.fit_coeffs[i], probe.t_grid)
            for j, t in enumerate(probe.t_grid):
                writer.writerow(["1", i, repr(float(t)),
                                 repr(float(probe.losses[i, j])),
                                 repr(float(fit[j]))])
    for i, r2 in enumerate(probe.fit_r2):
        print(f"direction {i}: R^2 = {r2:.6f}")
    for lam, radius in probe.bubble_radii.items():
        print(f"bubble radius at lambda={lam}: {radius:.4f}")
    print(f"wrote {out_dir / 'landscape.csv'}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbcert",
        description="PAC-Bayes certificates for small feedforward classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="path to the run config file")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="SECTION.KEY=VALUE",
                       help="override a config value")

    p_train = sub.add_parser("train", help="train the deterministic classifier")
    add_config_args(p_train)
    p_train.add_argument("--out", help="run output directory "
                                       "(default: run.output from config)")

    p_cert = sub.add_parser("certify", help="sweep grids and emit certificates")
    add_config_args(p_cert)
    p_cert.add_argument("--run", required=True, help="run directory from train")

    p_plot = sub.add_parser("plot", help="render a Risk-Complexity SVG")
    p_plot.add_argument("csvs", nargs="+", help="certificate or pareto CSVs")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.add_argument("--log-x", action="store_true",
                        help="logarithmic empirical-risk axis")
    p_plot.add_argument("--title", default="Risk-Complexity")

    p_probe = sub.add_parser("probe", help="loss landscape along random directions")
    add_config_args(p_probe)
    p_probe.add_argument("--run", required=True, help="run directory from train")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "plot":
            cmd_plot(args.csvs, args.out, args.log_x, args.title)
            return 0
        config = load_config(args.config, args.overrides)
        if args.command == "train":
            out = args.out or config.get("run", "output")
            cmd_train(config, out)
        elif args.command == "certify":
            cmd_certify(config, args.run)
        elif args.command == "probe":
            cmd_probe(config, args.run)
        return 0
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:   # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
