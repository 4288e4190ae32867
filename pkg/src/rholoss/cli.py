"""Experiment front door.

Subcommands: prepare, train-il, run, report, ladder, sweep. Each takes a
YAML config (--config); outputs land under --out, the config's output_dir,
or $RHOLOSS_OUT_DIR, in that order of precedence. Every emitted file carries
the config hash (and seed where applicable) in its header line, and report
refuses to aggregate records from mixed hashes. Any validation failure exits
nonzero before partial output is written.
"""
from __future__ import annotations

import argparse
import csv
import glob as globlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import data as datamod
from .config import (
    DEFAULT_SWEEP_GRID,
    ConfigError,
    ExperimentConfig,
    config_hash,
    dataset_config_hash,
    load_config,
    parse_config,
)
from .ilmodel import (
    _two_halves_parts,
    compute_il_table,
    load_il_table,
    save_il_table,
    train_il_model,
)
from .ladder import LadderConfig, run_ladder
from .nn import init_mlp, load_model, save_model
from .records import RunRecord, epochs_to_target, load_run_record, save_run_record
from .selection import SelectionPolicy, svp_offline_select
from .trainer import RunConfig, run_original_selection, run_training

OUT_ENV_VAR = "RHOLOSS_OUT_DIR"


class CliError(RuntimeError):
    pass


def _resolve_out(args, cfg: ExperimentConfig) -> Path:
    out = args.out or cfg.output_dir or os.environ.get(OUT_ENV_VAR)
    if not out:
        raise CliError(f"no output directory: pass --out, set output_dir in the config, or set ${OUT_ENV_VAR}")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_base_dataset(cfg: ExperimentConfig) -> datamod.LabeledDataset:
    ds = cfg.dataset
    if ds.kind == "synthetic":
        s = ds.synthetic
        return datamod.gen_synthetic(s.classes, s.per_class, s.dim, s.spread, seed=s.seed, radius=s.radius)
    if ds.kind == "idx":
        return datamod.load_idx(ds.idx.images, ds.idx.labels)
    return datamod.load_dataset_csv(ds.csv_path)


def _model_seed(base: int, run_seed: int) -> int:
    return int(np.random.SeedSequence([base, run_seed]).generate_state(1)[0])


def prepare_datasets(cfg: ExperimentConfig):
    """Build (train_pool, holdout, test) per the dataset section.

    Pipeline order: base -> relevance skew -> carve test -> carve holdout
    (skipped for the two-halves scheme) -> inject noise into the train pool
    -> duplicate the train pool. Noise and duplication are training-pool
    properties; holdout and test stay clean.
    """
    ds_cfg = cfg.dataset
    base = _load_base_dataset(cfg)
    if ds_cfg.relevance is not None:
        r = ds_cfg.relevance
        base = datamod.make_relevance_skew(base, high_frac=r.high_frac, keep_frac=r.keep_frac, seed=r.seed)
    split_seeds = np.random.SeedSequence(ds_cfg.split.seed).generate_state(2)
    test = None
    if ds_cfg.kind == "idx" and ds_cfg.idx.test_images:
        pool = base
        test = datamod.load_idx(ds_cfg.idx.test_images, ds_cfg.idx.test_labels)
    else:
        pool, test = datamod.split(base, datamod.SplitSpec(ds_cfg.split.test_fraction, seed=int(split_seeds[0])))
    holdout = None
    scheme = cfg.il.scheme if cfg.il is not None else "holdout"
    if scheme == "holdout":
        pool, holdout = datamod.split(pool, datamod.SplitSpec(ds_cfg.split.holdout_fraction, seed=int(split_seeds[1])))
    if ds_cfg.noise.kind == "uniform":
        pool = datamod.inject_uniform_noise(pool, ds_cfg.noise.p, seed=ds_cfg.noise.seed)
    elif ds_cfg.noise.kind == "structured":
        if cfg.il is None:
            raise CliError("structured noise needs the il section (for the reference model)")
        ref_model, _ = train_il_model(
            pool, validation=pool, hidden=cfg.il.hidden, epochs=cfg.il.epochs,
            optimizer_kind=cfg.il.optimizer.kind, learning_rate=cfg.il.optimizer.learning_rate,
            weight_decay=cfg.il.optimizer.weight_decay, batch_size=cfg.il.batch_size,
            seed=cfg.il.seed + 101,
        )
        from .nn import predict_labels

        confusion = datamod.confusion_counts(pool.labels, predict_labels(ref_model, pool.features), pool.num_classes)
        pool = datamod.inject_structured_noise(
            pool, confusion, ds_cfg.noise.pairs, ds_cfg.noise.flip_prob, seed=ds_cfg.noise.seed
        )
    if ds_cfg.duplicate_factor > 1:
        pool = datamod.duplicate(pool, ds_cfg.duplicate_factor)
    return pool, holdout, test


def cmd_prepare(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> int:
    pool, holdout, test = prepare_datasets(cfg)
    ddir = out / "dataset"
    ddir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    manifest = {"config_hash": chash, "dataset_config_hash": dataset_config_hash(cfg), "files": {}}
    parts = {"train": pool, "test": test}
    if holdout is not None:
        parts["holdout"] = holdout
    for name, ds in parts.items():
        path = ddir / f"{name}.csv"
        datamod.save_dataset_csv(ds, path, provenance=f"config_hash={chash} seed={cfg.dataset.split.seed}")
        manifest["files"][name] = {
            "path": str(path),
            "sha256": datamod.dataset_hash(ds),
            "n": ds.n,
            "d": ds.dim,
            "classes": ds.num_classes,
        }
    with open(ddir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"prepared {', '.join(f'{k}={v.n}' for k, v in parts.items())} under {ddir}")
    return 0


def _load_prepared(out: Path, cfg: ExperimentConfig):
    ddir = out / "dataset"
    manifest_path = ddir / "manifest.json"
    if not manifest_path.exists():
        raise CliError(f"no prepared dataset under {ddir}; run `rholoss prepare` first")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest["dataset_config_hash"] != dataset_config_hash(cfg):
        raise CliError("prepared dataset was built from a different dataset config (hash mismatch); re-run prepare")
    pool = datamod.load_dataset_csv(ddir / "train.csv")
    test = datamod.load_dataset_csv(ddir / "test.csv")
    holdout = None
    if (ddir / "holdout.csv").exists():
        holdout = datamod.load_dataset_csv(ddir / "holdout.csv")
    return pool, holdout, test


def _save_checkpoint_log(log, path, chash: str, seed: int) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# rholoss-checkpoint-log v1 config_hash={chash} seed={seed}\n")
        writer = csv.writer(f)
        writer.writerow(["epoch", "val_loss", "val_accuracy", "selected"])
        best = log.selected_epoch
        for e, (loss, acc) in enumerate(zip(log.val_losses, log.val_accuracies)):
            writer.writerow([e + 1, repr(loss), repr(acc), int(e == best)])


def cmd_train_il(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> int:
    if cfg.il is None:
        raise CliError("config has no il section")
    pool, holdout, _ = _load_prepared(out, cfg)
    ildir = out / "il"
    ildir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    il = cfg.il
    kwargs = dict(
        hidden=il.hidden, epochs=il.epochs, optimizer_kind=il.optimizer.kind,
        learning_rate=il.optimizer.learning_rate, weight_decay=il.optimizer.weight_decay,
        batch_size=il.batch_size,
    )
    if il.scheme == "holdout":
        if holdout is None:
            raise CliError("holdout scheme needs a prepared holdout split")
        model, log = train_il_model(holdout, validation=pool, seed=il.seed, dropout_rate=il.dropout, **kwargs)
        table = compute_il_table(model, pool)
        save_model(model, ildir / "il_model.npz")
        _save_checkpoint_log(log, ildir / "checkpoint_log.csv", chash, il.seed)
    else:
        half_a, half_b = datamod.split(pool, datamod.SplitSpec(0.5, seed=il.seed, mode="two-halves"))
        table, model_a, model_b, log_a, log_b = _two_halves_parts(half_a, half_b, seed=il.seed, **kwargs)
        save_model(model_a, ildir / "il_model_a.npz")
        save_model(model_b, ildir / "il_model_b.npz")
        _save_checkpoint_log(log_a, ildir / "checkpoint_log_a.csv", chash, il.seed)
        _save_checkpoint_log(log_b, ildir / "checkpoint_log_b.csv", chash, il.seed)
    save_il_table(table, ildir / "il_table.csv")
    print(f"wrote {ildir / 'il_table.csv'} ({len(table.values)} entries, scheme={table.scheme})")
    return 0


def _record_path(out: Path, policy_kind: str, seed: int) -> Path:
    return out / "runs" / f"record_{policy_kind}_seed{seed}.csv"


def _run_one(payload) -> str:
    """One (policy, seed) training run; standalone so it can run in a worker."""
    cfg, out_dir, policy_kind, seed = payload
    out = Path(out_dir)
    pool, holdout, test = _load_prepared(out, cfg)
    run = cfg.run
    chash = config_hash(cfg)
    policy = replace(run.policy, kind=policy_kind) if policy_kind != run.policy.kind else run.policy
    train_pool = pool
    if policy_kind == "svp-entropy":
        if cfg.il is None:
            raise CliError("svp-entropy needs the il section to define the proxy model")
        proxy, _ = train_il_model(
            pool, validation=pool, hidden=cfg.il.hidden, epochs=cfg.il.epochs,
            optimizer_kind=cfg.il.optimizer.kind, learning_rate=cfg.il.optimizer.learning_rate,
            weight_decay=cfg.il.optimizer.weight_decay, batch_size=cfg.il.batch_size,
            seed=_model_seed(cfg.il.seed + 7, seed),
        )
        kept = svp_offline_select(proxy, pool, run.policy.keep_fraction, seed=seed)
        pos = {int(i): k for k, i in enumerate(pool.ids)}
        train_pool = datamod.take(pool, np.sort([pos[int(i)] for i in kept]))
        policy = SelectionPolicy(kind="uniform")
    dump_path = None
    if run.dump_scores:
        dump_path = str(out / "runs" / f"scores_{policy_kind}_seed{seed}.csv")
    run_cfg = RunConfig(
        policy=policy,
        n_b=run.n_b,
        n_B=run.n_B,
        epochs=run.epochs,
        optimizer_kind=run.optimizer.kind,
        learning_rate=run.optimizer.learning_rate,
        weight_decay=run.optimizer.weight_decay,
        il_update_mode=run.il_update_mode,
        il_lr_scale=run.lr_scale,
        seed=seed,
        eval_every=run.eval_every,
        target_accuracies=run.targets,
        score_dump_path=dump_path,
    )
    sizes = (train_pool.dim, *run.model.hidden, train_pool.num_classes)
    model = init_mlp(sizes, seed=_model_seed(run.model.seed, seed),
                     dropout_rate=run.model.dropout, batchnorm=run.model.batchnorm)
    if run.il_update_mode == "original" and policy.needs_il:
        il_model = load_model(out / "il" / "il_model.npz")
        record = run_original_selection(train_pool, test, il_model, run_cfg, model)
    else:
        table = load_il_table(out / "il" / "il_table.csv") if policy.needs_il else None
        record = run_training(train_pool, test, table, run_cfg, model)
    record.policy = policy_kind
    record.config_hash = chash
    path = _record_path(out, policy_kind, seed)
    save_run_record(record, path)
    if dump_path is not None:
        body = Path(dump_path).read_text()
        Path(dump_path).write_text(f"# rholoss-scores v1 config_hash={chash} seed={seed}\n" + body)
    return str(path)


def cmd_run(cfg: ExperimentConfig, out: Path, jobs: int = 1, resume: bool = False) -> int:
    if cfg.run is None:
        raise CliError("config has no run section")
    (out / "runs").mkdir(parents=True, exist_ok=True)
    policies = [cfg.run.policy.kind]
    if cfg.run.targets and "uniform" not in policies:
        policies.append("uniform")  # baseline needed to anchor epoch-to-target comparisons
    jobs_list = []
    for kind in policies:
        for seed in cfg.run.seeds:
            path = _record_path(out, kind, seed)
            if path.exists():
                if not resume:
                    raise CliError(f"{path} already exists; pass --resume to skip completed runs")
                try:
                    load_run_record(path)
                    continue  # complete record, skip
                except Exception as exc:
                    raise CliError(f"{path} exists but cannot be parsed ({exc}); remove it manually") from exc
            jobs_list.append((cfg, str(out), kind, seed))
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for path in pool.map(_run_one, jobs_list):
                print(f"wrote {path}")
    else:
        for payload in jobs_list:
            print(f"wrote {_run_one(payload)}")
    return 0


def _aggregate_epochs(values: list[int | None]) -> str:
    """Median over seeds with not-reached counting as +inf; NR when the median
    is infinite (i.e. no majority of seeds reached the target)."""
    numeric = [math.inf if v is None else float(v) for v in values]
    med = float(np.median(numeric))
    return "NR" if math.isinf(med) else repr(med)


def cmd_report(cfg: ExperimentConfig, out: Path, records_glob: str | None = None, jobs: int = 1) -> int:
    pattern = records_glob or str(out / "runs" / "*.csv")
    paths = sorted(globlib.glob(pattern))
    if not paths:
        raise CliError(f"no run records match {pattern!r}")
    records = [load_run_record(p) for p in paths]
    hashes = {r.config_hash for r in records}
    if len(hashes) > 1:
        raise CliError(f"refusing to mix records from different configs: {sorted(hashes)}")
    chash = hashes.pop()
    by_policy: dict[str, list[RunRecord]] = {}
    for r in records:
        by_policy.setdefault(r.policy, []).append(r)
    for recs in by_policy.values():
        recs.sort(key=lambda r: r.seed)
    rdir = out / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    targets = cfg.run.targets if cfg.run is not None else ()
    seeds_str = ";".join(str(r.seed) for r in records)

    with open(rdir / "epochs_to_target.csv", "w", newline="") as f:
        f.write(f"# rholoss-report v1 config_hash={chash} seeds={seeds_str} kind=epochs_to_target\n")
        writer = csv.writer(f)
        writer.writerow(["policy", "target", "median_epochs", "n_reached", "n_seeds", "mean_final_accuracy"])
        for policy, recs in sorted(by_policy.items()):
            finals = [r.final_accuracy() for r in recs]
            for target in targets:
                reached = [epochs_to_target(r, target) for r in recs]
                writer.writerow(
                    [
                        policy,
                        repr(float(target)),
                        _aggregate_epochs(reached),
                        sum(v is not None for v in reached),
                        len(recs),
                        repr(float(np.mean(finals))),
                    ]
                )

    with open(rdir / "composition.csv", "w", newline="") as f:
        f.write(f"# rholoss-report v1 config_hash={chash} seeds={seeds_str} kind=composition\n")
        writer = csv.writer(f)
        writer.writerow(["policy", "epoch", "frac_corrupted", "frac_low_relevance", "frac_already_correct"])
        for policy, recs in sorted(by_policy.items()):
            n_epochs = min(len(r.compositions) for r in recs)
            for e in range(n_epochs):
                rows = [r.compositions[e] for r in recs]
                writer.writerow(
                    [
                        policy,
                        rows[0].epoch,
                        repr(float(np.mean([c.frac_corrupted for c in rows]))),
                        repr(float(np.mean([c.frac_low_relevance for c in rows]))),
                        repr(float(np.mean([c.frac_already_correct for c in rows]))),
                    ]
                )

    with open(rdir / "accuracy.csv", "w", newline="") as f:
        f.write(f"# rholoss-report v1 config_hash={chash} seeds={seeds_str} kind=accuracy\n")
        writer = csv.writer(f)
        writer.writerow(["policy", "step", "epoch", "accuracy", "mean_loss"])
        for policy, recs in sorted(by_policy.items()):
            n_evals = min(len(r.evals) for r in recs)
            for i in range(n_evals):
                rows = [r.evals[i] for r in recs]
                writer.writerow(
                    [
                        policy,
                        rows[0].step,
                        rows[0].epoch,
                        repr(float(np.mean([e.accuracy for e in rows]))),
                        repr(float(np.mean([e.mean_loss for e in rows]))),
                    ]
                )
    print(f"wrote reports for {len(records)} records under {rdir}")
    return 0


def cmd_ladder(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> int:
    if cfg.ladder is None:
        raise CliError("config has no ladder section")
    pool, holdout, _ = _load_prepared(out, cfg)
    if holdout is None:
        raise CliError("the ladder needs a holdout split (il.scheme=holdout)")
    lad = cfg.ladder
    ladder_cfg = LadderConfig(
        n_b=lad.n_b, n_B=lad.n_B, ensemble_size=lad.ensemble_size,
        convergence_epochs=lad.convergence_epochs, convergence_tol=lad.convergence_tol,
        il_pretrain_epochs=lad.il_pretrain_epochs, hidden=lad.hidden, small_hidden=lad.small_hidden,
        batch_size=lad.batch_size, optimizer_kind=lad.optimizer.kind,
        learning_rate=lad.optimizer.learning_rate, weight_decay=lad.optimizer.weight_decay,
        seed=lad.seed,
    )
    results = run_ladder(pool, holdout, ladder_cfg)
    ldir = out / "ladder"
    ldir.mkdir(parents=True, exist_ok=True)
    path = ldir / "ladder.csv"
    with open(path, "w", newline="") as f:
        f.write(f"# rholoss-ladder v1 config_hash={config_hash(cfg)} seed={lad.seed}\n")
        writer = csv.writer(f)
        writer.writerow(["rung", "step", "rho"])
        for name, res in results.items():
            for t, rho in enumerate(res.step_rho):
                writer.writerow([name, t, repr(rho)])
        for name, res in results.items():
            writer.writerow([name, "mean", repr(res.mean_rho)])
            writer.writerow([name, "frac_positive", repr(res.frac_positive)])
            if res.reference_rho is not None:
                writer.writerow([name, "reference", repr(res.reference_rho)])
    for name, res in results.items():
        ref = f" (reference {res.reference_rho})" if res.reference_rho is not None else ""
        print(f"{name}: mean rho {res.mean_rho:.3f}, positive at {res.frac_positive:.0%} of steps{ref}")
    print(f"wrote {path}")
    return 0


def _sweep_cells(cfg: ExperimentConfig) -> list[dict]:
    grid = cfg.sweep.grid if cfg.sweep is not None else dict(DEFAULT_SWEEP_GRID)
    keys = list(grid.keys())
    cells: list[dict] = [{}]
    for key in keys:
        cells = [dict(cell, **{key: value}) for cell in cells for value in grid[key]]
    return cells


def _cell_config(cfg: ExperimentConfig, cell: dict) -> ExperimentConfig:
    raw = json.loads(json.dumps(cfg.raw))
    run = raw.setdefault("run", {})
    ratio = cfg.run.n_b / cfg.run.n_B
    for key, value in cell.items():
        if key == "batch_size":  # vary the trained batch, keeping the selection ratio
            run["n_b"] = int(value)
            run["n_B"] = max(int(value), int(round(value / ratio)))
        elif key in ("n_b", "n_B"):
            run[key] = int(value)
        else:
            run.setdefault("optimizer", {})[key] = float(value)
    return parse_config(raw)


def cmd_sweep(cfg: ExperimentConfig, out: Path, jobs: int = 1, resume: bool = False) -> int:
    if cfg.run is None:
        raise CliError("config has no run section")
    cells = _sweep_cells(cfg)
    print(f"sweeping {len(cells)} cells")
    for i, cell in enumerate(cells):
        cell_cfg = _cell_config(cfg, cell)
        cell_out = out / "sweep" / f"cell_{i:03d}"
        cell_out.mkdir(parents=True, exist_ok=True)
        with open(cell_out / "config.yaml", "w") as f:
            yaml.safe_dump(cell_cfg.raw, f, sort_keys=True)
        if not (cell_out / "dataset" / "manifest.json").exists():
            cmd_prepare(cell_cfg, cell_out)
        if cell_cfg.run.policy.needs_il and not (cell_out / "il" / "il_table.csv").exists():
            cmd_train_il(cell_cfg, cell_out)
        cmd_run(cell_cfg, cell_out, jobs=jobs, resume=resume)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rholoss", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("prepare", "build and cache the dataset splits"),
        ("train-il", "train the irreducible-loss model(s) and cache the loss table"),
        ("run", "run training for the configured policy and seeds"),
        ("report", "aggregate run records into plot-ready CSVs"),
        ("ladder", "run the approximation-fidelity ladder"),
        ("sweep", "run the hyperparameter grid sweep"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the experiment YAML")
        p.add_argument("--out", default=None, help=f"output directory (default: config output_dir or ${OUT_ENV_VAR})")
        p.add_argument("--seed-override", type=int, default=None, help="replace run.seeds with this single seed")
        p.add_argument("--jobs", type=int, default=1, help="independent runs to execute concurrently")
        if name in ("run", "sweep"):
            p.add_argument("--resume", action="store_true", help="skip runs whose record file already exists")
        if name == "report":
            p.add_argument("--records", default=None, help="glob of run-record files (default: <out>/runs/*.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed_override is not None:
            raw = json.loads(json.dumps(cfg.raw))
            raw.setdefault("run", {})["seeds"] = [args.seed_override]
            cfg = parse_config(raw)
        out = _resolve_out(args, cfg)
        if args.command == "prepare":
            return cmd_prepare(cfg, out, jobs=args.jobs)
        if args.command == "train-il":
            return cmd_train_il(cfg, out, jobs=args.jobs)
        if args.command == "run":
            return cmd_run(cfg, out, jobs=args.jobs, resume=args.resume)
        if args.command == "report":
            return cmd_report(cfg, out, records_glob=args.records, jobs=args.jobs)
        if args.command == "ladder":
            return cmd_ladder(cfg, out, jobs=args.jobs)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, jobs=args.jobs, resume=args.resume)
        raise CliError(f"unknown command {args.command!r}")
    except (ConfigError, CliError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
