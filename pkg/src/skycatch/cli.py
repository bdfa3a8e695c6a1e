"""Command-line entry point for reproducible experiment pipelines.

Subcommands: ``synth`` (catalog + trajectories), ``augment`` (dataset
expansion), ``pds`` (diversity report), ``train`` (one predictor),
``eval-ie`` (error curves + significance), ``simulate`` (catching
success table), ``report`` (bundle outputs), ``selftest`` (oracle and
invariant suites).

Settings resolve in order: built-in defaults, then an INI config file
(one section per module), then command-line flags.  Seeds left
unspecified fall back to the SKYCATCH_SEED environment variable.  An
effective-config dump is written next to every output for provenance.
Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path


from . import analysis, baselines, catchsim, evalkit, predictors, synthgen, trajkit
from .errors import SkycatchError


class UserError(Exception):
    """Bad invocation or bad input; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; the contract is 1
        self.print_usage(sys.stderr)
        raise UserError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration resolution


class Settings:
    """Layered settings: defaults < config file < flags < (env for seeds)."""

    def __init__(self, config_path: str | None):
        self.file = configparser.ConfigParser()
        if config_path:
            if not Path(config_path).exists():
                raise UserError(f"config file not found: {config_path}")
            self.file.read(config_path)
        env = os.environ.get("SKYCATCH_SEED")
        try:
            self.env_seed = int(env) if env is not None else None
        except ValueError:
            raise UserError(f"SKYCATCH_SEED must be an integer, got {env!r}") from None
        self.effective: dict[tuple[str, str], str] = {}

    def get(self, section: str, key: str, flag, default, cast=str, seed: bool = False):
        if flag is not None:
            value = flag
        elif self.file.has_option(section, key):
            raw = self.file.get(section, key)
            value = self._cast(raw, cast, section, key)
        elif seed and self.env_seed is not None:
            value = self.env_seed
        else:
            value = default
        self.effective[(section, key)] = repr(value) if isinstance(value, float) else str(value)
        return value

    @staticmethod
    def _cast(raw: str, cast, section: str, key: str):
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError:
            raise UserError(f"config [{section}] {key}: cannot parse {raw!r}") from None

    def dump(self, path) -> None:
        out = configparser.ConfigParser()
        for (section, key), value in sorted(self.effective.items()):
            if not out.has_section(section):
                out.add_section(section)
            out.set(section, key, value)
        with open(path, "w", encoding="utf-8") as fh:
            out.write(fh)


def _common_data(settings: Settings, args):
    plane = trajkit.PlaneSpec(settings.get("data", "plane_height",
                                           getattr(args, "plane_height", None),
                                           trajkit.DEFAULT_PLANE_HEIGHT, float))
    t_steps = settings.get("data", "history_steps",
                           getattr(args, "history_steps", None),
                           trajkit.DEFAULT_HISTORY_STEPS, int)
    return plane, t_steps


def _load_split(settings: Settings, args, trajs):
    catalog_path = settings.get("paths", "catalog", getattr(args, "catalog", None),
                                "catalog.json")
    profiles = synthgen.read_catalog(catalog_path)
    seen_all, unseen_all = synthgen.default_seen_unseen(profiles)
    present = {t.object_id for t in trajs}
    seen = [o for o in seen_all if o in present]
    unseen = [o for o in unseen_all if o in present]
    seed = settings.get("split", "seed", getattr(args, "split_seed", None), 5, int,
                        seed=True)
    return trajkit.split_dataset(trajs, seen, unseen, seed)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(settings: Settings, args) -> int:
    plane, _ = _common_data(settings, args)
    n_objects = settings.get("synth", "objects", args.objects, 20, int)
    n_unseen = settings.get("synth", "unseen", args.unseen,
                            min(5, max(0, n_objects - 15)), int)
    trials = settings.get("synth", "trials", args.trials, 100, int)
    seed = settings.get("synth", "seed", args.seed, 7, int, seed=True)
    dataset = settings.get("paths", "dataset", args.dataset, "trajectories.jsonl")
    catalog_path = settings.get("paths", "catalog", args.catalog, "catalog.json")

    profiles = synthgen.catalog(seed)
    seen, unseen = synthgen.default_seen_unseen(profiles)
    if n_unseen > len(unseen) or n_objects - n_unseen > len(seen):
        raise UserError(f"cannot select {n_objects} objects with {n_unseen} unseen "
                        f"from a {len(seen)}+{len(unseen)} catalog")
    by_id = {p.object_id: p for p in profiles}
    chosen = [by_id[o] for o in seen[:n_objects - n_unseen] + unseen[:n_unseen]]

    synthgen.write_catalog(chosen, catalog_path)
    trajs = synthgen.generate_trials(chosen, trials, seed, plane=plane)
    trajkit.write_dataset(trajs, dataset)
    settings.dump(str(dataset) + ".effective.ini")
    print(f"wrote {len(chosen)} profiles to {catalog_path}")
    print(f"wrote {len(trajs)} trajectories to {dataset}")
    return 0


def _cmd_augment(settings: Settings, args) -> int:
    dataset = settings.get("paths", "dataset", args.dataset, "trajectories.jsonl")
    out = settings.get("paths", "augmented", args.out, "trajectories_aug.jsonl")
    factor = settings.get("synth", "augment_factor", args.factor, 4, int)
    seed = settings.get("synth", "augment_seed", args.seed, 11, int, seed=True)
    trajs = trajkit.read_dataset(dataset)
    expanded = trajkit.expand_dataset(trajs, factor, seed)
    trajkit.write_dataset(expanded, out)
    settings.dump(str(out) + ".effective.ini")
    print(f"expanded {len(trajs)} -> {len(expanded)} trajectories into {out}")
    return 0


def _cmd_pds(settings: Settings, args) -> int:
    dataset = settings.get("paths", "dataset", args.dataset, "trajectories.jsonl")
    out_dir = Path(settings.get("paths", "output", args.output, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    trajs = trajkit.read_dataset(dataset)
    report = analysis.dataset_report(trajs)
    path = out_dir / "pds_report.csv"
    analysis.write_report_csv(report, path)
    settings.dump(out_dir / "pds.effective.ini")
    for obj, n, mean, std in zip(report.object_ids, report.counts,
                                 report.means, report.stds):
        print(f"{obj:28s} n={n:4d}  pds={mean:.4f} +- {std:.4f} m")
    print(f"wrote {path}")
    return 0


def _train_hyper(settings: Settings, args) -> predictors.TrainHyper:
    lr = settings.get("train", "learning_rate", args.learning_rate, None,
                      lambda s: float(s) if s else None)
    return predictors.TrainHyper(
        learning_rate=lr,
        batch_size=settings.get("train", "batch_size", args.batch_size, 512, int),
        max_epochs=settings.get("train", "max_epochs", args.epochs, 30000, int),
        seed=settings.get("train", "seed", args.seed, 0, int, seed=True),
        clip_norm=settings.get("train", "clip_norm", None, 5.0, float),
        eval_interval=settings.get("train", "eval_interval", args.eval_interval, 10, int),
        patience=settings.get("train", "patience", args.patience, 500, int),
        normalize=settings.get("train", "normalize", None, True, bool),
        window_stride=settings.get("train", "window_stride", args.window_stride, 1, int),
    )


def _cmd_train(settings: Settings, args) -> int:
    plane, t_steps = _common_data(settings, args)
    dataset = settings.get("paths", "dataset", args.dataset, "trajectories.jsonl")
    ckpt_dir = Path(settings.get("paths", "checkpoints", args.checkpoints, "checkpoints"))
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    arch_kind = settings.get("train", "arch", args.arch, "dipp_dpe")
    hidden = settings.get("train", "hidden", args.hidden, 128, int)

    trajs = trajkit.read_dataset(dataset)
    split = _load_split(settings, args, trajs)

    if arch_kind == "svr":
        windows = predictors.collect_windows(split.select(trajs, "train"),
                                             t_steps, plane)
        model = baselines.svr_fit(windows, seed=settings.get(
            "train", "seed", args.seed, 0, int, seed=True))
        path = ckpt_dir / "svr.ckpt"
        baselines.save_svr(model, path)
        print(f"trained svr on {len(windows)} windows; wrote {path}")
    elif arch_kind in predictors.KINDS:
        arch = predictors.ArchitectureSpec(kind=arch_kind, hidden=hidden,
                                           history_steps=t_steps)
        hyper = _train_hyper(settings, args)
        result = predictors.train(arch, trajs, split, plane, hyper)
        path = ckpt_dir / f"{arch_kind}.ckpt"
        predictors.save_model(result.model, path, hyper=hyper,
                              history=result.history_dict())
        print(f"trained {arch_kind} ({result.stopped_reason}); "
              f"final loss {result.train_loss[-1]:.5f}, "
              f"best val IE {result.best_val_ie:.4f} m; wrote {path}")
    else:
        raise UserError(f"unknown architecture {arch_kind!r}; "
                        f"choose from {predictors.KINDS + ('svr',)}")
    settings.dump(ckpt_dir / f"{arch_kind}.effective.ini")
    return 0


def _load_predictors(ckpt_paths: list[str], plane: trajkit.PlaneSpec):
    """Window predictors plus episode factories for every checkpoint."""
    fns = {}
    factories = {}
    for path in ckpt_paths:
        meta, _ = predictors.checkpoint_read(path)
        if meta["kind"] == "svr":
            model = baselines.load_svr(path)
            fn = baselines.make_svr_predictor(model)
            name = "svr"
        else:
            model, _ = predictors.load_model(path)
            fn = predictors.make_predictor(model, plane)
            name = model.arch.kind
        fns[name] = fn
        factories[name] = catchsim.stateless(fn)
    return fns, factories


def _cmd_eval_ie(settings: Settings, args) -> int:
    plane, t_steps = _common_data(settings, args)
    dataset = settings.get("paths", "dataset", args.dataset, "trajectories.jsonl")
    out_dir = Path(settings.get("paths", "output", args.output, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    bucket = settings.get("eval", "bucket_width", args.bucket_width, 10, int)

    trajs = trajkit.read_dataset(dataset)
    split = _load_split(settings, args, trajs)
    fns, _ = _load_predictors(args.checkpoint or [], plane)
    fns["newton"] = baselines.make_newton_predictor(plane)

    curves, raws = [], []
    for part, source in (("seen_test", split.select(trajs, "test")),
                         ("unseen", split.select(trajs, "unseen"))):
        windows = predictors.collect_windows(source, t_steps, plane)
        part_curves, part_raws = evalkit.ie_curve(fns, windows, part, bucket)
        curves.extend(part_curves)
        raws.extend(part_raws)

    names = sorted(fns)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    sig = evalkit.significance_rows(raws, pairs, bucket)
    evalkit.write_ie_curves_csv(curves, out_dir / "ie_curves.csv")
    evalkit.write_significance_csv(sig, out_dir / "significance.csv")
    settings.dump(out_dir / "eval_ie.effective.ini")
    for raw in raws:
        pooled = raw.errors.mean() if raw.errors.size else float("nan")
        print(f"{raw.method:12s} {raw.partition:10s} n={raw.errors.size:5d} "
              f"failed={raw.n_failed:4d} mean IE={pooled:.4f} m")
    print(f"wrote {out_dir / 'ie_curves.csv'} and {out_dir / 'significance.csv'}")
    return 0


def _cmd_simulate(settings: Settings, args) -> int:
    plane, t_steps = _common_data(settings, args)
    dataset = settings.get("paths", "dataset", args.dataset, "trajectories.jsonl")
    out_dir = Path(settings.get("paths", "output", args.output, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = catchsim.SimConfig(
        v_max=settings.get("sim", "v_max", args.v_max, 2.5, float),
        kp=settings.get("sim", "kp", None, 6.0, float),
        ki=settings.get("sim", "ki", None, 0.0, float),
        kd=settings.get("sim", "kd", None, 0.5, float),
        init_radius=settings.get("sim", "init_radius", None, 0.3, float),
        prediction_interval=settings.get("sim", "prediction_interval", None, 1, int),
        seed=settings.get("sim", "seed", args.seed, 3, int, seed=True),
    )
    n_side = settings.get("sim", "objects_per_side", args.objects_per_side, 5, int)
    n_trials = settings.get("sim", "trials_per_object", args.trials_per_object, 100, int)

    trajs = trajkit.read_dataset(dataset)
    split = _load_split(settings, args, trajs)
    seen_pick = list(split.seen_objects)[:n_side]
    unseen_pick = list(split.unseen_objects)[:n_side]

    chosen: list[trajkit.Trajectory] = []
    test_pairs = split.trial_ids("test")
    for obj in seen_pick:
        pool = [t for t in trajs if t.object_id == obj
                and (t.object_id, t.trial_id) in test_pairs]
        chosen.extend(pool[:n_trials])
    for obj in unseen_pick:
        pool = [t for t in trajs if t.object_id == obj]
        chosen.extend(pool[:n_trials])

    _, factories = _load_predictors(args.checkpoint or [], plane)
    factories["newton"] = catchsim.stateless(
        baselines.make_newton_predictor(plane))
    if args.with_oracle:
        factories["oracle"] = catchsim.oracle_factory(plane)

    rows, episodes = catchsim.success_table(
        chosen, factories, plane, cfg,
        seen_objects=set(seen_pick), unseen_objects=set(unseen_pick),
        history_steps=t_steps)
    catchsim.write_sr_csv(rows, out_dir / "sr_table.csv")
    catchsim.write_episode_log_csv(episodes, out_dir / "episodes.csv")
    settings.dump(out_dir / "simulate.effective.ini")
    for name, radius, seen_sr, unseen_sr in rows:
        print(f"{name:12s} r={radius:.2f}  seen={seen_sr:.2f}  unseen={unseen_sr:.2f}")
    print(f"wrote {out_dir / 'sr_table.csv'} over {len(chosen)} trajectories/method")
    return 0


def _cmd_report(settings: Settings, args) -> int:
    from . import selfcheck

    out_dir = Path(settings.get("paths", "output", args.output, "out"))
    dataset = settings.get("paths", "dataset", args.dataset, "trajectories.jsonl")
    pds_report = None
    if Path(dataset).exists():
        pds_report = analysis.dataset_report(trajkit.read_dataset(dataset))
    results = selfcheck.run_all(quick=True)
    checks = [(r.name, r.passed) for r in results]
    written = evalkit.emit_report(out_dir, pds_report=pds_report, checks=checks)
    for path in written:
        print(f"wrote {path}")
    return 0 if all(ok for _, ok in checks) else 1


def _cmd_selftest(settings: Settings, args) -> int:
    from . import selfcheck

    results = selfcheck.run_all(quick=args.quick)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}" +
              (f"  ({r.detail})" if r.detail else ""))
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return 0 if n_fail == 0 else 1


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="skycatch",
                     description="Impact-point prediction experiment pipelines")
    parser.add_argument("--config", help="INI config file (one section per module)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for parallel sections (default 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(handler=fn)
        p.add_argument("--dataset", help="trajectory JSONL path (default trajectories.jsonl)")
        p.add_argument("--catalog", help="object catalog JSON path (default catalog.json)")
        p.add_argument("--plane-height", dest="plane_height", type=float,
                       help="catching plane height in meters (default 0.60)")
        p.add_argument("--history-steps", dest="history_steps", type=int,
                       help="history length T in steps (default 5)")
        p.add_argument("--split-seed", dest="split_seed", type=int,
                       help="train/val/test split seed (default 5)")
        return p

    p = add("synth", _cmd_synth, "generate the object catalog and synthetic trajectories")
    p.add_argument("--objects", type=int, help="number of objects (default 20)")
    p.add_argument("--unseen", type=int, help="how many of the objects are unseen blends")
    p.add_argument("--trials", type=int, help="trials per object (default 100)")
    p.add_argument("--seed", type=int, help="generation seed (default 7)")

    p = add("augment", _cmd_augment, "expand a dataset by rigid-motion copies")
    p.add_argument("--factor", type=int, help="expansion factor (default 4)")
    p.add_argument("--seed", type=int, help="augmentation seed (default 11)")
    p.add_argument("--out", help="output JSONL path (default trajectories_aug.jsonl)")

    p = add("pds", _cmd_pds, "per-object parabola deviation report")
    p.add_argument("--output", help="output directory (default out)")

    p = add("train", _cmd_train, "train one predictor architecture")
    p.add_argument("--arch", help="nae|dpe|dipp_nae|dipp_dpe|dipp_nae_fc|svr "
                                  "(default dipp_dpe)")
    p.add_argument("--hidden", type=int, help="hidden units (default 128)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float,
                   help="Adam learning rate (default per-kind)")
    p.add_argument("--batch-size", dest="batch_size", type=int,
                   help="minibatch size (default 512)")
    p.add_argument("--epochs", type=int, help="epoch budget (default 30000)")
    p.add_argument("--eval-interval", dest="eval_interval", type=int,
                   help="epochs between validation passes (default 10)")
    p.add_argument("--patience", type=int,
                   help="validation intervals without improvement before stopping")
    p.add_argument("--window-stride", dest="window_stride", type=int,
                   help="subsample training windows by this stride (default 1)")
    p.add_argument("--seed", type=int, help="training seed (default 0)")
    p.add_argument("--checkpoints", help="checkpoint directory (default checkpoints)")

    p = add("eval-ie", _cmd_eval_ie, "impact-error curves and significance tests")
    p.add_argument("--checkpoint", action="append",
                   help="checkpoint file to evaluate (repeatable)")
    p.add_argument("--bucket-width", dest="bucket_width", type=int,
                   help="steps-to-impact bucket width (default 10)")
    p.add_argument("--output", help="output directory (default out)")

    p = add("simulate", _cmd_simulate, "closed-loop catching success table")
    p.add_argument("--checkpoint", action="append",
                   help="checkpoint file to simulate (repeatable)")
    p.add_argument("--with-oracle", dest="with_oracle", action="store_true",
                   help="include the ground-truth oracle predictor")
    p.add_argument("--v-max", dest="v_max", type=float,
                   help="robot speed limit in m/s (default 2.5)")
    p.add_argument("--objects-per-side", dest="objects_per_side", type=int,
                   help="seen and unseen objects to simulate (default 5)")
    p.add_argument("--trials-per-object", dest="trials_per_object", type=int,
                   help="episodes per object (default 100)")
    p.add_argument("--seed", type=int, help="episode seed (default 3)")
    p.add_argument("--output", help="output directory (default out)")

    p = add("report", _cmd_report, "bundle reports and check summary")
    p.add_argument("--output", help="output directory (default out)")

    p = add("selftest", _cmd_selftest, "run oracle and invariant suites")
    p.add_argument("--quick", action="store_true",
                   help="skip the slower gradient checks")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UserError("--threads must be at least 1")
        settings = Settings(args.config)
        return args.handler(settings, args)
    except UserError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (SkycatchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - contract: internal errors exit 2
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
