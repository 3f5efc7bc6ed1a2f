"""Command-line interface.

Subcommands:

* ``synth``     — generate a paired synthetic dataset to a directory.
* ``train``     — pre-train on synthetic clouds / meshes, or fine-tune on
                  a dataset's train split; writes a checkpoint + loss CSV.
* ``register``  — run one method on one source/target pair of files.
* ``benchmark`` — run methods over a dataset subset; CSV + JSON reports.
* ``eval``      — score an already-transformed cloud against a target.

Every option can also come from a YAML config file (``--config``) with
one section per subcommand; explicit flags win over config values, which
win over built-in defaults.  Exit codes: 0 success, 1 usage error,
2 data error, 3 numerical failure (including any failed benchmark case).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import yaml

from .bench import (
    METHOD_ORDER,
    DatasetGenConfig,
    RegistrationReport,
    benchmark_run,
    evaluate_files,
    finetune_pairs,
    generate_dataset,
    load_dataset,
    run_method,
    synth_training_corpus,
    write_benchmark_outputs,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .classical import CpdConfig, IcpConfig
from .errors import DataError, NumericalError, TrainingDivergedError, UsageError
from .fptnet import FptArchitecture
from .geometry import LandmarkPairs, target_registration_error
from .mesh import load_off_mesh, sample_surface
from .pipeline import AugmentConfig
from .pointio import read_points, write_points
from .shapes import SHAPE_FAMILIES
from .training import TrainConfig, train

__all__ = ["main", "build_parser"]

_SECTIONS = ("synth", "train", "register", "benchmark", "eval")


class _Parser(argparse.ArgumentParser):
    """argparse parser that reports bad usage as an exception (exit 1)
    instead of exiting the process with argparse's own status."""

    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config file handling


def _load_section(path, section: str, known_keys) -> dict:
    """Read one subcommand's section from a YAML config file."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise UsageError(f"config file {p} is not valid YAML: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise UsageError(f"config file {p} must be a mapping with per-subcommand sections")
    unknown_sections = sorted(set(doc) - set(_SECTIONS))
    if unknown_sections:
        raise UsageError(
            f"unknown config sections {unknown_sections}; expected a subset of {list(_SECTIONS)}"
        )
    section_cfg = doc.get(section)
    if section_cfg is None:
        return {}
    if not isinstance(section_cfg, dict):
        raise UsageError(f"config section {section!r} must be a mapping")
    unknown = sorted(set(section_cfg) - set(known_keys))
    if unknown:
        raise UsageError(
            f"unknown keys in config section {section!r}: {unknown}; "
            f"expected a subset of {sorted(known_keys)}"
        )
    return section_cfg


def _merge(args: argparse.Namespace, section: str, defaults: dict) -> argparse.Namespace:
    """Resolve each option as flag > config value > default."""
    config = _load_section(getattr(args, "config", None), section, defaults.keys())
    merged = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
        elif key in config:
            merged[key] = config[key]
        else:
            merged[key] = default
    return argparse.Namespace(**merged)


def _require(ns: argparse.Namespace, key: str, flag: str):
    value = getattr(ns, key)
    if value is None:
        raise UsageError(f"{flag} is required (flag or config)")
    return value


def _arch_from_config(arch_cfg) -> FptArchitecture | None:
    if arch_cfg is None:
        return None
    if not isinstance(arch_cfg, dict):
        raise UsageError("config key 'arch' must be a mapping of layer-width lists")
    allowed = {"embed_a", "embed_b", "tnet_mlp", "tnet_fc", "transformer"}
    unknown = sorted(set(arch_cfg) - allowed)
    if unknown:
        raise UsageError(f"unknown arch keys {unknown}; expected a subset of {sorted(allowed)}")
    try:
        return FptArchitecture(**{k: tuple(v) for k, v in arch_cfg.items()})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid arch config: {exc}") from exc


def _method_config(cls, cfg_dict, name: str):
    if not cfg_dict:
        return cls()
    if not isinstance(cfg_dict, dict):
        raise UsageError(f"config key {name!r} must be a mapping")
    try:
        return cls(**cfg_dict)
    except TypeError as exc:
        raise UsageError(f"invalid {name} config: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"invalid {name} config: {exc}") from exc


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.6g}"


# ---------------------------------------------------------------------------
# synth


_SYNTH_DEFAULTS = dict(
    out=None,
    cases=16,
    points=512,
    landmarks=16,
    family="blob",
    family_params={},
    mm_scale=25.0,
    rotation_max_deg=20.0,
    tps_sigma=0.1,
    displacement_max=0.1,
    resample_source=False,
    sparse_tau=0.05,
    sector_half_angle_deg=None,
    train_fraction=0.5,
    cases_per_subject=1,
    seed=0,
)


def cmd_synth(args: argparse.Namespace) -> int:
    ns = _merge(args, "synth", _SYNTH_DEFAULTS)
    out = _require(ns, "out", "--out")
    cfg = DatasetGenConfig(
        n_cases=ns.cases,
        points=ns.points,
        landmarks=ns.landmarks,
        family=ns.family,
        family_params=dict(ns.family_params or {}),
        mm_scale=ns.mm_scale,
        rotation_max_deg=ns.rotation_max_deg,
        tps_sigma=ns.tps_sigma,
        displacement_max=ns.displacement_max,
        resample_source=bool(ns.resample_source),
        sparse_tau=ns.sparse_tau,
        sector_half_angle_deg=ns.sector_half_angle_deg,
        train_fraction=ns.train_fraction,
        cases_per_subject=ns.cases_per_subject,
        seed=ns.seed,
    )
    manifest = generate_dataset(out, cfg)
    print(f"wrote {len(manifest['cases'])} cases to {out} (unit: {manifest['unit']})")
    return 0


# ---------------------------------------------------------------------------
# train


_TRAIN_DEFAULTS = dict(
    mode="pretrain",
    out=None,
    loss_csv=None,
    init_from=None,
    dataset=None,
    sparse=False,
    family="blob",
    family_params={},
    clouds=64,
    points=512,
    mesh_dir=None,
    mm_scale=25.0,
    stretch_jitter=0.0,
    epochs=1,
    max_steps=None,
    batch=32,
    lr=1e-3,
    points_per_set=2048,
    seed=0,
    rotation_max_deg=45.0,
    displacement_max=1.0,
    tps_sigma=0.1,
    no_augment=False,
    arch=None,
)


def _pretrain_corpus(ns: argparse.Namespace):
    if ns.mesh_dir is not None:
        mesh_dir = Path(ns.mesh_dir)
        paths = sorted(mesh_dir.glob("*.off"))
        if not paths:
            raise UsageError(f"no .off meshes found in {mesh_dir}")
        return [
            sample_surface(load_off_mesh(p), ns.points, seed=ns.seed + i)
            for i, p in enumerate(paths)
        ]
    return synth_training_corpus(
        ns.family,
        ns.clouds,
        ns.points,
        ns.seed,
        family_params=dict(ns.family_params or {}),
        mm_scale=ns.mm_scale,
        stretch_jitter=ns.stretch_jitter,
    )


def cmd_train(args: argparse.Namespace) -> int:
    ns = _merge(args, "train", _TRAIN_DEFAULTS)
    out = Path(_require(ns, "out", "--out"))
    if ns.mode not in ("pretrain", "finetune"):
        raise UsageError(f"mode must be 'pretrain' or 'finetune', got {ns.mode!r}")
    arch = _arch_from_config(ns.arch)

    # Load any starting checkpoint before touching data, so a missing or
    # bad file fails fast.
    init = None
    if ns.init_from is not None:
        init = load_checkpoint(ns.init_from, arch=arch)
        arch = init.arch

    if ns.mode == "finetune":
        dataset = load_dataset(_require(ns, "dataset", "--dataset"))
        train_ids = dataset.case_ids("train")
        corpus = finetune_pairs(dataset, train_ids, sparse=bool(ns.sparse))
        augment = None  # explicit pairs are trained as-is
    else:
        corpus = _pretrain_corpus(ns)
        augment = (
            None
            if ns.no_augment
            else AugmentConfig(
                rotation_max_deg=ns.rotation_max_deg,
                displacement_max=ns.displacement_max,
                tps_sigma=ns.tps_sigma,
            )
        )

    cfg = TrainConfig(
        minibatch_size=ns.batch,
        learning_rate=ns.lr,
        epochs=ns.epochs,
        max_steps=ns.max_steps,
        points_per_set=ns.points_per_set,
        rng_seed=ns.seed,
        augment=augment,
    )
    try:
        result = train(corpus, cfg, init=init, arch=arch)
    except TrainingDivergedError as exc:
        if exc.last_good is not None:
            rescue = out.with_suffix(out.suffix + ".last_good")
            save_checkpoint(exc.last_good, rescue)
            print(f"training diverged; last finite parameters saved to {rescue}", file=sys.stderr)
        raise

    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, out)
    loss_csv = Path(ns.loss_csv) if ns.loss_csv else out.with_suffix(out.suffix + ".loss.csv")
    lines = ["step,loss"] + [
        f"{step},{value:.17g}" for step, value in result.step_losses
    ]
    loss_csv.write_text("\n".join(lines) + "\n")
    final = result.step_losses[-1][1] if result.step_losses else float("nan")
    print(
        f"trained {len(result.step_losses)} steps "
        f"(final loss {final:.6g}); checkpoint: {out}, losses: {loss_csv}"
    )
    return 0


# ---------------------------------------------------------------------------
# register


_REGISTER_DEFAULTS = dict(
    method=None,
    out=None,
    report=None,
    unit="mm",
    landmarks_source=None,
    landmarks_target=None,
    landmarks_out=None,
    checkpoint=None,
    icp={},
    cpd={},
)


def cmd_register(args: argparse.Namespace) -> int:
    ns = _merge(args, "register", _REGISTER_DEFAULTS)
    method = _require(ns, "method", "--method")
    if method not in METHOD_ORDER:
        raise UsageError(f"unknown method {method!r}; valid methods: {', '.join(METHOD_ORDER)}")
    out = _require(ns, "out", "--out")
    if (ns.landmarks_source is None) != (ns.landmarks_target is None):
        raise UsageError("--landmarks-source and --landmarks-target must be given together")

    source = read_points(args.source, frame="source", unit=ns.unit)
    target = read_points(args.target, frame="target", unit=ns.unit)
    lms_source = (
        read_points(ns.landmarks_source, frame="source", unit=ns.unit).points
        if ns.landmarks_source
        else None
    )

    fpt_params = None
    if method.startswith("fpt"):
        checkpoint = _require(ns, "checkpoint", "--checkpoint")
        fpt_params = load_checkpoint(checkpoint)

    moved, lms_moved, seconds = run_method(
        method,
        source,
        target,
        landmarks=lms_source,
        icp_cfg=_method_config(IcpConfig, ns.icp, "icp"),
        cpd_cfg=_method_config(CpdConfig, ns.cpd, "cpd"),
        fpt_params=fpt_params,
    )
    write_points(out, moved)
    if lms_moved is not None and ns.landmarks_out:
        write_points(ns.landmarks_out, lms_moved)

    tre = None
    if ns.landmarks_target is not None:
        lms_target = read_points(ns.landmarks_target, frame="target", unit=ns.unit).points
        tre = target_registration_error(LandmarkPairs(lms_moved, lms_target))
    scored = evaluate_files(moved, target)
    report = RegistrationReport(
        case_id=Path(args.source).stem,
        method=method,
        seconds=seconds,
        chamfer=scored["chamfer"],
        hausdorff=scored["hausdorff"],
        tre=tre,
        unit=ns.unit,
    )
    report_path = Path(ns.report) if ns.report else Path(str(out) + ".report.json")
    report_path.write_text(json.dumps(dataclasses.asdict(report), indent=2, sort_keys=True) + "\n")
    print(
        f"{method}: chamfer={_fmt(report.chamfer)} hausdorff={_fmt(report.hausdorff)} "
        f"tre={_fmt(report.tre)} ({ns.unit}); transformed: {out}, report: {report_path}"
    )
    return 0


# ---------------------------------------------------------------------------
# benchmark


_BENCHMARK_DEFAULTS = dict(
    dataset=None,
    out=None,
    methods="center,icp,cpd",
    variant="complete",
    subset="test",
    workers=1,
    fpt_checkpoint=None,
    fpt_finetuned_checkpoint=None,
    icp={},
    cpd={},
)


def cmd_benchmark(args: argparse.Namespace) -> int:
    ns = _merge(args, "benchmark", _BENCHMARK_DEFAULTS)
    dataset = load_dataset(_require(ns, "dataset", "--dataset"))
    out_root = Path(_require(ns, "out", "--out"))
    if ns.variant not in ("complete", "sparse", "both"):
        raise UsageError(f"variant must be complete, sparse, or both, got {ns.variant!r}")
    if isinstance(ns.methods, str):
        methods = [m.strip() for m in ns.methods.split(",") if m.strip()]
    else:
        methods = list(ns.methods)
    if not methods:
        raise UsageError("at least one method must be selected")
    unknown = [m for m in methods if m not in METHOD_ORDER]
    if unknown:
        raise UsageError(f"unknown methods {unknown}; valid methods: {', '.join(METHOD_ORDER)}")

    fpt_params = {}
    checkpoint_flags = {
        "fpt": ("fpt_checkpoint", "--fpt-checkpoint"),
        "fpt-finetuned": ("fpt_finetuned_checkpoint", "--fpt-finetuned-checkpoint"),
    }
    for method, (key, flag) in checkpoint_flags.items():
        if method in methods:
            fpt_params[method] = load_checkpoint(_require(ns, key, flag))

    icp_cfg = _method_config(IcpConfig, ns.icp, "icp")
    cpd_cfg = _method_config(CpdConfig, ns.cpd, "cpd")
    variants = ("complete", "sparse") if ns.variant == "both" else (ns.variant,)

    any_failed = False
    for variant in variants:
        result = benchmark_run(
            dataset,
            methods,
            variant=variant,
            subset=ns.subset,
            icp_cfg=icp_cfg,
            cpd_cfg=cpd_cfg,
            fpt_params=fpt_params,
            workers=int(ns.workers),
        )
        outdir = out_root / variant if ns.variant == "both" else out_root
        write_benchmark_outputs(
            result,
            outdir,
            extra={
                "dataset": str(ns.dataset),
                "methods": methods,
                "n_cases": len(dataset.case_ids(ns.subset)),
            },
        )
        print(f"[{variant}] {len(result.reports)} ok, {len(result.failures)} failed -> {outdir}")
        for entry in result.summary:
            print(
                f"  {entry['method']:>14}: "
                f"time {_fmt(entry['seconds_mean'])}s  "
                f"chamfer {_fmt(entry['chamfer_mean'])} ± {_fmt(entry['chamfer_std'])}  "
                f"hausdorff {_fmt(entry['hausdorff_mean'])} ± {_fmt(entry['hausdorff_std'])}  "
                f"tre {_fmt(entry['tre_mean'])} ± {_fmt(entry['tre_std'])}"
            )
        any_failed = any_failed or bool(result.failures)
    return 3 if any_failed else 0


# ---------------------------------------------------------------------------
# eval


_EVAL_DEFAULTS = dict(
    report=None,
    unit="mm",
    landmarks_source=None,
    landmarks_target=None,
)


def cmd_eval(args: argparse.Namespace) -> int:
    ns = _merge(args, "eval", _EVAL_DEFAULTS)
    if (ns.landmarks_source is None) != (ns.landmarks_target is None):
        raise UsageError("--landmarks-source and --landmarks-target must be given together")
    transformed = read_points(args.transformed, frame="transformed", unit=ns.unit)
    target = read_points(args.target, frame="target", unit=ns.unit)
    landmarks = None
    if ns.landmarks_source is not None:
        landmarks = LandmarkPairs(
            read_points(ns.landmarks_source, frame="source", unit=ns.unit).points,
            read_points(ns.landmarks_target, frame="target", unit=ns.unit).points,
        )
    report = evaluate_files(transformed, target, landmarks)
    if ns.report:
        Path(ns.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(
        f"chamfer={_fmt(report['chamfer'])} hausdorff={_fmt(report['hausdorff'])} "
        f"tre={_fmt(report['tre'])} ({ns.unit})"
    )
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pointreg", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_config(p):
        p.add_argument("--config", help="YAML config file with one section per subcommand")

    p = sub.add_parser("synth", help="generate a paired synthetic dataset")
    add_config(p)
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--cases", type=int, help="number of cases [16]")
    p.add_argument("--points", type=int, help="points per cloud [512]")
    p.add_argument("--landmarks", type=int, help="landmarks per case [16]")
    p.add_argument("--family", choices=SHAPE_FAMILIES, help="shape family [blob]")
    p.add_argument("--mm-scale", type=float, help="millimetres per shape unit [25]")
    p.add_argument("--rotation-max-deg", type=float, help="ground-truth rotation bound [20]")
    p.add_argument("--tps-sigma", type=float, help="ground-truth deformation magnitude [0.1]")
    p.add_argument("--displacement-max", type=float, help="ground-truth displacement bound [0.1]")
    p.add_argument("--resample-source", action="store_true", default=None,
                   help="sample fresh source points instead of deforming the target's")
    p.add_argument("--sparse-tau", type=float, help="biplane slab half-thickness [0.05]")
    p.add_argument("--sector-half-angle-deg", type=float, help="optional visibility sector")
    p.add_argument("--train-fraction", type=float, help="train share of subjects [0.5]")
    p.add_argument("--cases-per-subject", type=int, help="cases per synthetic subject [1]")
    p.add_argument("--seed", type=int, help="master seed [0]")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="pre-train or fine-tune the registration network")
    add_config(p)
    p.add_argument("--mode", choices=("pretrain", "finetune"), help="training mode [pretrain]")
    p.add_argument("--out", help="output checkpoint path")
    p.add_argument("--loss-csv", help="per-step loss CSV path [<out>.loss.csv]")
    p.add_argument("--init-from", help="checkpoint to start from (fine-tuning)")
    p.add_argument("--dataset", help="dataset directory (finetune mode; uses its train split)")
    p.add_argument("--sparse", action="store_true", default=None,
                   help="fine-tune against sparse targets")
    p.add_argument("--family", choices=SHAPE_FAMILIES, help="pretraining shape family [blob]")
    p.add_argument("--clouds", type=int, help="pretraining corpus size [64]")
    p.add_argument("--points", type=int, help="points per pretraining cloud [512]")
    p.add_argument("--mesh-dir", help="pretrain from a directory of OFF meshes instead")
    p.add_argument("--mm-scale", type=float, help="millimetres per shape unit [25]")
    p.add_argument("--stretch-jitter", type=float, help="per-cloud anisotropy jitter [0]")
    p.add_argument("--epochs", type=int, help="training epochs [1]")
    p.add_argument("--max-steps", type=int, help="hard cap on optimizer steps")
    p.add_argument("--batch", type=int, help="minibatch size [32]")
    p.add_argument("--lr", type=float, help="learning rate [1e-3]")
    p.add_argument("--points-per-set", type=int, help="points subsampled per cloud [2048]")
    p.add_argument("--seed", type=int, help="training seed [0]")
    p.add_argument("--rotation-max-deg", type=float, help="augmentation rotation bound [45]")
    p.add_argument("--displacement-max", type=float, help="augmentation displacement bound [1]")
    p.add_argument("--tps-sigma", type=float, help="augmentation deformation magnitude [0.1]")
    p.add_argument("--no-augment", action="store_true", default=None,
                   help="train on identical pairs (no augmentation)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("register", help="register one source file onto one target file")
    add_config(p)
    p.add_argument("source", help="source point file (.xyz or .ply)")
    p.add_argument("target", help="target point file (.xyz or .ply)")
    p.add_argument("--method", choices=METHOD_ORDER, help="registration method")
    p.add_argument("--out", help="output path for the transformed source")
    p.add_argument("--report", help="JSON report path [<out>.report.json]")
    p.add_argument("--unit", choices=("mm", "normalized"), help="coordinate unit tag [mm]")
    p.add_argument("--landmarks-source", help="source landmark file (carried through)")
    p.add_argument("--landmarks-target", help="target landmark file (enables TRE)")
    p.add_argument("--landmarks-out", help="output path for transported landmarks")
    p.add_argument("--checkpoint", help="network checkpoint (fpt methods)")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("benchmark", help="run methods over a dataset and tabulate metrics")
    add_config(p)
    p.add_argument("--dataset", help="dataset directory (from synth)")
    p.add_argument("--out", help="output directory for CSV/JSON reports")
    p.add_argument("--methods", help="comma-separated methods [center,icp,cpd]")
    p.add_argument("--variant", choices=("complete", "sparse", "both"),
                   help="register against complete or sparse targets [complete]")
    p.add_argument("--subset", choices=("train", "test", "all"), help="dataset subset [test]")
    p.add_argument("--workers", type=int, help="parallel worker threads [1]")
    p.add_argument("--fpt-checkpoint", help="checkpoint for the fpt method")
    p.add_argument("--fpt-finetuned-checkpoint", help="checkpoint for the fpt-finetuned method")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("eval", help="score an already-transformed cloud against a target")
    add_config(p)
    p.add_argument("transformed", help="transformed point file")
    p.add_argument("target", help="target point file")
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--unit", choices=("mm", "normalized"), help="coordinate unit tag [mm]")
    p.add_argument("--landmarks-source", help="transported source landmark file")
    p.add_argument("--landmarks-target", help="target landmark file")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
