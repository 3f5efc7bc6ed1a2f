"""Experiment harness: synthetic paired datasets, method runners, and
benchmark aggregation.

A dataset is a directory of cases.  Each case holds a fixed target
cloud, a moving source cloud produced by a known smooth deformation +
rigid motion of the same underlying surface, a sparse biplane-visibility
subset of the target, and paired landmarks (on and inside the shape)
carried through the ground-truth motion.  Everything is stored in
millimetres with a manifest recording the generating configuration,
seeds, and the subject-grouped train/test split.

Benchmarks register source onto target per method and score against the
complete target surface (Chamfer both ways, Hausdorff, landmark RMS),
timing only the registration computation.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classical import (
    CpdConfig,
    IcpConfig,
    center_align,
    cpd_nonrigid_register,
    icp_register,
)
from .errors import ParameterError, UsageError
from .fptnet import (
    FptParameters,
    displace_points,
    global_feature,
    registration_shift,
)
from .geometry import (
    LandmarkPairs,
    PointSet,
    chamfer_distance,
    hausdorff_distance,
    target_registration_error,
)
from .pipeline import (
    AugmentConfig,
    AugmentRecord,
    SparseSliceConfig,
    augment_pair,
    biplane_sparse,
    normalize_to_unit_box,
    split_dataset,
)
from .pointio import read_points, write_xyz
from .shapes import SHAPE_FAMILIES, synth_shape

__all__ = [
    "METHOD_ORDER",
    "CHAMFER_DEFINITION",
    "DatasetGenConfig",
    "generate_dataset",
    "Dataset",
    "Case",
    "load_dataset",
    "synth_training_corpus",
    "finetune_pairs",
    "RegistrationReport",
    "CaseFailure",
    "run_method",
    "BenchmarkResult",
    "benchmark_run",
    "write_benchmark_outputs",
    "evaluate_files",
]

METHOD_ORDER = ("center", "icp", "cpd", "fpt", "fpt-finetuned")
CHAMFER_DEFINITION = "two-way mean Euclidean nearest-neighbour distance (sum of both directions)"
TRE_DEFINITION = "root-mean-square Euclidean landmark error"
MANIFEST_NAME = "manifest.json"
DATASET_FORMAT = "pointreg-dataset"
DATASET_VERSION = 1


# ---------------------------------------------------------------------------
# dataset generation


@dataclass(frozen=True)
class DatasetGenConfig:
    """Controls for synthetic paired-case generation.

    Each case keeps the clean shape as the fixed target and applies a
    known ground-truth motion to produce the moving source: a thin-plate
    -spline deformation (``tps_sigma``), a rotation up to
    ``rotation_max_deg`` per axis, and a displacement up to
    ``displacement_max`` per axis — all in the dimensionless shape frame
    before scaling to millimetres.  ``resample_source`` draws fresh
    surface points for the source instead of deforming the target's own
    samples.
    """

    n_cases: int = 16
    points: int = 512
    landmarks: int = 16
    family: str = "blob"
    family_params: dict = field(default_factory=dict)
    mm_scale: float = 25.0
    rotation_max_deg: float = 20.0
    tps_sigma: float = 0.1
    displacement_max: float = 0.1
    resample_source: bool = False
    sparse_tau: float = 0.05
    sector_half_angle_deg: float | None = None
    train_fraction: float = 0.5
    cases_per_subject: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_cases < 2:
            raise ParameterError("a dataset needs at least 2 cases")
        if self.points < 8:
            raise ParameterError("each cloud needs at least 8 points")
        if self.landmarks < 2:
            raise ParameterError("each case needs at least 2 landmarks")
        if self.family not in SHAPE_FAMILIES:
            raise ParameterError(
                f"unknown family {self.family!r}; expected one of {SHAPE_FAMILIES}"
            )
        if self.mm_scale <= 0:
            raise ParameterError("mm_scale must be positive")
        if self.cases_per_subject < 1:
            raise ParameterError("cases_per_subject must be at least 1")
        if self.n_cases % self.cases_per_subject:
            raise ParameterError("n_cases must be a multiple of cases_per_subject")


def _case_ground_truth(cfg: DatasetGenConfig, seed: int) -> AugmentRecord:
    """Draw one ground-truth motion in the dimensionless shape frame."""
    _, _, record = augment_pair(
        PointSet(np.array([[0.9, 0.0, 0.0], [0.0, 0.9, 0.0], [0.0, 0.0, 0.9], [-0.9, -0.3, 0.2]]),
                 "target", "normalized"),
        AugmentConfig(
            rotation_max_deg=cfg.rotation_max_deg,
            displacement_max=cfg.displacement_max,
            tps_sigma=cfg.tps_sigma,
            tps_grid_bounds=(-1.6, 1.6),
        ),
        seed,
    )
    return record


def _case_points(cfg: DatasetGenConfig, shape_seed: int, direction_seed: int | None, n: int) -> np.ndarray:
    params = dict(cfg.family_params)
    if cfg.family == "blob" and direction_seed is not None:
        params["direction_seed"] = direction_seed
        seed = shape_seed
    elif cfg.family == "ellipsoid":
        # An ellipsoid's surface is fully determined by its semi-axes, so
        # an independent seed produces independent points on it.
        seed = direction_seed if direction_seed is not None else shape_seed
    else:
        seed = shape_seed
    return synth_shape(cfg.family, n, seed=seed, **params).points


def generate_dataset(outdir, cfg: DatasetGenConfig) -> dict:
    """Generate and write a paired dataset; returns the manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    master = np.random.default_rng(cfg.seed)

    n_subjects = cfg.n_cases // cfg.cases_per_subject
    subject_seeds = master.integers(2**63, size=n_subjects)
    cases = []
    subjects = {}
    for index in range(cfg.n_cases):
        case_id = f"case_{index:03d}"
        subject = f"subj_{index // cfg.cases_per_subject:03d}"
        subjects[case_id] = subject
        case_dir = outdir / "cases" / case_id
        case_dir.mkdir(parents=True, exist_ok=True)

        shape_seed = int(subject_seeds[index // cfg.cases_per_subject])
        source_dir_seed = int(master.integers(2**63))
        landmark_seed = int(master.integers(2**63))
        gt_seed = int(master.integers(2**63))
        interior_rng = np.random.default_rng(int(master.integers(2**63)))

        target_pts = _case_points(cfg, shape_seed, None, cfg.points)
        if cfg.resample_source:
            pre_source = _case_points(cfg, shape_seed, source_dir_seed, cfg.points)
        else:
            pre_source = target_pts

        n_surface = (cfg.landmarks + 1) // 2
        n_interior = cfg.landmarks - n_surface
        surface_lms = _case_points(cfg, shape_seed, landmark_seed, n_surface)
        if n_interior:
            extra = _case_points(cfg, shape_seed, landmark_seed + 1, n_interior)
            depth = interior_rng.uniform(0.35, 0.75, size=(n_interior, 1))
            lms = np.vstack([surface_lms, extra * depth])
        else:
            lms = surface_lms

        record = _case_ground_truth(cfg, gt_seed)
        source_pts = record.apply(pre_source)
        source_lms = record.apply(lms)

        scale = cfg.mm_scale
        source = PointSet(source_pts * scale, "source", "mm")
        target = PointSet(target_pts * scale, "target", "mm")
        source_lms_mm = source_lms * scale
        target_lms_mm = lms * scale

        target_norm, _ = normalize_to_unit_box(target)
        sparse_cfg = SparseSliceConfig(
            tau=cfg.sparse_tau, sector_half_angle_deg=cfg.sector_half_angle_deg
        )
        _, sparse_idx = biplane_sparse(target_norm, sparse_cfg)
        target_sparse = PointSet(target.points[sparse_idx], "target", "mm")

        write_xyz(case_dir / "source.xyz", source)
        write_xyz(case_dir / "target.xyz", target)
        write_xyz(case_dir / "target_sparse.xyz", target_sparse)
        write_xyz(case_dir / "landmarks_source.xyz", source_lms_mm)
        write_xyz(case_dir / "landmarks_target.xyz", target_lms_mm)
        (case_dir / "record.json").write_text(
            json.dumps(
                {
                    "mm_scale": scale,
                    "rotation": record.rotation.tolist(),
                    "displacement": record.displacement.tolist(),
                    "tps_controls": record.tps.control_points.tolist(),
                    "tps_control_displacements": record.tps.control_displacements.tolist(),
                    "sparse_indices": sparse_idx.tolist(),
                    "seeds": {
                        "shape": shape_seed,
                        "source_directions": source_dir_seed,
                        "landmarks": landmark_seed,
                        "ground_truth": gt_seed,
                    },
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        cases.append({"id": case_id, "subject": subject, "dir": f"cases/{case_id}"})

    split = split_dataset(
        [c["id"] for c in cases],
        cfg.train_fraction,
        seed=cfg.seed,
        subjects=subjects,
    )
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "unit": "mm",
        "config": dataclasses.asdict(cfg),
        "cases": cases,
        "split": {"train": list(split.train_ids), "test": list(split.test_ids)},
    }
    (outdir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# dataset loading


@dataclass(frozen=True, eq=False)
class Case:
    """One loaded benchmark case (all coordinates in dataset units)."""

    case_id: str
    subject: str
    source: PointSet
    target: PointSet
    target_sparse: PointSet
    landmarks: LandmarkPairs


@dataclass(frozen=True, eq=False)
class Dataset:
    root: Path
    manifest: dict

    @property
    def unit(self) -> str:
        return self.manifest["unit"]

    def case_ids(self, subset: str = "all") -> list[str]:
        if subset == "all":
            return [c["id"] for c in self.manifest["cases"]]
        if subset in ("train", "test"):
            return list(self.manifest["split"][subset])
        raise UsageError(f"unknown subset {subset!r}; expected train, test, or all")

    def load_case(self, case_id: str) -> Case:
        entry = next((c for c in self.manifest["cases"] if c["id"] == case_id), None)
        if entry is None:
            raise UsageError(f"case {case_id!r} is not in the dataset manifest")
        case_dir = self.root / entry["dir"]
        unit = self.unit
        source = read_points(case_dir / "source.xyz", frame="source", unit=unit)
        target = read_points(case_dir / "target.xyz", frame="target", unit=unit)
        sparse = read_points(case_dir / "target_sparse.xyz", frame="target", unit=unit)
        lms_s = read_points(case_dir / "landmarks_source.xyz", unit=unit)
        lms_t = read_points(case_dir / "landmarks_target.xyz", unit=unit)
        return Case(
            case_id=case_id,
            subject=entry["subject"],
            source=source,
            target=target,
            target_sparse=sparse,
            landmarks=LandmarkPairs(lms_s.points, lms_t.points),
        )


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise UsageError(f"{root} is not a dataset directory (missing {MANIFEST_NAME})")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise UsageError(f"{manifest_path} is not a {DATASET_FORMAT} manifest")
    return Dataset(root=root, manifest=manifest)


# ---------------------------------------------------------------------------
# training corpora


def synth_training_corpus(
    family: str,
    n_clouds: int,
    points: int,
    seed: int,
    family_params: dict | None = None,
    mm_scale: float = 25.0,
    stretch_jitter: float = 0.0,
) -> list[PointSet]:
    """A list of independent synthetic clouds for pre-training."""
    if n_clouds < 1:
        raise ParameterError("corpus needs at least one cloud")
    params = dict(family_params or {})
    rng = np.random.default_rng(seed)
    corpus = []
    for _ in range(n_clouds):
        cloud_params = dict(params)
        if stretch_jitter > 0 and family == "blob":
            base = np.asarray(cloud_params.get("stretch", (1.0, 1.0, 1.0)), dtype=np.float64)
            cloud_params["stretch"] = tuple(
                base * (1.0 + rng.uniform(-stretch_jitter, stretch_jitter, size=3))
            )
        cloud = synth_shape(family, points, seed=int(rng.integers(2**63)), **cloud_params)
        corpus.append(PointSet(cloud.points * mm_scale, "source", "mm"))
    return corpus


def finetune_pairs(dataset: Dataset, case_ids, sparse: bool) -> list[tuple[PointSet, PointSet]]:
    """(source, target) pairs for fine-tuning, optionally sparse targets."""
    pairs = []
    for case_id in case_ids:
        case = dataset.load_case(case_id)
        target = case.target_sparse if sparse else case.target
        pairs.append((case.source, target))
    return pairs


# ---------------------------------------------------------------------------
# method execution


@dataclass(frozen=True)
class RegistrationReport:
    """Scored outcome of one registration."""

    case_id: str
    method: str
    seconds: float
    chamfer: float
    hausdorff: float
    tre: float | None
    unit: str

    def __post_init__(self):
        if self.method not in METHOD_ORDER:
            raise UsageError(
                f"unknown method {self.method!r}; expected one of {METHOD_ORDER}"
            )
        values = [self.seconds, self.chamfer, self.hausdorff]
        if self.tre is not None:
            values.append(self.tre)
        arr = np.asarray(values, dtype=np.float64)
        if not np.isfinite(arr).all() or (arr < 0).any():
            raise ValueError(f"report metrics must be finite and non-negative: {self}")


@dataclass(frozen=True)
class CaseFailure:
    case_id: str
    method: str
    error: str


def run_method(
    method: str,
    source: PointSet,
    target: PointSet,
    *,
    landmarks: np.ndarray | None = None,
    icp_cfg: IcpConfig | None = None,
    cpd_cfg: CpdConfig | None = None,
    fpt_params: FptParameters | None = None,
) -> tuple[PointSet, np.ndarray | None, float]:
    """Register source onto target with one method.

    Returns the transformed source (in the input units), the landmarks
    carried through the same transform (when given), and the wall-clock
    seconds of the registration computation alone — landmark transport
    and I/O are excluded.
    """
    if method not in METHOD_ORDER:
        raise UsageError(f"unknown method {method!r}; expected one of {METHOD_ORDER}")
    lms = None if landmarks is None else np.asarray(landmarks, dtype=np.float64)

    if method == "center":
        start = time.perf_counter()
        moved = center_align(source, target)
        seconds = time.perf_counter() - start
        if lms is not None:
            lms = lms + (target.centroid - source.centroid)
        return moved, lms, seconds

    if method == "icp":
        start = time.perf_counter()
        result = icp_register(source, target, icp_cfg or IcpConfig())
        seconds = time.perf_counter() - start
        if lms is not None:
            lms = result.transform.apply(lms)
        return result.transformed, lms, seconds

    if method == "cpd":
        start = time.perf_counter()
        result = cpd_nonrigid_register(source, target, cpd_cfg or CpdConfig())
        seconds = time.perf_counter() - start
        if lms is not None:
            lms = lms + result.displace(lms)
        return result.transformed, lms, seconds

    # fpt / fpt-finetuned: both clouds are mapped through the *source's*
    # normalization, mirroring the training frame.  The source alone
    # defines the frame scale, so a target covering only a sliver of the
    # surface cannot skew it; the translation component is handled by the
    # centroid shift inside the operator.
    if fpt_params is None:
        raise UsageError(f"method {method!r} requires network parameters (checkpoint)")
    start = time.perf_counter()
    norm_source, record = normalize_to_unit_box(source)
    norm_target = PointSet(record.normalize(target.points), "target", "normalized")
    shift = registration_shift(norm_source.points, norm_target.points)
    shifted = norm_source.points + shift
    feat = global_feature(
        PointSet(shifted, "source", "normalized"), norm_target, fpt_params
    )
    moved_norm = shifted + displace_points(shifted, feat, fpt_params)
    moved_mm = record.denormalize(moved_norm)
    seconds = time.perf_counter() - start
    if lms is not None:
        lms_shifted = record.normalize(lms) + shift
        lms = record.denormalize(
            lms_shifted + displace_points(lms_shifted, feat, fpt_params)
        )
    return PointSet(moved_mm, "transformed", source.unit), lms, seconds


# ---------------------------------------------------------------------------
# benchmark loop


@dataclass(frozen=True, eq=False)
class BenchmarkResult:
    variant: str
    subset: str
    reports: tuple
    failures: tuple
    summary: tuple


def _score_case(
    case: Case,
    method: str,
    variant: str,
    icp_cfg: IcpConfig,
    cpd_cfg: CpdConfig,
    fpt_params: dict,
) -> RegistrationReport:
    reg_target = case.target_sparse if variant == "sparse" else case.target
    moved, lms, seconds = run_method(
        method,
        case.source,
        reg_target,
        landmarks=case.landmarks.source,
        icp_cfg=icp_cfg,
        cpd_cfg=cpd_cfg,
        fpt_params=fpt_params.get(method),
    )
    # Quality is always scored against the complete target surface,
    # also when registration only saw the sparse subset.
    return RegistrationReport(
        case_id=case.case_id,
        method=method,
        seconds=seconds,
        chamfer=chamfer_distance(moved, case.target),
        hausdorff=hausdorff_distance(moved, case.target),
        tre=target_registration_error(LandmarkPairs(lms, case.landmarks.target)),
        unit=case.source.unit,
    )


def benchmark_run(
    dataset: Dataset,
    methods,
    *,
    variant: str = "complete",
    subset: str = "test",
    icp_cfg: IcpConfig | None = None,
    cpd_cfg: CpdConfig | None = None,
    fpt_params: dict | None = None,
    workers: int = 1,
) -> BenchmarkResult:
    """Run every requested method on every case of a dataset subset.

    Per-case failures are recorded and the run continues.  Rows come
    back in deterministic (case, method) order regardless of workers.
    """
    methods = list(methods)
    unknown = [m for m in methods if m not in METHOD_ORDER]
    if unknown:
        raise UsageError(f"unknown methods {unknown}; expected a subset of {METHOD_ORDER}")
    if variant not in ("complete", "sparse"):
        raise UsageError(f"variant must be 'complete' or 'sparse', got {variant!r}")
    fpt_params = dict(fpt_params or {})
    for m in methods:
        if m.startswith("fpt") and m not in fpt_params:
            raise UsageError(f"method {m!r} requested but no checkpoint parameters given")
    icp_cfg = icp_cfg or IcpConfig()
    cpd_cfg = cpd_cfg or CpdConfig()

    cases = [dataset.load_case(cid) for cid in dataset.case_ids(subset)]
    methods_sorted = [m for m in METHOD_ORDER if m in methods]
    tasks = [(case, method) for case in cases for method in methods_sorted]

    def run_task(task):
        case, method = task
        try:
            return _score_case(case, method, variant, icp_cfg, cpd_cfg, fpt_params)
        except Exception as exc:  # recorded, not fatal to the run
            return CaseFailure(case_id=case.case_id, method=method, error=str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_task, tasks))
    else:
        outcomes = [run_task(t) for t in tasks]

    key = {m: i for i, m in enumerate(METHOD_ORDER)}
    outcomes.sort(key=lambda r: (r.case_id, key[r.method]))
    reports = tuple(r for r in outcomes if isinstance(r, RegistrationReport))
    failures = tuple(r for r in outcomes if isinstance(r, CaseFailure))

    summary = []
    for method in methods_sorted:
        rows = [r for r in reports if r.method == method]
        failed = [f for f in failures if f.method == method]
        entry = {
            "method": method,
            "variant": variant,
            "n_cases": len(rows) + len(failed),
            "n_failed": len(failed),
        }
        for metric in ("seconds", "chamfer", "hausdorff", "tre"):
            values = [getattr(r, metric) for r in rows if getattr(r, metric) is not None]
            entry[f"{metric}_mean"] = float(np.mean(values)) if values else None
            entry[f"{metric}_std"] = float(np.std(values)) if values else None
        summary.append(entry)
    return BenchmarkResult(
        variant=variant,
        subset=subset,
        reports=reports,
        failures=failures,
        summary=tuple(summary),
    )


# ---------------------------------------------------------------------------
# report writing


def _fmt(value) -> str:
    if value is None:
        return ""
    return f"{value:.17g}"


def write_benchmark_outputs(result: BenchmarkResult, outdir, extra: dict | None = None) -> None:
    """Write cases.csv, summary.csv, run.json, and one JSON report per
    (case, method) under ``outdir``/reports/."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    report_dir = outdir / "reports"
    report_dir.mkdir(exist_ok=True)

    case_lines = ["case_id,method,variant,status,seconds,chamfer,hausdorff,tre,error"]
    rows: list = list(result.reports) + list(result.failures)
    key = {m: i for i, m in enumerate(METHOD_ORDER)}
    rows.sort(key=lambda r: (r.case_id, key[r.method]))
    for row in rows:
        body = dataclasses.asdict(row)
        body["variant"] = result.variant
        if isinstance(row, RegistrationReport):
            body["status"] = "ok"
            case_lines.append(
                f"{row.case_id},{row.method},{result.variant},ok,"
                f"{_fmt(row.seconds)},{_fmt(row.chamfer)},{_fmt(row.hausdorff)},{_fmt(row.tre)},"
            )
        else:
            body["status"] = "error"
            message = row.error.replace(",", ";").replace("\n", " ")
            case_lines.append(
                f"{row.case_id},{row.method},{result.variant},error,,,,,{message}"
            )
        (report_dir / f"{row.case_id}.{row.method}.json").write_text(
            json.dumps(body, indent=2, sort_keys=True) + "\n"
        )
    (outdir / "cases.csv").write_text("\n".join(case_lines) + "\n")

    summary_lines = [
        "method,variant,n_cases,n_failed,"
        "seconds_mean,seconds_std,chamfer_mean,chamfer_std,"
        "hausdorff_mean,hausdorff_std,tre_mean,tre_std"
    ]
    for entry in result.summary:
        summary_lines.append(
            f"{entry['method']},{entry['variant']},{entry['n_cases']},{entry['n_failed']},"
            f"{_fmt(entry['seconds_mean'])},{_fmt(entry['seconds_std'])},"
            f"{_fmt(entry['chamfer_mean'])},{_fmt(entry['chamfer_std'])},"
            f"{_fmt(entry['hausdorff_mean'])},{_fmt(entry['hausdorff_std'])},"
            f"{_fmt(entry['tre_mean'])},{_fmt(entry['tre_std'])}"
        )
    (outdir / "summary.csv").write_text("\n".join(summary_lines) + "\n")

    run_info = {
        "variant": result.variant,
        "subset": result.subset,
        "chamfer_definition": CHAMFER_DEFINITION,
        "tre_definition": TRE_DEFINITION,
        "summary": list(result.summary),
        "failures": [dataclasses.asdict(f) for f in result.failures],
    }
    if extra:
        run_info.update(extra)
    (outdir / "run.json").write_text(json.dumps(run_info, indent=2, sort_keys=True) + "\n")


def evaluate_files(
    transformed: PointSet,
    target: PointSet,
    landmarks: LandmarkPairs | None = None,
) -> dict:
    """Metric report between an already-transformed cloud and a target."""
    report = {
        "chamfer": chamfer_distance(transformed, target),
        "hausdorff": hausdorff_distance(transformed, target),
        "tre": None if landmarks is None else target_registration_error(landmarks),
        "unit": target.unit,
        "chamfer_definition": CHAMFER_DEFINITION,
        "tre_definition": TRE_DEFINITION,
    }
    return report
