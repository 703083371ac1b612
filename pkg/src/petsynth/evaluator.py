"""Evaluation protocol: k-fold cross-validation over paired subjects,
the seven-row ablation matrix, per-condition metric tables, and a
one-way repeated-measures ANOVA for significance against the reference
configuration.

Validation folds partition the paired subjects; unpaired subjects are
train-only in every fold (metrics need ground truth). Reported metrics
are computed per slice and then averaged, never over pooled volumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.stats
import torch

from . import losses, trainer
from .datasets import Batch, DatasetHandle, Modality
from .errors import DegenerateInput, IoError, TooFewSubjects
from .model import ModelConfig, TranslationNet, build, predict
from .trainer import TrainSchedule, count_parameters

_FOLD_SALT = 9001


@dataclass(frozen=True)
class AblationConfig:
    """One row of the ablation matrix; only the seven studied rows are legal."""

    task: str  # "single" | "multi"
    t1: bool
    ra: bool
    da: bool

    def __post_init__(self):
        if (self.task, self.t1, self.ra, self.da) not in _LEGAL_ROWS:
            raise ValueError(
                f"not an ablation-matrix row: task={self.task} t1={self.t1} ra={self.ra} da={self.da}"
            )

    @property
    def label(self) -> str:
        tag = "S" if self.task == "single" else "M"
        return (
            f"{tag}"
            f"{'+' if self.t1 else '-'}T1"
            f"{'+' if self.ra else '-'}RA"
            f"{'+' if self.da else '-'}DA"
        )

    def to_model_config(self, **overrides) -> ModelConfig:
        return ModelConfig(
            multitask=self.task == "multi",
            use_t1=self.t1,
            use_residual_attention=self.ra,
            use_disentanglement_attention=self.da,
            **overrides,
        )


_LEGAL_ROWS = {
    ("single", False, False, False),
    ("single", True, False, False),
    ("single", True, False, True),
    ("multi", False, False, False),
    ("multi", True, False, False),
    ("multi", True, True, False),
    ("multi", True, True, True),
}

TABLE_ROWS: tuple[AblationConfig, ...] = (
    AblationConfig("single", False, False, False),
    AblationConfig("single", True, False, False),
    AblationConfig("single", True, False, True),
    AblationConfig("multi", False, False, False),
    AblationConfig("multi", True, False, False),
    AblationConfig("multi", True, True, False),
    AblationConfig("multi", True, True, True),
)

REFERENCE = AblationConfig("multi", True, True, True)

CONDITIONS = ("activated", "resting", "all")
# The clinical protocol splits scans into globally-changed vs baseline
# conditions; the phantom analog is hotspot vs resting slices.
CONDITION_ALIASES = {"activated": "hypercapnia-analog", "resting": "normocapnia-analog"}


@dataclass(frozen=True)
class SliceScore:
    subject_id: int
    condition: str
    ssim: float
    mse: float
    psnr: float


@dataclass(frozen=True)
class FoldResult:
    fold_id: int
    validation_subjects: tuple[int, ...]
    records: tuple[SliceScore, ...]
    aggregates: dict  # condition -> metric -> (mean, sd, n)


def _aggregate(records) -> dict:
    out = {}
    for condition in CONDITIONS:
        rows = [r for r in records if condition == "all" or r.condition == condition]
        metrics = {}
        for name in ("ssim", "mse", "psnr"):
            vals = np.array([getattr(r, name) for r in rows], dtype=np.float64)
            if len(vals):
                metrics[name] = (float(vals.mean()), float(vals.std(ddof=0)), len(vals))
            else:
                metrics[name] = (float("nan"), float("nan"), 0)
        out[condition] = metrics
    return out


def fold_splits(paired_ids, k: int, seed: int) -> list:
    """Seeded disjoint validation folds covering every paired subject once."""
    ids = sorted(paired_ids)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(ids) < k:
        raise TooFewSubjects(f"{len(ids)} paired subjects < k={k}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _FOLD_SALT])))
    perm = rng.permutation(np.asarray(ids))
    return [sorted(int(s) for s in chunk) for chunk in np.array_split(perm, k)]


def score_subjects(net: TranslationNet, handle: DatasetHandle, subject_ids) -> list:
    """Per-slice SSIM/MSE/PSNR of the PET prediction against ground truth."""
    records = []
    for sid in sorted(subject_ids):
        rec = handle.subject(sid)
        batch = Batch(
            asl=torch.from_numpy(rec.slices[Modality.ASL].pixels).unsqueeze(0),
            t1=torch.from_numpy(rec.slices[Modality.T1].pixels).unsqueeze(0),
            pet=torch.from_numpy(rec.slices[Modality.PET].pixels).unsqueeze(0),
            paired=True,
            subject_ids=[sid],
        )
        pred = predict(net, batch).pet_pred.double()
        gt = batch.pet.double()
        records.append(
            SliceScore(
                subject_id=sid,
                condition=rec.condition,
                ssim=float(losses.ssim(pred, gt)[0]),
                mse=float(losses.mse(pred, gt)),
                psnr=losses.psnr(pred, gt),
            )
        )
    return records


def crossvalidate(
    handle: DatasetHandle,
    k: int,
    ablation: AblationConfig,
    schedule: TrainSchedule,
    model_overrides: dict | None = None,
) -> list:
    """Train one model per fold and score its held-out paired subjects.

    Splits depend only on (paired ids, k, schedule.seed), so every
    ablation row sees identical folds for a given seed.
    """
    splits = fold_splits(handle.paired_ids, k, schedule.seed)
    config = ablation.to_model_config(**(model_overrides or {}))
    results = []
    for fold_id, val_ids in enumerate(splits):
        train_paired = [s for s in handle.paired_ids if s not in val_ids]
        train_handle = handle.subset(train_paired + handle.unpaired_ids)
        fold_seed = int(np.random.SeedSequence([schedule.seed, fold_id]).generate_state(1)[0])
        fold_schedule = replace(schedule, seed=fold_seed)
        net, _ = trainer.train(
            config,
            fold_schedule,
            train_handle,
            train_handle if config.multitask else None,
        )
        records = tuple(score_subjects(net, handle, val_ids))
        results.append(
            FoldResult(
                fold_id=fold_id,
                validation_subjects=tuple(val_ids),
                records=records,
                aggregates=_aggregate(records),
            )
        )
    return results


def anova_rm(values) -> tuple[float, float]:
    """One-way repeated-measures ANOVA on a (subjects x configs) table.

    Returns (F, p) with F referenced against F(k-1, (k-1)(n-1)). A table
    with no treatment variation returns (0, 1); a completely constant
    table carries no signal at all and raises DegenerateInput.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2 or x.shape[0] < 3:
        raise DegenerateInput(f"need >=3 subjects and >=2 configs, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DegenerateInput("missing cells")
    if np.ptp(x) == 0:
        raise DegenerateInput("constant table")
    n, k = x.shape
    grand = x.mean()
    col_means = x.mean(axis=0)
    row_means = x.mean(axis=1)
    ss_treat = n * float(((col_means - grand) ** 2).sum())
    ss_subj = k * float(((row_means - grand) ** 2).sum())
    ss_total = float(((x - grand) ** 2).sum())
    ss_err = max(ss_total - ss_treat - ss_subj, 0.0)
    if ss_treat == 0.0:
        return 0.0, 1.0
    df_treat = k - 1
    df_err = (k - 1) * (n - 1)
    if ss_err == 0.0:
        return float("inf"), 0.0
    f_stat = (ss_treat / df_treat) / (ss_err / df_err)
    return f_stat, float(scipy.stats.f.sf(f_stat, df_treat, df_err))


def ssim_matrix(results_by_config: dict) -> tuple[np.ndarray, list, list]:
    """Per-slice SSIM stacked as (slices x configs); rows ordered by subject id."""
    labels = list(results_by_config)
    per_config = {}
    for label, folds in results_by_config.items():
        scores = {r.subject_id: r.ssim for fold in folds for r in fold.records}
        per_config[label] = scores
    subjects = sorted(next(iter(per_config.values())))
    for label, scores in per_config.items():
        if sorted(scores) != subjects:
            raise DegenerateInput(f"config {label} scored different subjects")
    matrix = np.array([[per_config[lb][s] for lb in labels] for s in subjects], dtype=np.float64)
    return matrix, subjects, labels


def _fmt(mean: float, sd: float, nd: int = 3) -> str:
    if np.isnan(mean):
        return "-"
    return f"{mean:.{nd}f}±{sd:.{nd}f}"


def report(
    results_by_config: dict,
    out_dir,
    *,
    omnibus: tuple[float, float] | None = None,
    contrast_p: dict | None = None,
    param_counts: dict | None = None,
    corpus_digest: str = "",
    run_digest: str = "",
    alpha: float = 0.05,
) -> dict:
    """Emit the machine-readable records file plus plain-text and CSV tables.

    Output is a pure function of the inputs (no timestamps), so identical
    runs regenerate byte-identical files.
    """
    out_dir = Path(out_dir)
    contrast_p = contrast_p or {}
    param_counts = param_counts or {}
    suffix = f"{corpus_digest[:8] or 'corpus'}_{run_digest[:8] or 'run'}"
    paths = {
        "records": out_dir / f"ablation_records_{suffix}.jsonl",
        "table": out_dir / f"ablation_table_{suffix}.txt",
        "csv": out_dir / f"ablation_table_{suffix}.csv",
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)

        lines = [
            json.dumps(
                {
                    "magic": "PSREPORT",
                    "version": 1,
                    "corpus_digest": corpus_digest,
                    "run_digest": run_digest,
                    "alpha": alpha,
                    "omnibus_F": None if omnibus is None else omnibus[0],
                    "omnibus_p": None if omnibus is None else omnibus[1],
                },
                sort_keys=True,
            )
        ]
        for label, folds in results_by_config.items():
            all_records = [r for fold in folds for r in fold.records]
            agg = _aggregate(all_records)
            lines.append(
                json.dumps(
                    {
                        "kind": "aggregate",
                        "config": label,
                        "params": param_counts.get(label),
                        "contrast_p": contrast_p.get(label),
                        "aggregates": agg,
                    },
                    sort_keys=True,
                )
            )
            for fold in folds:
                for r in fold.records:
                    lines.append(
                        json.dumps(
                            {
                                "kind": "slice",
                                "config": label,
                                "fold": fold.fold_id,
                                "subject": r.subject_id,
                                "condition": r.condition,
                                "ssim": r.ssim,
                                "mse": r.mse,
                                "psnr": r.psnr,
                            },
                            sort_keys=True,
                        )
                    )
        paths["records"].write_text("\n".join(lines) + "\n")

        header = [
            "Cross-validated PET synthesis metrics (mean±sd per condition; per-slice scores)",
            f"corpus={corpus_digest} run={run_digest}",
            "conditions: activated=" + CONDITION_ALIASES["activated"]
            + ", resting=" + CONDITION_ALIASES["resting"],
            "significance: '*' marks configs whose per-slice SSIM differs from the",
            f"reference {REFERENCE.label} by a two-condition repeated-measures contrast",
            f"(one-way RM ANOVA on the slice x {{config, reference}} table) at p<{alpha};",
            "the omnibus one-way RM ANOVA over all configs is reported below.",
        ]
        if omnibus is not None:
            header.append(f"omnibus: F={omnibus[0]:.6g} p={omnibus[1]:.6g}")
        col_names = ["config", "params"]
        for condition in CONDITIONS:
            for metric in ("ssim", "mse", "psnr"):
                col_names.append(f"{condition[:3]}_{metric}")
        rows = []
        for label, folds in results_by_config.items():
            all_records = [r for fold in folds for r in fold.records]
            agg = _aggregate(all_records)
            star = "*" if contrast_p.get(label, 1.0) < alpha and label != REFERENCE.label else ""
            row = [label + star, str(param_counts.get(label, "-"))]
            for condition in CONDITIONS:
                for metric, nd in (("ssim", 3), ("mse", 4), ("psnr", 1)):
                    mean, sd, _ = agg[condition][metric]
                    row.append(_fmt(mean, sd, nd))
            rows.append(row)
        col_w = [max(len(r[i]) for r in rows + [col_names]) for i in range(len(col_names))]
        table_lines = header + [""]
        table_lines.append("  ".join(name.ljust(w) for name, w in zip(col_names, col_w)))
        table_lines.append("  ".join("-" * w for w in col_w))
        for row in rows:
            table_lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, col_w)))
        paths["table"].write_text("\n".join(table_lines) + "\n")

        csv_lines = [",".join(col_names)]
        for row in rows:
            csv_lines.append(",".join(row))
        paths["csv"].write_text("\n".join(csv_lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write report under {out_dir}: {exc}") from exc
    return paths


def run_ablation(
    handle: DatasetHandle,
    k: int,
    schedule: TrainSchedule,
    out_dir,
    *,
    rows: tuple = TABLE_ROWS,
    model_overrides: dict | None = None,
    corpus_digest: str = "",
    run_digest: str = "",
) -> dict:
    """Cross-validate every ablation row, test significance, emit the report."""
    results_by_config = {}
    param_counts = {}
    for ablation in rows:
        results_by_config[ablation.label] = crossvalidate(
            handle, k, ablation, schedule, model_overrides=model_overrides
        )
        cfg = ablation.to_model_config(**(model_overrides or {}))
        param_counts[ablation.label] = count_parameters(build(cfg, seed=0))

    matrix, _, labels = ssim_matrix(results_by_config)
    omnibus = anova_rm(matrix) if matrix.shape[1] >= 2 and matrix.shape[0] >= 3 else None

    contrast_p = {}
    if REFERENCE.label in labels and matrix.shape[0] >= 3:
        ref_col = labels.index(REFERENCE.label)
        for j, label in enumerate(labels):
            if j == ref_col:
                continue
            pair = matrix[:, [j, ref_col]]
            try:
                _, p = anova_rm(pair)
            except DegenerateInput:
                p = 1.0
            contrast_p[label] = p

    return report(
        results_by_config,
        out_dir,
        omnibus=omnibus,
        contrast_p=contrast_p,
        param_counts=param_counts,
        corpus_digest=corpus_digest,
        run_digest=run_digest,
    )
