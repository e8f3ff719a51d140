"""Toggle-matrix ablation: train and score every configuration under shared seeds."""

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from scafusion.config import RunConfig
from scafusion.entities.scafusion_model import build_model
from scafusion.entities.scene import SceneSample
from scafusion.services.evaluation_service import EvaluationService
from scafusion.services.scene_generator import generate_samples
from scafusion.services.trainer import TrainerService

logger = logging.getLogger(__name__)

TOGGLE_NAMES = ("cam_align", "aux_branch", "sca", "mona", "camera_branch")

ABLATION_ROWS: dict[str, dict[str, bool]] = {
    "baseline": {},
    "+CAM": {"cam_align": True},
    "+CATB": {"aux_branch": True},
    "+SCA": {"sca": True},
    "+CAM+CATB": {"cam_align": True, "aux_branch": True},
    "+CAM+CATB+SCA": {"cam_align": True, "aux_branch": True, "sca": True},
    "full": {"cam_align": True, "aux_branch": True, "sca": True, "mona": True},
}
FULL_NO_SCA = ("full_no_sca", {"cam_align": True, "aux_branch": True, "mona": True})
EXTENDED_ROWS: dict[str, dict[str, bool]] = {
    "lidar_only": {"camera_branch": False},
    "mona_only": {"mona": True},
}


def row_toggles(overrides: dict[str, bool]) -> dict[str, bool]:
    toggles = {
        "cam_align": False,
        "aux_branch": False,
        "sca": False,
        "mona": False,
        "camera_branch": True,
    }
    toggles.update(overrides)
    return toggles


@dataclass(frozen=True)
class AblationRow:
    name: str
    toggles: dict[str, bool]
    seed: int
    mean_ap: float
    nds: float
    class_ap: dict[str, float | None]
    inference_parameters: int
    fused_stage_parameters: int
    sca_parameters: int


class AblationService:
    """Runs the ablation matrix.

    Args:
        config: Base run configuration; toggles are overridden per row.
        trainer_class: Training service built per configuration.
        evaluation_class: Scoring service built per configuration.
        sample_source: ``(config, count) -> samples`` used when no samples are given.
    """

    def __init__(
        self,
        config: RunConfig,
        trainer_class: type[TrainerService] = TrainerService,
        evaluation_class: type[EvaluationService] = EvaluationService,
        sample_source: Callable[[Any, int], list[SceneSample]] = generate_samples,
    ):
        self.config = config
        self.trainer_class = trainer_class
        self.evaluation_class = evaluation_class
        self.sample_source = sample_source

    def configurations(self) -> dict[str, dict[str, bool]]:
        rows = dict(ABLATION_ROWS)
        rows[FULL_NO_SCA[0]] = FULL_NO_SCA[1]
        if self.config.ablation.extended_rows:
            rows.update(EXTENDED_ROWS)
        return {name: row_toggles(overrides) for name, overrides in rows.items()}

    def run_row(
        self,
        name: str,
        toggles: dict[str, bool],
        seed: int,
        samples: list[SceneSample],
    ) -> AblationRow:
        config = self.config.with_overrides(seed=seed).with_toggles(**toggles)
        model = build_model(config)
        store = model.param_store()
        sca_parameters = store.subset("sca").count()
        fused = store.subset("fuser").count() + sca_parameters
        result = self.trainer_class(config).train(samples, model=model)
        report = self.evaluation_class(config).evaluate(result.model, samples)
        logger.info(
            "ablation %s seed %d: mAP %.4f NDS %.4f",
            name,
            seed,
            report.mean_ap,
            report.nds,
        )
        return AblationRow(
            name=name,
            toggles=toggles,
            seed=seed,
            mean_ap=report.mean_ap,
            nds=report.nds,
            class_ap={label: report.class_ap(label) for label in report.ap},
            inference_parameters=model.inference_parameter_count(),
            fused_stage_parameters=fused,
            sca_parameters=sca_parameters,
        )

    def run(
        self, samples_by_seed: dict[int, list[SceneSample]] | None = None
    ) -> list[AblationRow]:
        """Every configuration for every seed.

        Args:
            samples_by_seed: Training/evaluation samples per seed; generated from
                the scene config with that seed when omitted.
        """
        rows = []
        for seed in self.config.ablation.seeds:
            if samples_by_seed is not None and seed in samples_by_seed:
                samples = samples_by_seed[seed]
            else:
                scene = dataclasses.replace(self.config.scene, seed=seed)
                samples = self.sample_source(scene, self.config.ablation.num_samples)
            for name, toggles in self.configurations().items():
                rows.append(self.run_row(name, toggles, seed, samples))
        return rows


def _mean(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def _overhead(parameters: int, baseline: int | None) -> float | None:
    return (parameters - baseline) / baseline if baseline else None


def summarize(rows: list[AblationRow]) -> tuple[list[dict[str, Any]], dict[str, Any]]:
    """Seed-averaged table rows plus the overhead and Meteor side-by-side summary."""
    names = list(dict.fromkeys(row.name for row in rows))
    grouped = {name: [row for row in rows if row.name == name] for name in names}
    baseline = grouped.get("baseline")
    baseline_params = baseline[0].inference_parameters if baseline else None
    table = []
    for name, group in grouped.items():
        first = group[0]
        entry: dict[str, Any] = {
            "config": name,
            **{t: first.toggles[t] for t in TOGGLE_NAMES},
        }
        entry["mAP"] = _mean([r.mean_ap for r in group])
        entry["NDS"] = _mean([r.nds for r in group])
        for class_name in first.class_ap:
            entry[f"AP_{class_name}"] = _mean([r.class_ap[class_name] for r in group])
        entry["inference_params"] = first.inference_parameters
        entry["overhead_vs_baseline"] = _overhead(
            first.inference_parameters, baseline_params
        )
        entry["seeds"] = len(group)
        table.append(entry)
    summary: dict[str, Any] = {}
    if "full" in grouped and FULL_NO_SCA[0] in grouped:
        full, no_sca = grouped["full"], grouped[FULL_NO_SCA[0]]
        summary["meteor_ap"] = {
            "full": _mean([r.class_ap.get("Meteor") for r in full]),
            FULL_NO_SCA[0]: _mean([r.class_ap.get("Meteor") for r in no_sca]),
            "per_seed": [
                {
                    "seed": a.seed,
                    "full": a.class_ap.get("Meteor"),
                    FULL_NO_SCA[0]: b.class_ap.get("Meteor"),
                }
                for a, b in zip(full, no_sca)
            ],
        }
        summary["sca_fraction_of_fused_stage"] = (
            full[0].sca_parameters / full[0].fused_stage_parameters
        )
        if baseline_params:
            summary["sca_mona_inference_overhead"] = _overhead(
                full[0].inference_parameters, baseline_params
            )
    return table, summary


def write_ablation(rows: list[AblationRow], out_dir: str | Path) -> tuple[Path, Path]:
    """Write ablation.csv (one row per configuration) and ablation_summary.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table, summary = summarize(rows)
    csv_path, json_path = out_dir / "ablation.csv", out_dir / "ablation_summary.json"
    fields: list[str] = []
    for entry in table:
        fields += [k for k in entry if k not in fields]
    with csv_path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        writer.writerows(table)
    json_path.write_text(json.dumps({"rows": table, **summary}, indent=2))
    return csv_path, json_path
