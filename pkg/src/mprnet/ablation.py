"""Toy-scale architecture grid: stage count, supervised attention and cross-stage fusion."""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .metrics import MetricReport
from .models.config import RunConfig
from .training import run_training

logger = logging.getLogger(__name__)

# (label, model overrides); every cell shares seed, data and iterations
ABLATION_CELLS = [
    ("1 stage", {"n_stages": 1}),
    ("3 stages", {"n_stages": 3, "use_sam": False, "use_csff": False}),
    ("3 stages + CSFF", {"n_stages": 3, "use_sam": False, "use_csff": True}),
    ("3 stages + SAM", {"n_stages": 3, "use_sam": True, "use_csff": False}),
    ("3 stages + SAM + CSFF", {"n_stages": 3, "use_sam": True, "use_csff": True}),
]
FULL_TOLERANCE_DB = 0.1


def slugify(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", label.lower()).strip("_")


@dataclass
class AblationCell:
    label: str
    overrides: Dict[str, object]
    report: MetricReport
    params: int

    @property
    def slug(self) -> str:
        return slugify(self.label)


@dataclass
class AblationResult:
    cells: List[AblationCell] = field(default_factory=list)
    baseline: Optional[MetricReport] = None

    def cell(self, label: str) -> AblationCell:
        for cell in self.cells:
            if cell.label == label:
                return cell
        raise KeyError(label)

    @property
    def gates(self) -> Dict[str, bool]:
        """The two hard checks: three stages beat one, full model within tolerance of the bare one."""
        one = self.cell("1 stage").report.psnr
        bare = self.cell("3 stages").report.psnr
        full = self.cell("3 stages + SAM + CSFF").report.psnr
        return {
            "3 stages >= 1 stage": full >= one,
            f"SAM + CSFF >= bare - {FULL_TOLERANCE_DB} dB": full >= bare - FULL_TOLERANCE_DB,
        }

    @property
    def passed(self) -> bool:
        return all(self.gates.values())


def run_ablation(config: RunConfig, out_dir: Optional[Path] = None, progress: bool = True,
                 workers: int = 1) -> AblationResult:
    """Train every grid cell with ``config``'s iterations and report final-stage validation metrics."""
    result = AblationResult()
    for label, overrides in ABLATION_CELLS:
        cell_config = config.model_copy(deep=True)
        cell_config.model = cell_config.model.model_copy(update=overrides)
        cell_dir = None
        if out_dir is not None:
            cell_dir = Path(out_dir) / slugify(label)
        logger.info("Ablation cell '%s'", label)
        trained = run_training(cell_config, cell_dir, progress=progress, workers=workers, write_artifacts=False)
        result.baseline = trained.baseline
        result.cells.append(AblationCell(label, dict(overrides), trained.reports[-1], trained.model.param_count()))
    if out_dir is not None:
        from .generator import ReportGenerator

        ReportGenerator(Path(out_dir)).write_ablation_report(config, result)
    return result
