"""Renders metric tables, run directories and ablation reports."""

import hashlib
import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from jinja2 import Environment, FileSystemLoader, select_autoescape  # noqa: E402

from . import __version__  # noqa: E402
from .errors import UsageError  # noqa: E402
from .metrics import MetricReport, best_report, error_reduction_psnr, error_reduction_ssim, format_db  # noqa: E402
from .models.config import RunConfig  # noqa: E402
from .parser import dump_config  # noqa: E402

if TYPE_CHECKING:
    from .ablation import AblationResult
    from .training import TrainLog, TrainResult

logger = logging.getLogger(__name__)


def _percent(value: Optional[float]) -> str:
    return "-" if value is None else f"{100.0 * value:.1f}%"


def reduction_columns(report: MetricReport, best: MetricReport) -> Dict[str, str]:
    """Error reduction that ``best`` achieves over ``report``, as printed percentages."""
    if math.isinf(report.psnr) and math.isinf(best.psnr):
        psnr_red: Optional[float] = 0.0
    else:
        psnr_red = error_reduction_psnr(report.psnr, best.psnr)
    try:
        ssim_red: Optional[float] = error_reduction_ssim(report.ssim, best.ssim)
    except UsageError:
        ssim_red = None
    return {"psnr_reduction": _percent(psnr_red), "ssim_reduction": _percent(ssim_red)}


class ReportGenerator:
    """Write human-readable artifacts through the package's jinja2 templates."""

    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir)

        template_dir = Path(__file__).parent / "templates"
        self.jinja_env = Environment(
            loader=FileSystemLoader(template_dir),
            autoescape=select_autoescape(),
            trim_blocks=True,
            lstrip_blocks=True,
        )

    # ------------------------------------------------------------ tables

    def _table_rows(self, reports: List[MetricReport], baseline: Optional[MetricReport]) -> List[Dict[str, Any]]:
        best = best_report(reports)
        rows = []
        for report in ([baseline] if baseline is not None else []) + list(reports):
            row = {
                "label": "input" if report.stage == 0 else f"stage {report.stage}",
                "psnr": format_db(report.psnr),
                "ssim": f"{report.ssim:.4f}",
                "best": report is best,
            }
            row.update(reduction_columns(report, best))  # type: ignore[arg-type]
            rows.append(row)
        return rows

    def render_metric_table(self, reports: List[MetricReport], baseline: Optional[MetricReport] = None) -> str:
        """Per-stage PSNR/SSIM with error reduction of the best stage over each row."""
        if not reports:
            raise UsageError("render_metric_table: no reports")
        template = self.jinja_env.get_template("metric_table.txt.jinja2")
        return template.render(
            rows=self._table_rows(reports, baseline),
            evaluated_on=reports[0].evaluated_on,
            images=reports[0].images,
        )

    # ------------------------------------------------------- run directory

    def write_run(self, config: RunConfig, result: "TrainResult") -> Dict[str, Path]:
        """Write config.cfg, manifest.json, loss_curve.png and README.md next to the logs."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        generated = {
            "config": self._write_config(config),
            "manifest": self._write_manifest(config, result),
            "loss_curve": self.write_loss_curve(result.log),
        }
        generated["readme"] = self._write_run_readme(config, result)
        logger.info("Run artifacts written to %s", self.output_dir)
        return generated

    def _write_config(self, config: RunConfig) -> Path:
        output_file = self.output_dir / "config.cfg"
        output_file.write_text(dump_config(config), encoding="utf-8")
        return output_file

    def _write_manifest(self, config: RunConfig, result: "TrainResult") -> Path:
        manifest = {
            "generated_at": datetime.now().isoformat(),
            "package_version": __version__,
            "config_hash": self._calculate_config_hash(config),
            "param_count": result.model.param_count(),
            "iterations": len(result.log.records),
            "best_validation_psnr": result.log.best_psnr,
            "best_iteration": result.log.best_iteration,
            "final_metrics": [vars(r) for r in result.reports],
            "input_metrics": vars(result.baseline),
        }
        output_file = self.output_dir / "manifest.json"
        output_file.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        return output_file

    def write_loss_curve(self, log: "TrainLog") -> Path:
        output_file = self.output_dir / "loss_curve.png"
        fig, ax = plt.subplots(figsize=(6, 4))
        iterations = [r.iteration for r in log.records]
        ax.semilogy(iterations, log.losses, linewidth=1.0, label="training loss")
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        if log.validations:
            twin = ax.twinx()
            twin.plot([v.iteration for v in log.validations], [v.final_psnr for v in log.validations],
                      "o-", color="tab:orange", label="validation PSNR")
            twin.set_ylabel("PSNR (dB)")
        ax.set_title("Training curve")
        fig.tight_layout()
        fig.savefig(output_file, dpi=100)
        plt.close(fig)
        return output_file

    def _write_run_readme(self, config: RunConfig, result: "TrainResult") -> Path:
        template = self.jinja_env.get_template("run_readme.md.jinja2")
        content = template.render(
            config=config,
            param_count=result.model.param_count(),
            iterations=len(result.log.records),
            best_psnr=result.log.best_psnr,
            best_iteration=result.log.best_iteration,
            table=self.render_metric_table(result.reports, result.baseline),
            config_hash=self._calculate_config_hash(config),
            version=__version__,
        )
        output_file = self.output_dir / "README.md"
        output_file.write_text(content, encoding="utf-8")
        return output_file

    # ------------------------------------------------------------ ablation

    def write_ablation_report(self, config: RunConfig, result: "AblationResult") -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        template = self.jinja_env.get_template("ablation_report.md.jinja2")
        content = template.render(
            config=config,
            cells=result.cells,
            baseline=result.baseline,
            gates=result.gates,
            passed=result.passed,
            format_db=format_db,
            config_hash=self._calculate_config_hash(config),
        )
        output_file = self.output_dir / "ablation.md"
        output_file.write_text(content, encoding="utf-8")
        logger.info("Ablation report written to %s", output_file)
        return output_file

    def _calculate_config_hash(self, config: RunConfig) -> str:
        """Calculate deterministic hash of the run configuration."""
        config_json = json.dumps(config.model_dump(), sort_keys=True)
        return hashlib.sha256(config_json.encode()).hexdigest()[:16]
