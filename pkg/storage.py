"""
Result storage - the single place experiment artifacts touch the disk.

- report.json and data.csv are always written
- plot.svg only for scans with plotting enabled
- report.xlsx only when requested
Files are rendered in memory first and written in one pass at the end of a run.
"""
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from services.errors import ConfigError
from services.event_log import log_app_event
from services.report_engine import ReportEngine


@dataclass
class ScanSeries:
    T_values: List[float]
    errors: List[float]
    envelope_constant: Optional[float] = None


@dataclass
class ExperimentOutput:
    experiment: str
    report: Dict[str, Any]
    csv_header: List[str]
    csv_rows: List[Sequence[Any]] = field(default_factory=list)
    scan: Optional[ScanSeries] = None


class ResultStore:
    """Writes one experiment's artifacts into ``out_dir``."""

    def __init__(self, out_dir: str, engine: Optional[ReportEngine] = None):
        self.out_dir = out_dir
        self.engine = engine or ReportEngine()

    def render(self, output: ExperimentOutput, plot: bool = False, xlsx: bool = False) -> Dict[str, bytes]:
        files = {
            "report.json": self.engine.render_json(output.report),
            "data.csv": self.engine.render_csv(output.csv_header, output.csv_rows),
        }
        if plot and output.scan is not None:
            files["plot.svg"] = self.engine.render_svg(
                output.scan.T_values,
                output.scan.errors,
                output.scan.envelope_constant,
                title=f"{output.experiment}: error vs T",
            )
        if xlsx:
            files["report.xlsx"] = self.engine.render_xlsx(output.csv_header, output.csv_rows, output.report)
        return files

    def write(self, output: ExperimentOutput, plot: bool = False, xlsx: bool = False) -> List[str]:
        files = self.render(output, plot, xlsx)
        try:
            os.makedirs(self.out_dir, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create output directory '{self.out_dir}': {e}")
        written = []
        for name in sorted(files):
            path = os.path.join(self.out_dir, name)
            with open(path, "wb") as f:
                f.write(files[name])
            written.append(path)
        log_app_event("INFO", "STORAGE", f"wrote {', '.join(sorted(files))} to {self.out_dir}")
        return written
