import logging
import os
import time
from typing import Optional, Tuple

from app.models.analysis import MetricsReport
from app.models.manifest import RunManifest
from app.models.waveforms import WaveformSet
from app.services.analysis_service import compare
from app.utils.app_error import ConfigError
from app.utils.csv_utils import write_csv_atomic
from config import app_config

logger = logging.getLogger(__name__)

HEADER_KEYS = ("scenario", "method", "backend", "h", "scenario_hash")


def parse_tolerance(value: Optional[str]) -> Optional[float]:
    """'2%' or '0.02'."""
    if value is None:
        return None
    text = value.strip()
    tolerance = float(text[:-1]) / 100.0 if text.endswith("%") else float(text)
    if tolerance < 0:
        raise ValueError("Tolerance must be non-negative")
    return tolerance


def resolve_waveform_path(run: str) -> str:
    path = os.path.join(run, app_config.WAVEFORM_FILE) if os.path.isdir(run) else run
    if not os.path.isfile(path):
        raise ConfigError(f"No waveform file at {path}")
    return path


class CompareHandler:
    def __init__(self, output_root: Optional[str] = None):
        self.output_root = output_root or app_config.OUTPUT_ROOT

    def compare(
        self,
        run_a: str,
        run_b: str,
        window: Tuple[float, float],
        tolerance: Optional[float] = None,
        out: Optional[str] = None,
    ) -> MetricsReport:
        """Metrics of run_a against reference run_b. The CSV is written only for a valid comparison."""
        started = time.perf_counter()
        a = WaveformSet.read_csv(resolve_waveform_path(run_a))
        b = WaveformSet.read_csv(resolve_waveform_path(run_b))
        report = compare(a, b, window)
        if not report.valid:
            raise ConfigError(f"Cannot compare: {report.reason}")

        output_dir = out or os.path.join(self.output_root, "compare")
        metrics_path = os.path.join(output_dir, app_config.METRICS_FILE)
        header = {f"{key}_a": a.metadata.get(key, "") for key in HEADER_KEYS}
        header.update({f"{key}_b": b.metadata.get(key, "") for key in HEADER_KEYS})
        header["window"] = f"{window[0]!r}:{window[1]!r}"
        write_csv_atomic(report.to_frame(), metrics_path, header=header)

        exceeding = report.exceeding(tolerance) if tolerance is not None else []
        RunManifest(
            command="compare",
            solver={},
            output_dir=output_dir,
            input_hash=RunManifest.hash_inputs(a.metadata.get("scenario_hash"), b.metadata.get("scenario_hash"), window),
            wall_clock_s=time.perf_counter() - started,
            outputs=[app_config.METRICS_FILE],
            result={"worst_error": report.worst_error(), "tolerance": tolerance, "exceeding": exceeding},
        ).write()
        logger.info(f"Comparison written to {metrics_path} | worst={report.worst_error():.4%}")
        return report
