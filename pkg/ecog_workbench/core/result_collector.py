"""
Result Collector

Rebuilds the cross-method summary from a finished results directory:
- Scan <results>/<method>/dayNN_confusion.csv for every known method
- Recover each day's recording condition from dayNN_result.json
- Aggregate into an AggregateReport and write summary.json

Used by the `report` command, so summaries can be regenerated without
decoding again.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

from ..config import METHODS
from ..errors import DataError
from ..utils.io_utils import ensure_directory, read_json
from .evaluation import AggregateReport, ConfusionReport, aggregate_report, read_confusion_csv, write_summary_json

logger = logging.getLogger(__name__)

CONFUSION_PATTERN = re.compile(r"^day(\d+)_confusion\.csv$")


@dataclass
class CollectionResult:
    """Confusion reports found under a results directory"""
    per_day: Dict[str, Dict[int, ConfusionReport]] = field(default_factory=dict)
    conditions: Dict[int, str] = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)

    @property
    def methods(self) -> List[str]:
        return [m for m in METHODS if m in self.per_day]


class ResultCollector:
    """
    Collects per-day confusion reports written by the experiment engine

    Strategy:
    1. Visit one sub-directory per known method
    2. Parse every dayNN_confusion.csv (day id from the file name)
    3. Read the matching dayNN_result.json for the condition, if present
    """

    def __init__(self, results_dir: Union[str, Path]):
        """
        Initialize the collector

        Args:
            results_dir: Directory written by `run` or `decode`
        """
        self.results_dir = Path(results_dir)

    def collect(self) -> CollectionResult:
        """
        Read every confusion report under the results directory

        Raises:
            DataError: If the directory is missing or holds no reports
        """
        if not self.results_dir.is_dir():
            raise DataError(f"results directory {self.results_dir} does not exist")

        found = CollectionResult()
        for method in METHODS:
            method_dir = self.results_dir / method
            if not method_dir.is_dir():
                continue
            for path in sorted(method_dir.iterdir()):
                match = CONFUSION_PATTERN.match(path.name)
                if match is None:
                    continue
                day_id = int(match.group(1))
                found.per_day.setdefault(method, {})[day_id] = read_confusion_csv(path)
                found.files.append(path)
                condition = self._condition(method_dir / f"day{match.group(1)}_result.json")
                if condition is not None:
                    found.conditions[day_id] = condition

        if not found.files:
            raise DataError(f"no confusion reports found in {self.results_dir}")
        logger.info(
            f"[ResultCollector] found {len(found.files)} reports for "
            f"{', '.join(found.methods)} in {self.results_dir}"
        )
        return found

    def _condition(self, path: Path) -> Optional[str]:
        if not path.exists():
            return None
        try:
            return read_json(path).get("condition")
        except (DataError, AttributeError):
            logger.warning(f"[ResultCollector] ignoring unreadable {path}")
            return None

    def summarize(self, out: Optional[Union[str, Path]] = None) -> AggregateReport:
        """
        Aggregate the collected reports

        Args:
            out: summary.json path (not written if None)

        Returns:
            AggregateReport across all collected days and methods
        """
        found = self.collect()
        summary = aggregate_report(found.per_day, found.methods, found.conditions)
        if out is not None:
            target = Path(out)
            ensure_directory(target.parent)
            write_summary_json(summary, target)
            logger.info(f"[ResultCollector] summary written to {target}")
        return summary
