from __future__ import annotations

"""
Batch evaluation over fixture directories.

Circle suite: detect_circle with both fit methods on every fixture,
circle_param_rmse against the truth record; gated fixtures are counted as
failures and never enter the RMSE aggregate.

Shape suite: fit_shape on every fixture, point_to_curve_rmse against the
truth outline plus convergence statistics.

Clean and occluded fixtures are aggregated as separate strata.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import pandas as pd

import env
from config import CircleDetectConfig, MorphConfig
from core.errors import DeepMorphError
from core.metrics import circle_param_rmse, point_to_curve_rmse
from core.types import PointSet
from fitting.circle import FitMethod, detect_circle
from fitting.morph import fit_shape
from fitting.pdm import PointDistributionModel
from storage.repo import Fixture, FixtureRepo

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ["fixture_id", "stratum", "method", "metric", "value"]
FAILURE_COLUMNS = ["fixture_id", "stratum", "method", "reason"]
AGGREGATES = ["mean", "median", "max", "count"]


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    """
    Per-case records (one metric value per row) and failures (no detection,
    or a fit that raised, recorded by its error reason). Aggregates are
    always derived from the records.
    """
    records: pd.DataFrame
    failures: pd.DataFrame

    @classmethod
    def from_rows(cls, records: List[Tuple], failures: List[Tuple]) -> "EvaluationReport":
        rec = pd.DataFrame(records, columns=RECORD_COLUMNS)
        rec["value"] = rec["value"].astype(float)
        return cls(rec, pd.DataFrame(failures, columns=FAILURE_COLUMNS))

    def aggregates(self) -> pd.DataFrame:
        if self.records.empty:
            return pd.DataFrame(columns=["stratum", "method", "metric"] + AGGREGATES)
        grouped = self.records.groupby(["stratum", "method", "metric"], sort=True)["value"]
        return grouped.agg(AGGREGATES).reset_index()

    def failure_counts(self) -> pd.DataFrame:
        if self.failures.empty:
            return pd.DataFrame(columns=["stratum", "method", "reason", "count"])
        return (self.failures.groupby(["stratum", "method", "reason"], sort=True)
                .size().rename("count").reset_index())

    def mean(self, metric: str, stratum: str = "clean", method: Optional[str] = None) -> float:
        sel = (self.records["metric"] == metric) & (self.records["stratum"] == stratum)
        if method is not None:
            sel &= self.records["method"] == method
        return float(self.records.loc[sel, "value"].mean())

    # -------------------------
    # Output
    # -------------------------
    def write_records(self, path) -> None:
        self.records.to_csv(path, sep=" ", header=False, index=False, float_format="%.17g")

    def write_summary(self, path) -> None:
        lines = []
        for stratum, method, metric, mean, median, top, count in self.aggregates().itertuples(index=False):
            lines.append(f"{stratum} {method} {metric} {mean:.17g} {median:.17g} {top:.17g} {int(count)}")
        for stratum, method, reason, count in self.failure_counts().itertuples(index=False):
            lines.append(f"{stratum} {method} failure:{reason} {int(count)}")
        Path(path).write_text("".join(line + "\n" for line in lines))


def _map_fixtures(fn, fixtures: List[Fixture], threads: Optional[int]):
    with ThreadPoolExecutor(max_workers=threads or env.DEEPMORPH_THREADS) as pool:
        return list(pool.map(fn, fixtures))


def evaluate_circle_suite(
    fixtures_dir,
    config: CircleDetectConfig = CircleDetectConfig(),
    threads: Optional[int] = None,
) -> EvaluationReport:
    repo = FixtureRepo(fixtures_dir)
    fixtures = repo.circle_fixtures()

    def run(fx: Fixture):
        cmap = repo.load_cmap(fx)
        truth = repo.load_circle(fx)
        records, failures = [], []
        for method in FitMethod:
            det = detect_circle(cmap, config.tau, config.min_foreground, config.geometric, method)
            if not det.detected:
                failures.append((fx.fixture_id, fx.stratum, method.value, det.reason.value))
                continue
            records.append((fx.fixture_id, fx.stratum, method.value, "circle_rmse",
                            circle_param_rmse(det.circle, truth)))
            records.append((fx.fixture_id, fx.stratum, method.value, "cost", det.cost))
        return records, failures

    results = _map_fixtures(run, fixtures, threads)
    report = EvaluationReport.from_rows([r for rec, _ in results for r in rec],
                                        [f for _, fail in results for f in fail])
    logger.info("circle suite: %d fixtures, %d failures", len(fixtures), len(report.failures))
    return report


def evaluate_shape_suite(
    fixtures_dir,
    model: PointDistributionModel,
    config: MorphConfig = MorphConfig(),
    threads: Optional[int] = None,
) -> EvaluationReport:
    repo = FixtureRepo(fixtures_dir)
    fixtures = repo.shape_fixtures()
    method = "morph"

    def run(fx: Fixture):
        cmap = repo.load_cmap(fx)
        truth = repo.load_outline(fx)
        try:
            # restarts run serially inside a fixture; fixtures are the parallel unit
            result = fit_shape(model, cmap, config, threads=1)
        except DeepMorphError as e:
            logger.warning("fixture %s failed: %s", fx.fixture_id, e)
            return [], [(fx.fixture_id, fx.stratum, method, e.reason)]
        rmse = point_to_curve_rmse(PointSet(result.shape.xy), truth)
        return [
            (fx.fixture_id, fx.stratum, method, "point_to_curve_rmse", rmse),
            (fx.fixture_id, fx.stratum, method, "iterations", float(result.iterations_used)),
            (fx.fixture_id, fx.stratum, method, "converged", float(result.converged)),
            (fx.fixture_id, fx.stratum, method, "final_movement", result.final_movement),
        ], []

    results = _map_fixtures(run, fixtures, threads)
    report = EvaluationReport.from_rows([r for rec, _ in results for r in rec],
                                        [f for _, fail in results for f in fail])
    logger.info("shape suite: %d fixtures, %d failures", len(fixtures), len(report.failures))
    return report
