"""Byte-stable output files: CSV tables, JSON reports, manifests and summaries."""
import csv
import json
import logging
import math
import os
import subprocess
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader

from app.core.config import settings
from app.core.errors import PuccilabError

logger = logging.getLogger(__name__)

# Setup Jinja2 environment
template_dir = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'templates')
jinja_env = Environment(loader=FileSystemLoader(template_dir), keep_trailing_newline=True)


def format_value(value: Any) -> str:
    """%.12g for floats, plain text otherwise."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.12g" % float(value)
    return str(value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return value
    return value


def git_describe() -> str:
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"], capture_output=True, text=True, timeout=5, check=False
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return result.stdout.strip() or "unknown"


class ArtifactWriter:
    """Writes the files of one run into an output directory."""

    def __init__(self, out_dir: Optional[str] = None):
        self.out_dir = out_dir or settings.output_dir
        try:
            os.makedirs(self.out_dir, exist_ok=True)
        except OSError as e:
            raise PuccilabError(f"Cannot create output directory {self.out_dir}: {e}") from e

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def write_csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        target = self.path(name)
        with open(target, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_value(v) for v in row])
        logger.info(f"Wrote {target}")
        return target

    def write_json(self, name: str, payload: Dict) -> str:
        target = self.path(name)
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")
        logger.info(f"Wrote {target}")
        return target

    def write_cloud(self, cloud) -> List[str]:
        """cloud.csv with index,x1..xN and a JSON sidecar {n, seed, domain, density}."""
        columns = ["index"] + [f"x{k + 1}" for k in range(cloud.dim)]
        rows = ([i] + list(p) for i, p in enumerate(cloud.points))
        return [
            self.write_csv("cloud.csv", columns, rows),
            self.write_json(
                "cloud.json",
                {"n": cloud.n, "seed": cloud.seed, "domain": cloud.domain.describe(), "density": cloud.density.describe()},
            ),
        ]

    def write_partition(self, tmap) -> List[str]:
        hist = tmap.histogram
        payload = tmap.partition_dump()
        payload.update({
            "lambda": tmap.lam,
            "exponent_a": tmap.exponent_a,
            "probability_exponent": tmap.probability_exponent,
            "sup_error": hist.sup_error,
        })
        rows = ([r["cell_id"], r["count"], r["measure"], r["phi_delta"]] for r in hist.rows())
        return [
            self.write_json("partition.json", payload),
            self.write_csv("histogram.csv", ["cell_id", "count", "measure", "phi_delta"], rows),
        ]

    def write_solution(self, solution, report) -> List[str]:
        cloud = solution.cloud
        columns = ["index"] + [f"x{k + 1}" for k in range(cloud.dim)] + ["u"]
        rows = ([i] + list(p) + [v] for i, (p, v) in enumerate(zip(cloud.points, solution.values)))
        return [self.write_csv("solution.csv", columns, rows), self.write_json("report.json", report.to_dict())]

    def write_experiment(self, report, manifest: Dict) -> List[str]:
        files = [
            self.write_csv(f"{report.name}.csv", report.columns, report.rows),
            self.write_json("manifest.json", manifest),
        ]
        if report.extras:
            files.append(self.write_json(f"{report.name}_details.json", report.extras))
        files.append(self.render_summary(report, manifest))
        return files

    def render_summary(self, report, manifest: Dict) -> str:
        template = jinja_env.get_template("experiment_summary.md.j2")
        text = template.render(report=report, manifest=manifest, fmt=format_value)
        target = self.path("summary.md")
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        return target


def build_manifest(report, config_hash: str, seed: int) -> Dict:
    return {
        "experiment": report.name,
        "config_hash": config_hash,
        "seed": seed,
        "git_describe": git_describe(),
        "columns": list(report.columns),
        "criteria": {name: bool(ok) for name, ok in report.criteria.items()},
        "passed": report.passed,
    }
