"""Command handlers for generate, solve and experiment."""
import logging
from typing import Dict, List

from app.core.schemas import RunConfig
from app.services.artifacts import ArtifactWriter, build_manifest
from app.services.experiments import experiment_service
from app.services.geometry import sample_cloud
from app.services.partition import build_transport
from app.services.solver import solve_dpp

logger = logging.getLogger(__name__)


def cmd_generate(config: RunConfig) -> Dict[str, List[str]]:
    """Sample the cloud and, unless disabled, build and dump its partition."""
    domain = config.domain.build()
    density = config.density.build(domain)
    cloud = sample_cloud(domain, density, config.cloud.n, config.seed)
    writer = ArtifactWriter(config.output_dir)
    files = writer.write_cloud(cloud)
    if config.partition.enabled:
        partition = config.partition
        delta = partition.delta or config.operator.epsilon ** 1.5
        tmap = build_transport(cloud, delta, partition.exponent_a, partition.c0, partition.fallback)
        files += writer.write_partition(tmap)
    return {"files": files}


def cmd_solve(config: RunConfig) -> Dict:
    """Solve the configured problem; non-convergence is reported, not raised."""
    domain = config.domain.build()
    density = config.density.build(domain)
    cloud = sample_cloud(domain, density, config.cloud.n, config.seed)
    solution, report = solve_dpp(cloud, config.problem_spec(domain.dim))
    files = ArtifactWriter(config.output_dir).write_solution(solution, report)
    return {"files": files, "converged": report.converged}


def cmd_experiment(config: RunConfig) -> Dict:
    """Run the named experiment and write its table, manifest and summary."""
    report = experiment_service.run(config)
    manifest = build_manifest(report, config.config_hash(), config.seed)
    files = ArtifactWriter(config.output_dir).write_experiment(report, manifest)
    if not report.passed:
        logger.warning(f"Experiment '{report.name}' failed criteria: {[k for k, ok in report.criteria.items() if not ok]}")
    return {"files": files, "passed": report.passed}


COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "experiment": cmd_experiment,
}
