import logging
from pathlib import Path

from estimation.nig import dump_statistics, parameter_covariance, reparameterize

logger = logging.getLogger(__name__)


def covariance_text(stats):
    """Rows of the parameter covariance ``(Lambda / nu) C``, 17 significant digits."""
    covariance = parameter_covariance(reparameterize(stats))
    return "\n".join(" ".join(f"{value:.17g}" for value in row) for row in covariance) + "\n"


def dump_states(final_stats, out_dir, pipeline):
    """Write the statistics of one pipeline under ``states/<pipeline>/``.

    Every ``name`` gets ``<name>.txt`` (the ``n nu`` statistics text) and
    ``<name>_covariance.txt`` (the parameter covariance). Returns the written
    paths, statistics before covariance, names in sorted order.
    """
    directory = Path(out_dir) / "states" / pipeline
    try:
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, stats in sorted(final_stats.items()):
            path = directory / f"{name}.txt"
            path.write_text(dump_statistics(stats))
            covariance = directory / f"{name}_covariance.txt"
            covariance.write_text(covariance_text(stats))
            paths.extend((path, covariance))
    except OSError as exc:
        raise OSError(f"cannot dump statistics to {directory}: {exc}") from exc
    logger.debug("dumped %d statistics to %s", len(final_stats), directory)
    return paths
