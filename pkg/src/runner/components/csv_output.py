import logging
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["t", "pipeline", "node", "sq_error", "msd", "sigma2_hat"]
FLOAT_FORMAT = "%.17g"


def rows_to_frame(rows):
    """One line per (t, pipeline, node), sorted on those three keys."""
    records = [
        (row.t, row.pipeline, k, sq_error, row.msd, sigma2)
        for row in rows
        for k, (sq_error, sigma2) in enumerate(zip(row.sq_errors, row.sigma2_hat), start=1)
    ]
    frame = pd.DataFrame.from_records(records, columns=CSV_COLUMNS)
    return frame.sort_values(["t", "pipeline", "node"], kind="mergesort").reset_index(drop=True)


def emit_csv(rows, path):
    """Write ``rows`` as CSV; I/O failures are re-raised naming the path."""
    path = Path(path)
    frame = rows_to_frame(rows)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
    logger.info("wrote %d metric lines to %s", len(frame), path)
    return path


def summarize(batch):
    """Final-step MSD per seed and pipeline, with a closing ``median`` row."""
    records = {seed: result.final_msd() for seed, result in batch.items()}
    frame = pd.DataFrame.from_dict(records, orient="index").sort_index()
    frame.index = [str(seed) for seed in frame.index]
    frame = frame[sorted(frame.columns)]
    frame.loc["median"] = frame.median()
    frame.index.name = "seed"
    return frame


def emit_summary(batch, path):
    path = Path(path)
    try:
        summarize(batch).to_csv(path, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as exc:
        raise OSError(f"cannot write summary to {path}: {exc}") from exc
    logger.info("wrote seed summary to %s", path)
    return path
