import logging
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)

TEMPLATE = '''"""MSD learning curves for {csv_name} (generated; run with python)."""
from pathlib import Path

import pandas as pd
import plotly.express as px

here = Path(__file__).resolve().parent
metrics = pd.read_csv(here / "{csv_name}")
pipelines = {pipelines!r}

curves = (
    metrics[metrics["pipeline"].isin(pipelines)]
    .groupby(["pipeline", "t"], as_index=False)["msd"]
    .first()
)
fig = px.line(
    curves,
    x="t",
    y="msd",
    color="pipeline",
    log_y=True,
    title="Network mean-square deviation",
    labels={{"t": "time step", "msd": "MSD"}},
)
fig.write_html(here / "{html_name}")
fig.show()
'''


def emit_plot_script(csv_path, script_path=None):
    """Write a plotly script charting MSD against t, one curve per pipeline.

    The script sits next to the CSV and refers to it by file name only.
    """
    csv_path = Path(csv_path)
    if script_path is None:
        script_path = csv_path.with_name(f"plot_{csv_path.stem}.py")
    script_path = Path(script_path)
    pipelines = sorted(pd.read_csv(csv_path, usecols=["pipeline"])["pipeline"].unique())
    source = TEMPLATE.format(
        csv_name=csv_path.name,
        html_name=f"{csv_path.stem}_msd.html",
        pipelines=[str(p) for p in pipelines],
    )
    try:
        script_path.write_text(source)
    except OSError as exc:
        raise OSError(f"cannot write plot script to {script_path}: {exc}") from exc
    logger.info("wrote plot script %s", script_path)
    return script_path
