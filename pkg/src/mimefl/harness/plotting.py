"""Static SVG convergence plots.

SVG output is made byte-stable by fixing matplotlib's id salt and dropping
the creation date from the metadata. Values are clipped to [1e-32, 1e32] so
exact zeros and runaway runs still fit on a log axis.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import ResultTable  # noqa: E402

_FLOOR, _CEIL = 1e-32, 1e32

METRICS = (
    ("f_gap", "f(x) - f*", lambda r, f_star: r.f_value - f_star),
    ("grad_norm_sq", "|grad f(x)|^2", lambda r, f_star: r.grad_norm_sq),
)


def emit_plot(table: ResultTable, path) -> list[Path]:
    """Write one SVG per metric into directory ``path``; returns the file paths."""
    if not table.rows:
        raise ValueError("cannot plot an empty table")
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with plt.rc_context({"svg.hashsalt": "mimefl", "svg.fonttype": "none"}):
        for stem, ylabel, metric in METRICS:
            fig, ax = plt.subplots(figsize=(6, 4))
            for algo in table.algos:
                rows = table.series(algo)
                if not rows:
                    continue
                t = np.array([r.t for r in rows])
                y = np.clip(np.array([metric(r, table.f_star) for r in rows]), _FLOOR, _CEIL)
                ax.semilogy(t, y, label=algo)
            ax.set_xlabel("round")
            ax.set_ylabel(ylabel)
            ax.legend(fontsize="small")
            fig.tight_layout()
            target = out_dir / f"{stem}.svg"
            fig.savefig(target, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(target)
    return written
