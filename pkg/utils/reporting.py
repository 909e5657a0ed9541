import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SVG_WIDTH = 640
SVG_HEIGHT = 420
SVG_MARGIN = 50


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class Manifest:
    """Outputs of one run, written as MANIFEST next to them."""
    out_dir: Path
    config_digest: str
    entries: list = field(default_factory=list)

    def write_csv(self, df: pd.DataFrame, filename: str) -> Path:
        """DataFrame.to_csv preceded by the provenance comment line."""
        path = Path(self.out_dir) / filename
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            handle.write(f"# config-digest: {self.config_digest}\n")
            df.to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")
        self.entries.append(path)
        logger.info("wrote %s (%d rows)", path, len(df))
        return path

    def write_svg(self, filename: str, x, data, fit=None, title: str = "") -> Path:
        path = Path(self.out_dir) / filename
        path.write_text(fit_plot_svg(x, data, fit, title))
        self.entries.append(path)
        return path

    def close(self, complete: bool = True, error=None) -> Path:
        lines = [f"config-digest: {self.config_digest}", f"complete: {str(complete).lower()}"]
        if error is not None:
            lines.append(f"error: {type(error).__name__}: {error}")
            for key, value in getattr(error, "payload", {}).items():
                lines.append(f"payload.{key}: {value!r}")
        for entry in self.entries:
            lines.append(f"{file_digest(entry)}  {entry.name}")
        path = Path(self.out_dir) / "MANIFEST"
        path.write_text("\n".join(lines) + "\n")
        return path


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def _polyline(px, py, color: str) -> str:
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py) if np.isfinite(x) and np.isfinite(y))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>'


def fit_plot_svg(x, data, fit=None, title: str = "") -> str:
    """|data| and |fit| against x on log-log axes as a standalone SVG document."""
    x = np.log10(np.asarray(x, dtype=float))
    series = [np.log10(np.maximum(np.abs(np.asarray(data)), 1e-300))]
    if fit is not None:
        series.append(np.log10(np.maximum(np.abs(np.asarray(fit)), 1e-300)))
    y_lo = min(s.min() for s in series)
    y_hi = max(s.max() for s in series)
    span_x = max(x.max() - x.min(), 1e-12)
    span_y = max(y_hi - y_lo, 1e-12)

    def to_px(values):
        return SVG_MARGIN + (values - x.min()) / span_x * (SVG_WIDTH - 2 * SVG_MARGIN)

    def to_py(values):
        return SVG_HEIGHT - SVG_MARGIN - (values - y_lo) / span_y * (SVG_HEIGHT - 2 * SVG_MARGIN)

    body = [
        f'<rect x="{SVG_MARGIN}" y="{SVG_MARGIN}" width="{SVG_WIDTH - 2 * SVG_MARGIN}" '
        f'height="{SVG_HEIGHT - 2 * SVG_MARGIN}" fill="none" stroke="#888"/>',
        f'<text x="{SVG_WIDTH / 2}" y="{SVG_MARGIN / 2}" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{SVG_MARGIN}" y="{SVG_HEIGHT - 15}" font-size="11">log10 x: [{x.min():.2f}, {x.max():.2f}]</text>',
        f'<text x="{SVG_WIDTH - SVG_MARGIN}" y="{SVG_HEIGHT - 15}" text-anchor="end" font-size="11">'
        f'log10 |y|: [{y_lo:.2f}, {y_hi:.2f}]</text>',
        _polyline(to_px(x), to_py(series[0]), "#1f77b4"),
    ]
    if fit is not None:
        body.append(_polyline(to_px(x), to_py(series[1]), "#d62728"))
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}">\n'
            + "\n".join(body) + "\n</svg>\n")
