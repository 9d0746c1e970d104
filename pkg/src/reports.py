"""
Reports Module
CSV and Markdown writers for geometry summaries, DoF counts, quadrature rules,
matrices, residual histories and result tables
"""
import logging
import os
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp

from krylov import SolveReport
from mesh_geometry import ActiveGeometry, geometry_summary_frame
from quadrature import QuadRule

logger = logging.getLogger(__name__)

# Columns holding wall-clock measurements; excluded when comparing reruns
TIMING_COLUMNS = ('wall_time_s', 'dofs_per_s', 'setup_time_s', 'apply_dofs_per_s', 'solve_dofs_per_s')


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_frame(frame: pd.DataFrame, output_dir: str, name: str, markdown: bool = False) -> List[str]:
    """
    Write a table as CSV and optionally as Markdown next to it

    Args:
        frame: Table to write
        output_dir: Target directory (created if missing)
        name: File stem
        markdown: Also write name.md

    Returns:
        Paths written
    """
    ensure_dir(output_dir)
    csv_path = os.path.join(output_dir, f"{name}.csv")
    frame.to_csv(csv_path, index=False)
    paths = [csv_path]
    if markdown:
        md_path = os.path.join(output_dir, f"{name}.md")
        with open(md_path, 'w') as handle:
            handle.write(frame.to_markdown(index=False))
            handle.write('\n')
        paths.append(md_path)
    logger.info(f"Wrote {', '.join(paths)}")
    return paths


def geometry_summary_text(geometries: Iterable[ActiveGeometry]) -> str:
    """Plain-text per-level counts"""
    frame = geometry_summary_frame(list(geometries))
    return frame.to_string(index=False)


def write_geometry_summary(geometries: List[ActiveGeometry], output_dir: str, name: str = 'geometry') -> List[str]:
    frame = geometry_summary_frame(geometries)
    paths = write_frame(frame, output_dir, name)
    txt_path = os.path.join(output_dir, f"{name}.txt")
    with open(txt_path, 'w') as handle:
        handle.write(geometry_summary_text(geometries))
        handle.write('\n')
    return paths + [txt_path]


def write_quadrature_rule(rule: QuadRule, path: str) -> str:
    """Debug dump of one rule with columns x, y, w, nx, ny"""
    ensure_dir(os.path.dirname(path) or '.')
    rule.to_frame().to_csv(path, index=False)
    return path


def write_matrix_triplets(matrix, path: str, threshold: float = 0.0) -> str:
    """
    Write a matrix as 'row col value' lines, one nonzero per line

    Args:
        matrix: Dense array or scipy sparse matrix
        path: Output file
        threshold: Entries with |value| <= threshold are skipped
    """
    coo = sp.coo_matrix(matrix)
    keep = np.abs(coo.data) > threshold
    ensure_dir(os.path.dirname(path) or '.')
    with open(path, 'w') as handle:
        handle.write(f"# {coo.shape[0]} {coo.shape[1]} {int(keep.sum())}\n")
        for r, c, v in zip(coo.row[keep], coo.col[keep], coo.data[keep]):
            handle.write(f"{r} {c} {v:.17e}\n")
    return path


def write_residual_history(report: SolveReport, path: str) -> str:
    ensure_dir(os.path.dirname(path) or '.')
    report.residual_frame().to_csv(path, index=False)
    return path


def reports_frame(reports: List[SolveReport], extra: Optional[List[dict]] = None) -> pd.DataFrame:
    """SolveReport rows, each merged with the matching extra columns"""
    rows = []
    for k, report in enumerate(reports):
        row = dict(extra[k]) if extra else {}
        row.update(report.to_row())
        rows.append(row)
    return pd.DataFrame(rows)


def drop_timing(frame: pd.DataFrame) -> pd.DataFrame:
    return frame.drop(columns=[c for c in TIMING_COLUMNS if c in frame.columns])
