#!/usr/bin/env python3
"""
Tests for the CSV and Markdown writers
Tests:
1. Tables as CSV and Markdown
2. Matrix triplets, quadrature dumps and residual histories
3. Geometry summaries
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

import numpy as np
import pandas as pd
import pytest
import scipy.sparse as sp

from krylov import SolveReport
from level_sets import CircleLevelSet
from mesh_geometry import build_active_geometry, build_hierarchy
from quadrature import cut_surface_rule
from reports import (drop_timing, reports_frame, write_frame, write_geometry_summary, write_matrix_triplets,
                     write_quadrature_rule, write_residual_history)

BOX = ((-1.21, -1.21), (1.21, 1.21))


def test_write_frame(tmp_path):
    frame = pd.DataFrame({'level': [4, 5], 'Q1': ['6', '---']})
    paths = write_frame(frame, str(tmp_path / 'out'), 'table', markdown=True)
    assert [os.path.basename(p) for p in paths] == ['table.csv', 'table.md']
    assert pd.read_csv(paths[0])['Q1'].tolist() == ['6', '---']
    markdown = open(paths[1]).read()
    assert '| level' in markdown and '---' in markdown


def test_matrix_triplets(tmp_path):
    A = sp.csr_matrix(np.array([[2.0, 0.0, 1e-20], [0.0, -1.5, 0.0]]))
    path = write_matrix_triplets(A, str(tmp_path / 'A.txt'), threshold=1e-16)
    lines = open(path).read().splitlines()
    assert lines[0] == '# 2 3 2'
    entries = [line.split() for line in lines[1:]]
    assert [(int(r), int(c)) for r, c, _ in entries] == [(0, 0), (1, 1)]
    assert float(entries[1][2]) == -1.5


def test_quadrature_dump(tmp_path):
    rule = cut_surface_rule(np.array([0.6, 0.3]), np.array([0.9, 0.6]), CircleLevelSet(), 2)
    path = write_quadrature_rule(rule, str(tmp_path / 'rules' / 'cell.csv'))
    frame = pd.read_csv(path)
    assert list(frame.columns) == ['x', 'y', 'w', 'nx', 'ny']
    assert frame['w'].sum() == pytest.approx(rule.total_weight)


def test_residual_history_and_report_rows(tmp_path):
    report = SolveReport(method='gmres+mg', n_dofs=77, n_it=2, converged=True,
                         residuals=[1.0, 1e-5, 1e-10], wall_time=0.1)
    path = write_residual_history(report, str(tmp_path / 'residuals' / 'run.csv'))
    history = pd.read_csv(path)
    assert history['iteration'].tolist() == [0, 1, 2]

    frame = reports_frame([report], [{'level': 2}])
    assert frame.loc[0, 'level'] == 2 and frame.loc[0, 'dofs'] == 77
    stripped = drop_timing(frame)
    assert 'wall_time_s' not in stripped.columns and 'dofs_per_s' not in stripped.columns
    assert 'n_it' in stripped.columns


def test_geometry_summary(tmp_path):
    hierarchy = build_hierarchy(BOX, 3)
    geometries = [build_active_geometry(mesh, CircleLevelSet()) for mesh in hierarchy.levels[2:]]
    paths = write_geometry_summary(geometries, str(tmp_path))
    assert os.path.exists(paths[-1]) and paths[-1].endswith('geometry.txt')
    frame = pd.read_csv(paths[0])
    assert len(frame) == 2


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
