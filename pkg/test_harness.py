#!/usr/bin/env python3
"""
Tests for the configuration layer, the experiment harness and the CLI
Tests:
1. Config validation, overrides and JSON files
2. Table presets
3. Verification suite passes on the reference setup and catches an indefinite form
4. Solve runs write CSVs and are deterministic up to timings
5. Sequential ghost sweeps, throughput frames and geometry reports
6. CLI exit codes and output files
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

import json

import numpy as np
import pandas as pd
import pytest

import harness
import run_experiments
from config import (ConfigError, ExperimentConfig, apply_overrides, load_config_file, parse_floats,
                    parse_levels)
from harness import (TABLE_PRESETS, best_ghost_coefficient, exact_solution, run_sequential_ghost_sweep,
                     run_solve, run_table, run_throughput, source_term, table_variants, verify)
from multigrid import LevelSetupCache
from reports import drop_timing
from smoothers import SmootherConfig


@pytest.fixture(autouse=True)
def fresh_cache():
    LevelSetupCache.clear()
    yield
    LevelSetupCache.clear()


def test_config_defaults():
    config = ExperimentConfig()
    assert config.geometry == 'circle' and config.levels == (4, 5, 6)
    assert config.resolved_gamma_d(2) == 20.0
    assert config.ghost_coefficients(3) == (0.08, 0.08, 0.08)
    custom = apply_overrides(config, gamma_k=[0.05, 0.1])
    assert custom.ghost_coefficients(3) == (0.05, 0.1, 0.1)
    assert custom.ghost_coefficients(1) == (0.05,)
    # Smoothers built directly match the experiment default
    assert SmootherConfig().n_c == config.n_c


@pytest.mark.parametrize("fields", [
    {'geometry': 'ellipse'},
    {'degree': 4},
    {'smoother': 'jacobi'},
    {'solver': 'cg'},
    {'n_c': 0},
    {'gamma_d': -1.0},
    {'gamma_k': (-0.1,)},
    {'tol': 0.0},
    {'radius': 1.5},
    {'levels': ()},
    {'threads': 0},
])
def test_config_validation(fields):
    with pytest.raises(ConfigError):
        ExperimentConfig(**fields)


def test_negative_penalty_needs_opt_in():
    config = ExperimentConfig(gamma_d=-1.0, allow_indefinite=True)
    assert config.resolved_gamma_d(1) == -1.0


def test_overrides():
    config = apply_overrides(ExperimentConfig(), degree=2, n_c=None, levels=[3, 4])
    assert config.degree == 2 and config.n_c == 2 and config.levels == (3, 4)
    with pytest.raises(ConfigError):
        apply_overrides(ExperimentConfig(), mesh_size=0.1)


def test_parsers():
    assert parse_levels('4-6') == (4, 5, 6)
    assert parse_levels('2,5') == (2, 5)
    assert parse_floats('0.05, 0.1') == (0.05, 0.1)
    with pytest.raises(ConfigError):
        parse_levels('four')
    with pytest.raises(ConfigError):
        parse_floats('a,b')


def test_load_config_file(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'geometry': 'square', 'degree': 3, 'levels': [2, 3]}))
    config = load_config_file(str(path))
    assert config.geometry == 'square' and config.degree == 3 and config.levels == (2, 3)

    (tmp_path / 'bad.json').write_text('{not json')
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / 'bad.json'))
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / 'missing.json'))


def test_output_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv('CUTMG_OUTPUT_DIR', str(tmp_path))
    assert ExperimentConfig().output_dir == str(tmp_path)


def test_table_variants():
    config = ExperimentConfig(degrees=(1, 2))
    assert [v.label for v in table_variants(config)] == ['Q1', 'Q2']
    assert len(table_variants(config, 'geometry')) == 6
    nc = table_variants(config, 'nc')
    assert [v.label for v in nc[:4]] == ['Q1 n_c=1', 'Q1 n_c=2', 'Q1 n_c=3', 'Q1 n_c=4']
    assert len(nc) == 8
    vcycle = table_variants(config, 'vcycle')
    assert all(v.overrides['solver'] == 'vcycle' for v in vcycle)
    assert sorted({v.overrides['n_c'] for v in vcycle}) == [1, 2, 3, 4]
    assert set(TABLE_PRESETS) == {'degrees', 'geometry', 'nc', 'vcycle'}
    with pytest.raises(ConfigError):
        table_variants(config, 'bogus')


def test_manufactured_problem():
    x, y = np.array([0.5, 0.25]), np.array([0.5, -0.5])
    assert np.allclose(exact_solution(x, y), [1.0, -np.sqrt(0.5)])
    assert np.allclose(source_term(x, y), 2.0 * np.pi ** 2 * exact_solution(x, y))


@pytest.mark.parametrize("geometry,degree", [('circle', 1), ('circle', 2), ('square', 2)])
def test_verify_passes(geometry, degree):
    print("=" * 60)
    print(f"TEST: verify on {geometry} Q{degree}")
    print("=" * 60)
    report = verify(ExperimentConfig(geometry=geometry, degree=degree), level=3, write=False)
    print(report.summary())
    assert report.passed, [c.name for c in report.failures]
    print("✓ Verify test PASSED")


def test_verify_catches_indefinite_form():
    config = ExperimentConfig(gamma_d=-1.0, allow_indefinite=True)
    report = verify(config, level=2, write=False)
    assert not report.passed
    assert 'coercivity' in [c.name for c in report.failures]
    assert report.summary().endswith(f"FAIL ({len(report.failures)} of {len(report.checks)})")


def test_run_solve_writes_results(tmp_path):
    config = ExperimentConfig(degree=1, levels=(2, 3), output_dir=str(tmp_path))
    frame = run_solve(config)
    assert list(frame['level']) == [2, 3]
    assert frame['converged'].all()
    assert np.isnan(frame['l2_rate'].iloc[0]) and frame['l2_rate'].iloc[1] > 1.0
    assert (tmp_path / 'solve.csv').exists()
    assert (tmp_path / 'residuals' / 'circle_q1_l3.csv').exists()
    saved = pd.read_csv(tmp_path / 'solve.csv')
    assert list(saved['dofs']) == list(frame['dofs'])


@pytest.mark.slow
@pytest.mark.parametrize("degree", [1, 2, 3])
def test_l2_convergence_rate(degree):
    config = ExperimentConfig(degree=degree, levels=(3, 4, 5), tol=1e-12)
    frame = run_solve(config, write=False)
    print(frame[['level', 'dofs', 'n_it', 'l2_error', 'l2_rate']].to_string(index=False))
    assert abs(frame['l2_rate'].iloc[-1] - (degree + 1)) <= 0.25


def test_solve_is_deterministic():
    config = ExperimentConfig(degree=2, levels=(2,))
    first = drop_timing(run_solve(config, write=False))
    LevelSetupCache.clear()
    second = drop_timing(run_solve(config, write=False))
    pd.testing.assert_frame_equal(first, second)


def test_run_table_is_deterministic():
    config = ExperimentConfig(degrees=(1, 2), levels=(2, 3))
    first = run_table(config, preset='degrees', write=False)
    LevelSetupCache.clear()
    second = run_table(config, preset='degrees', write=False)
    pd.testing.assert_frame_equal(first, second)
    assert list(first.columns) == ['level', 'cells_per_side', 'Q1', 'Q2']


def sweep_details(rows) -> pd.DataFrame:
    return pd.DataFrame([{'variant': label, 'level': level, 'n_it': n_it, 'n_frac': n_frac,
                          'converged': converged, 'diverged': diverged}
                         for label, level, n_it, n_frac, converged, diverged in rows])


def test_best_ghost_coefficient():
    details = sweep_details([
        ('0.05', 2, 3, 3.0, True, False),
        ('0.05', 3, 9, 9.0, False, True),
        ('0.10', 2, 9, 9.0, True, False),
        ('0.10', 3, 6, 5.5, True, False),
        ('0.15', 3, 6, 5.5, True, False),
    ])
    # Finest level decides; diverged runs never win and ties keep the first value
    assert best_ghost_coefficient(details, (0.05, 0.10, 0.15)) == (0.10, 5.5)

    nothing = sweep_details([('0.05', 3, 500, None, False, False)])
    gamma, count = best_ghost_coefficient(nothing, (0.05,))
    assert gamma is None and count == np.inf


def test_sequential_sweep_carries_pinned_coefficients(monkeypatch, tmp_path):
    print("=" * 60)
    print("TEST: Sequential ghost penalty sweep")
    print("=" * 60)
    seen = []
    original = harness.build_for

    def recording_build_for(config, level, degree=None):
        seen.append((config.degree, config.ghost_coefficients(config.degree)))
        return original(config, level, degree)

    monkeypatch.setattr(harness, 'build_for', recording_build_for)
    gammas = (0.05, 0.15)
    config = ExperimentConfig(degrees=(1, 2), levels=(2,), output_dir=str(tmp_path))
    sweep = run_sequential_ghost_sweep(config, gammas=gammas)
    print(sweep.choices.to_string(index=False))

    assert sorted(sweep.tables) == [1, 2]
    assert len(sweep.pinned) == 2 and set(sweep.pinned) <= set(gammas)
    assert list(sweep.choices['gamma_k']) == list(sweep.pinned)

    first_order = [coefficients for degree, coefficients in seen if degree == 1]
    second_order = [coefficients for degree, coefficients in seen if degree == 2]
    assert sorted(first_order) == [(0.05,), (0.15,)]
    # Every Q2 run holds gamma_1 at the value pinned by the Q1 sweep
    assert sorted(second_order) == [(sweep.pinned[0], 0.05), (sweep.pinned[0], 0.15)]

    for name in ('ghost_sweep_q1.csv', 'ghost_sweep_q2.csv', 'ghost_sweep_pinned.csv'):
        assert (tmp_path / name).exists()
    print("✓ Sequential sweep test PASSED")


def test_throughput_frame_shape(tmp_path):
    config = ExperimentConfig(degree=1, levels=(2, 3), output_dir=str(tmp_path))
    frame = run_throughput(config)
    assert list(frame.columns) == ['geometry', 'degree', 'level', 'cells_per_side', 'dofs',
                                   'apply_dofs_per_s', 'solve_dofs_per_s']
    assert list(frame['geometry']) == ['square', 'square', 'circle', 'circle']
    assert list(frame['level']) == [2, 3, 2, 3]
    assert (frame[['apply_dofs_per_s', 'solve_dofs_per_s']] > 0).all().all()
    assert (tmp_path / 'throughput_q1.csv').exists()


def test_throughput_requires_repeats():
    with pytest.raises(ConfigError):
        run_throughput(ExperimentConfig(levels=(2,)), warmups=1, write=False)
    with pytest.raises(ConfigError):
        run_throughput(ExperimentConfig(levels=(2,)), repeats=3, write=False)


def test_cli_exit_codes(tmp_path, capsys):
    assert run_experiments.main(['solve', '--levels', 'x-y']) == 2
    assert 'Configuration error' in capsys.readouterr().err

    out = str(tmp_path)
    assert run_experiments.main(['verify', '--level', '2', '--out', out]) == 0
    assert (tmp_path / 'verify.csv').exists()
    assert 'verify: PASS' in capsys.readouterr().out

    code = run_experiments.main(['verify', '--level', '2', '--gamma-d', '-1', '--allow-indefinite', '--out', out])
    assert code == 1


def test_cli_geometry_report(tmp_path, capsys):
    out = str(tmp_path)
    assert run_experiments.main(['geometry', '--levels', '2-3', '--degree', '2', '--out', out]) == 0
    printed = capsys.readouterr().out
    assert 'cut_cells' in printed and 'dofs' in printed

    for name in ('geometry_circle.csv', 'geometry_circle.txt', 'dofs_circle_q2.csv', 'matrix_circle_q2_l2.txt'):
        assert (tmp_path / name).exists(), name
    dofs = pd.read_csv(tmp_path / 'dofs_circle_q2.csv')
    assert list(dofs['level']) == [2, 3]

    for level in (2, 3):
        volume = list((tmp_path / 'quadrature').glob(f"circle_q2_l{level}_cell*_volume.csv"))
        surface = list((tmp_path / 'quadrature').glob(f"circle_q2_l{level}_cell*_surface.csv"))
        assert len(volume) == 1 and len(surface) == 1
        assert list(pd.read_csv(volume[0]).columns) == ['x', 'y', 'w', 'nx', 'ny']

    header = (tmp_path / 'matrix_circle_q2_l2.txt').read_text().splitlines()[0].split()
    assert header[0] == '#' and header[1] == header[2] == str(dofs['dofs'].iloc[0])


def test_cli_geometry_report_on_square(tmp_path):
    out = str(tmp_path)
    assert run_experiments.main(['geometry', '--geometry', 'square', '--levels', '2',
                                 '--out', out]) == 0
    assert (tmp_path / 'geometry_square.txt').exists()
    assert (tmp_path / 'matrix_square_q1_l2.txt').exists()
    assert not (tmp_path / 'quadrature').exists()
    assert run_experiments.main(['geometry', '--levels', '2', '--matrix-level', '5', '--out', out]) == 2


def test_cli_sequential_ghost_sweep(tmp_path, capsys):
    out = str(tmp_path)
    code = run_experiments.main(['ghost-sweep', '--sequential', '--order', '2', '--levels', '2',
                                 '--values', '0.05,0.15', '--out', out])
    assert code == 0
    assert 'gamma_2 with Q2' in capsys.readouterr().out
    pinned = pd.read_csv(tmp_path / 'ghost_sweep_pinned.csv')
    assert list(pinned['order']) == [1, 2]
    assert (tmp_path / 'ghost_sweep_q1.md').exists() and (tmp_path / 'ghost_sweep_q2.md').exists()


def test_cli_overrides_config_file(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'degree': 2, 'n_c': 1}))
    args = run_experiments.build_parser().parse_args(['solve', '--config', str(path), '--nc', '3',
                                                      '--levels', '2-3'])
    config = run_experiments.config_from_args(args)
    assert config.degree == 2 and config.n_c == 3 and config.levels == (2, 3)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
