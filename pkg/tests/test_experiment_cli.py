import os

import pytest
from dotenv import dotenv_values

from config import Config
from errors import ConfigError
from experiment_cli import load_scenario, main, run_scenario, scenario_from_values
from metric_core import Region
from pipelines import FillingCache
from reports import read_csv, read_json

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'scenarios')


def small_wcap(tmp_path, **extra):
    values = {'PIPELINE': 'wcap', 'SPACE': 'square', 'GRID_N': '16', 'DEPTHS': '4', 'P': '2',
              'MODE': 'continuum', 'OUT': str(tmp_path / 'small')}
    values.update(extra)
    return scenario_from_values(values, 'small')


class TestScenarioValues:

    def test_defaults(self):
        sc = scenario_from_values({'PIPELINE': 'wcap'}, 'plain')
        assert sc.name == 'plain'
        assert sc.depths == [4, 5]
        assert sc.p_grid == [2.0]
        assert sc.mode == 'continuum'
        assert sc.s == Config.FILLING_S
        [(A, B, label)] = sc.queries
        assert (A, B, label) == (Region.strip(0.0, 0.25), Region.strip(0.75, 1.0), '')

    def test_queries_are_labelled(self):
        sc = scenario_from_values({'PIPELINE': 'wcap',
                                   'QUERIES': 'box:0,0.25|box:0.75,1;box:0,0.2,0,0.2|box:0.8,1,0.8,1'})
        assert [label for _, _, label in sc.queries] == ['q0', 'q1']
        assert sc.queries[1][0] == Region.parse('box:0,0.2,0,0.2')

    def test_keys_are_case_insensitive(self):
        sc = scenario_from_values({'pipeline': 'modulus', 'grid_n': '12', 'inner_tol': '1e-9'})
        assert sc.space_spec == {'GRID_N': '12'}
        assert sc.settings.inner_tol == 1e-9

    def test_params_are_kept_as_text(self):
        sc = scenario_from_values({'PIPELINE': 'tau-eps', 'EPSILON': '0.05', 'CURVES': '3'})
        assert sc.param('EPSILON', float) == 0.05
        assert sc.param('CURVES', int) == 3
        assert sc.param('SEED_SPREAD', float, 2.0) == 2.0

    @pytest.mark.parametrize('values', [
        {'PIPELINE': 'wcap', 'COLOUR': 'red'},
        {'SPACE': 'square'},
        {'PIPELINE': 'no-such-pipeline'},
        {'PIPELINE': 'wcap', 'DEPTHS': '5,4'},
        {'PIPELINE': 'wcap', 'DEPTHS': '4,4'},
        {'PIPELINE': 'wcap', 'MODE': 'closed'},
        {'PIPELINE': 'wcap', 'P': '2,x'},
        {'PIPELINE': 'wcap', 'MAX_CONSTRAINTS': 'many'},
        {'PIPELINE': 'tau-eps', 'CURVES': 'five'},
        {'PIPELINE': 'wcap', 'SEED': '1.5'},
        {'PIPELINE': 'wcap', 'QUERIES': 'box:0,0.25'},
        {'PIPELINE': 'wcap', 'A': 'disc:0,0'},
    ])
    def test_bad_values(self, values):
        with pytest.raises(ConfigError):
            scenario_from_values(values)


class TestLoading:

    def test_preset_by_name(self, monkeypatch):
        monkeypatch.setattr(Config, 'SCENARIO_FOLDER', SCENARIO_DIR)
        sc = load_scenario('wcap-square')
        assert sc.name == 'wcap-square'
        assert sc.pipeline == 'wcap'

    def test_every_preset_parses(self):
        names = sorted(f for f in os.listdir(SCENARIO_DIR) if f.endswith('.cfg'))
        assert len(names) == 12
        for name in names:
            sc = load_scenario(os.path.join(SCENARIO_DIR, name))
            assert sc.name == name[:-4]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_scenario(str(tmp_path / 'nothing'))

    def test_output_paths(self, tmp_path):
        sc = small_wcap(tmp_path)
        csv_path, json_path = sc.output_paths()
        assert csv_path == str(tmp_path / 'small' / 'small.csv')
        assert json_path.endswith('small.json')


class TestRun:

    def test_small_wcap_run(self, tmp_path):
        sc = small_wcap(tmp_path)
        assert run_scenario(sc, FillingCache(enabled=False)) == 0
        csv_path, json_path = sc.output_paths()
        frame = read_csv(csv_path)
        assert len(frame) == 1
        assert frame['kind'].tolist() == ['wcap']
        assert frame['weak_value'].iloc[0] > 0
        detail = read_json(json_path)
        assert detail['scenario'] == 'small'
        assert detail['checks'] and all(detail['checks'].values())

    def test_failed_run_writes_nothing(self, tmp_path):
        sc = small_wcap(tmp_path, P='1')
        assert run_scenario(sc, FillingCache(enabled=False)) == 2
        assert not os.path.exists(tmp_path / 'small')

    def test_cache_is_reused(self, tmp_path):
        cache = FillingCache(folder=str(tmp_path / 'cache'))
        sc = small_wcap(tmp_path)
        build = cache.builder(sc.space(), sc.s, [3, 4])
        deep = build(4)
        assert len(os.listdir(tmp_path / 'cache')) == 1
        assert build(3).n_vertices < deep.n_vertices
        fresh = FillingCache(folder=str(tmp_path / 'cache')).get(sc.space(), sc.s, 4)
        assert fresh.n_vertices == deep.n_vertices


class TestCommands:

    def test_list_scenarios(self, capsys):
        assert main(['list-scenarios', '--folder', SCENARIO_DIR]) == 0
        out = capsys.readouterr().out
        assert 'rectangle-oracle' in out
        assert 'positivity' in out
        assert len(out.strip().splitlines()) == 12

    def test_compare_identical(self, tmp_path, capsys):
        sc = small_wcap(tmp_path)
        assert run_scenario(sc, FillingCache(enabled=False)) == 0
        csv_path, _ = sc.output_paths()
        assert main(['compare', csv_path, csv_path]) == 0
        out = capsys.readouterr().out
        assert '0 of 1 rows outside slack 1.5; stabilized=True' in out

    def test_compare_missing_key(self, tmp_path, capsys):
        sc = small_wcap(tmp_path)
        run_scenario(sc, FillingCache(enabled=False))
        csv_path, _ = sc.output_paths()
        assert main(['compare', csv_path, csv_path, '--keys', 'volume']) == 2

    def test_run_bad_config(self, tmp_path):
        path = tmp_path / 'broken.cfg'
        path.write_text('PIPELINE=wcap\nDEPTHS=6,5\n')
        assert main(['run', str(path), '--no-cache']) == 2

    def test_run_with_overrides(self, tmp_path):
        path = tmp_path / 'tiny.cfg'
        path.write_text('PIPELINE=wcap\nSPACE=square\nGRID_N=16\nDEPTHS=4,5\nP=3\n')
        assert main(['run', str(path), '--depth', '4', '--p', '2', '--out', str(tmp_path / 'r'),
                     '--no-cache']) == 0
        frame = read_csv(str(tmp_path / 'r' / 'tiny' / 'tiny.csv'))
        assert frame['depth'].tolist() == [4]
        assert frame['p'].tolist() == [2.0]


@pytest.mark.slow
def test_positivity_preset(tmp_path):
    sc = load_scenario(os.path.join(SCENARIO_DIR, 'positivity-square-p2.cfg'))
    sc.out = str(tmp_path)
    assert run_scenario(sc, FillingCache(enabled=False)) == 0


REDUCED = {
    'positivity-square-p2': {},
    'qs-capacity': {'GRID_N': '12'},
    'qs-covering': {'GRID_N': '12', 'CURVES': '2'},
    'qw-scan-square': {'GRID_N': '16', 'DEPTHS': '4,5'},
    'rectangle-oracle': {'GRIDS': '6,8'},
    'tau-eps-square': {'GRID_N': '12', 'CURVES': '2'},
    'transfer-boundary': {'GRID_N': '12'},
    'transfer-covering': {'GRID_N': '8'},
    'transfer-lift': {'GRID_N': '12'},
    'wcap-carpet': {'CARPET_DEPTH': '2'},
    'wcap-square': {'GRID_N': '16'},
    'wccap-square': {'GRID_N': '12', 'CURVES': '2'},
}


def test_every_preset_has_a_reduced_size():
    names = sorted(f[:-4] for f in os.listdir(SCENARIO_DIR) if f.endswith('.cfg'))
    assert names == sorted(REDUCED)


@pytest.mark.slow
@pytest.mark.parametrize('name', sorted(REDUCED))
def test_every_preset_runs_reduced(name, tmp_path):
    values = dotenv_values(os.path.join(SCENARIO_DIR, f"{name}.cfg"))
    values.update(REDUCED[name], GAP_TOL='1e-3', OUT=str(tmp_path))
    sc = scenario_from_values(values, name)
    assert run_scenario(sc, FillingCache(enabled=False)) != 2
    frame = read_csv(sc.output_paths()[0])
    assert len(frame) > 0
