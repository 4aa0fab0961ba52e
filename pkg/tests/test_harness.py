import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from panelqlm.dgp import DESIGNS
from panelqlm.harness import (
    POWER_RHOS,
    SIZE_RHOS,
    TABLE_PRESETS,
    ExperimentSpec,
    TableCell,
    cell_seed,
    emit_table,
    preset,
    read_spec,
    run,
    write_manifest,
    write_spec,
)


def _small(name="table1", reps=20, **kw):
    return replace(preset(name), replications=reps, **kw)


def _rows(text):
    lines = text.strip().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


def test_zero_replications_keep_schema():
    res = run(_small(reps=0))
    assert len(res.cells) == 7 * 6
    assert all(c.replications == 0 and np.isnan(c.rejection_rate) for c in res.cells)
    header, rows = _rows(emit_table(res))
    assert len(header) == 7 and len(rows) == 7


@pytest.mark.parametrize("name, n_rows", [("table1", 7), ("table5", 6)])
def test_paper_layout_shape(name, n_rows):
    header, rows = _rows(emit_table(run(_small(name, reps=2))))
    assert header[0] == "rho" and len(header) == 1 + 6
    assert len(rows) == n_rows and all(len(r) == 7 for r in rows)
    # grouped by design, N increasing within a design
    assert header[1:] == [f"{d} N={n}" for d in DESIGNS for n in (100, 250)]


def test_long_layout_has_one_row_per_cell():
    res = run(_small(reps=2, designs=("S_Normal",)))
    header, rows = _rows(emit_table(res, "long"))
    assert len(rows) == len(res.cells) == 14
    assert header[:4] == ["design", "N", "T", "rho"]


def test_paper_layout_refuses_missing_cells():
    res = run(_small(reps=1, designs=("S_Normal",)))
    with pytest.raises(ValueError):
        emit_table(res.cells[1:])
    with pytest.raises(ValueError):
        emit_table(res, "wide")


def test_rate_and_se_follow_counts():
    res = run(_small(reps=40, designs=("S_Normal",), N=(100,)))
    for c in res.cells:
        assert c.rejection_rate == c.rejections / c.replications
        assert c.mc_se == pytest.approx(np.sqrt(c.rejection_rate * (1 - c.rejection_rate) / 40))
        assert c.replications + c.failures == 40


def test_results_do_not_depend_on_workers_or_chunks():
    spec = _small(reps=30, designs=("S_Normal", "NS_Normal"), N=(100,))
    a = run(spec)
    b = run(spec, jobs=2, chunk=7)
    assert [c.rejections for c in a.cells] == [c.rejections for c in b.cells]
    assert emit_table(a) == emit_table(b)


def test_master_seed_changes_results():
    spec = _small(reps=60, designs=("S_Normal",), N=(100,))
    a = run(spec)
    b = run(replace(spec, master_seed=spec.master_seed + 1))
    assert [c.rejections for c in a.cells] != [c.rejections for c in b.cells]


def test_cell_seed_is_stable_and_distinct():
    s = cell_seed(1, "table1", "S_Normal", 100, 0.2)
    assert s == cell_seed(1, "table1", "S_Normal", 100, 0.2)
    assert 0 <= s < 2**64
    others = {cell_seed(1, "table1", d, n, r) for d in DESIGNS for n in (100, 250)
              for r in SIZE_RHOS}
    assert len(others) == 42


def test_flagging_rule():
    ok = TableCell.from_counts("S_Normal", 0.5, 100, 4, 5, 100, 1)
    bad = TableCell.from_counts("S_Normal", 0.5, 100, 4, 5, 100, 2)
    assert not ok.flagged and bad.flagged


def test_power_tables_test_fixed_null():
    spec = preset("table5")
    assert spec.kind == "power" and spec.rho_values == POWER_RHOS
    assert all(spec.null_value(r) == 0.8 for r in POWER_RHOS)
    assert preset("table1").null_value(0.95) == 0.95


def test_presets():
    assert len(TABLE_PRESETS) == 12
    assert {preset(f"table{k}").model for k in (2, 4, 6, 8)} == {"fe"}
    assert all(preset(f"table{k}").sigma_mu_sq == 25 for k in (9, 10, 11, 12))
    assert preset("Table 7").T == 9
    with pytest.raises(ValueError):
        preset("table13")


@pytest.mark.parametrize("kw", [dict(kind="x"), dict(model="gmm"), dict(designs=("bogus",)),
                                dict(replications=-1), dict(level=0.0), dict(T=2),
                                dict(model="fe", sigma_mu_sq=25.0)])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        ExperimentSpec(**kw)


def test_spec_round_trip(tmp_path):
    spec = replace(preset("table11"), N=(50, 75), replications=9, centered=True)
    assert read_spec(write_spec(spec)) == spec
    path = tmp_path / "exp.cfg"
    path.write_text(write_spec(spec))
    assert read_spec(path) == spec


@settings(max_examples=20)
@given(st.lists(st.sampled_from(SIZE_RHOS), min_size=1, max_size=4, unique=True),
       st.integers(0, 5000), st.integers(0, 2**31))
def test_spec_round_trip_property(rhos, reps, seed):
    spec = ExperimentSpec(rho_values=rhos, replications=reps, master_seed=seed)
    assert read_spec(write_spec(spec)) == spec


def test_config_with_preset_defaults():
    spec = read_spec("[experiment]\npreset = table2\nreplications = 10\nN = 100\n")
    assert spec.model == "fe" and spec.replications == 10 and spec.N == (100,)
    with pytest.raises(ValueError):
        read_spec("[experiment]\nbogus = 1\n")
    with pytest.raises(ValueError):
        read_spec("[other]\nT = 4\n")


def test_manifest(tmp_path):
    res = run(_small(reps=3, designs=("S_Normal",), N=(100,)))
    path = tmp_path / "manifest.json"
    write_manifest(res, path)
    m = json.loads(path.read_text())
    assert m["master_seed"] == res.spec.master_seed and m["statistic"] == "qlm"
    assert {"panelqlm", "numpy", "scipy", "python"} <= set(m["versions"])
    assert m["flagged_cells"] == 0


def test_run_result_lookup():
    res = run(_small(reps=2, designs=("S_Normal",), N=(100,)))
    assert res.cell("S_Normal", 100, 0.5).rho == 0.5
    with pytest.raises(KeyError):
        res.cell("S_Normal", 250, 0.5)


@pytest.mark.slow
def test_size_sanity_at_N250():
    spec = replace(preset("table1"), N=(250,), replications=2500)
    res = run(spec)
    rates = [c.rejection_rate for c in res.cells]
    assert all(0.035 <= r <= 0.065 for r in rates), rates
    assert not any(c.flagged for c in res.cells)
