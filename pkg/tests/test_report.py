import csv
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedfair.errors import EmptySet, InvalidSpec
from fedfair.fixtures import fixture_path
from fedfair.metrics import qoi, report
from fedfair.report import (density, fairness_summary, render_markdown, render_reports, render_table, std_dev,
                            winners)
from fedfair.table import AccuracyTable, read_csv

METHODS = ["PersFL", "FedPer", "pFedMe", "Per-FedAvg"]


def table3():
    return {t.split_id: t for t in read_csv(fixture_path("table3.csv"))}


def table3_reports():
    return [report(t, m) for t in table3().values() for m in METHODS]


def test_density_spike():
    d = density([2.5] * 10)
    assert d.degenerate
    assert len(d.bin_density) == 1
    assert d.bin_density[0] == pytest.approx(1.0 / (d.bin_edges[1] - d.bin_edges[0]))
    assert d.area() == pytest.approx(1.0, abs=1e-12)


def test_density_uniform_grid():
    d = density(np.linspace(0, 1, 401), bins=4)
    assert np.ptp(d.bin_density) < 0.05 * d.bin_density.mean()
    assert d.area() == pytest.approx(1.0, abs=1e-9)


def test_density_errors():
    with pytest.raises(EmptySet):
        density([])
    with pytest.raises(InvalidSpec):
        density([1, 2], bins=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.integers(1, 20))
def test_density_unit_area(values, bins):
    d = density(values, bins=bins, kde=True, kde_points=50)
    assert d.area() == pytest.approx(1.0, abs=1e-9)
    assert len(d.bin_density) == len(d.bin_edges) - 1
    assert (np.diff(d.bin_edges) > 0).all()
    assert (d.kde_points[:, 1] >= 0).all()


def test_density_csv():
    text = density([0, 1, 2, 3], bins=2).to_csv()
    lines = text.splitlines()
    assert lines[0] == "bin_left,bin_right,density"
    assert len(lines) == 3


def test_persfl_mode_above_pfedme_ds1():
    t = table3()["DS-1"]
    modes = {}
    for m in ("PersFL", "pFedMe"):
        q = qoi(t.column(m), t.column("fedavg"), t.column("local"))
        modes[m] = density(q.values, bins=5).mode()
    assert modes["PersFL"] > modes["pFedMe"]


def test_fairness_winners_table3():
    w = winners(fairness_summary(table3_reports()))
    assert w["DS-1"] == {"av": "Per-FedAvg", "cs": "PersFL", "entropy": "PersFL", "ji": "PersFL"}
    assert w["DS-2"] == {"av": "pFedMe", "cs": "pFedMe", "entropy": "pFedMe", "ji": "pFedMe"}
    assert w["DS-3"] == {"av": "FedPer", "cs": "PersFL", "entropy": "PersFL", "ji": "PersFL"}


def test_fairness_reference_values():
    # recomputed independently from the table's per-user gains
    t = table3()["DS-1"]
    for m, av_ref in (("Per-FedAvg", 19.238), ("PersFL", 25.112)):
        f = t.column(m) - t.column("fedavg")
        assert np.mean((f - f.mean()) ** 2) == pytest.approx(av_ref, abs=1e-3)
        assert report(t, m).av == pytest.approx(av_ref, abs=1e-3)
    f = t.column("PersFL") - t.column("fedavg")
    assert report(t, "PersFL").cs == pytest.approx(f.mean() / np.sqrt(np.mean(f * f)), abs=1e-12)
    assert report(t, "PersFL").cs == pytest.approx(0.991, abs=5e-4)


def test_fairness_order_invariant():
    reps = table3_reports()
    base = winners(fairness_summary(reps))
    rnd = random.Random(0)
    for _ in range(5):
        rnd.shuffle(reps)
        assert winners(fairness_summary(reps)) == base


def test_fairness_needs_two_reports():
    with pytest.raises(InvalidSpec):
        fairness_summary(table3_reports()[:1])


def test_render_table3_footer_matches_printed():
    printed = list(csv.DictReader(fixture_path("table3_footer.csv").open()))
    for split, t in table3().items():
        lines = render_table(t).splitlines()
        assert len(lines) == 2 + 10 + 2
        avg = [c.strip() for c in lines[-2].strip("|").split("|")]
        std = [c.strip() for c in lines[-1].strip("|").split("|")]
        assert avg[0] == "Avg. Acc." and std[0] == "Std Dev"
        for row in printed:
            if row["split"] != split:
                continue
            for m in ["fedavg"] + METHODS:
                j = 1 + t.methods.index(m)
                got = float(avg[j] if row["stat"] == "Avg. Acc." else std[j])
                assert abs(got - float(row[m])) <= 0.05 + 1e-9, (split, row["stat"], m)


def test_std_dev_divisor():
    assert std_dev([1.0, 3.0]) == pytest.approx(np.sqrt(2.0))
    assert std_dev([5.0]) == 0.0


def test_render_edge_cases():
    empty = AccuracyTable(["User 0"], {})
    lines = render_markdown(empty).splitlines()
    assert [c.strip() for c in lines[0].strip("|").split("|")] == ["User"]
    assert len(lines) == 3
    one = AccuracyTable(["User 0"], {"local": [50.0], "fedavg": [60.0], "m": [70.0]})
    lines = render_table(one).splitlines()
    assert lines[2].split("|")[1].strip() == "User 0"
    assert "70.00" in lines[2]
    assert render_table(one) == render_table(one)


def test_render_reports_and_summary():
    reps = table3_reports()
    text = render_markdown(reps[:4])
    assert "38.75" in text and "PersFL DS-1" in text
    summary = render_markdown(fairness_summary(reps))
    assert "Per-FedAvg" in summary.splitlines()[2]
    assert render_reports(reps[:1]).count("\n") == 12
