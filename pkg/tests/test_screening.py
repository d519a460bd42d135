import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sensval.asymptotics import AsymptoticLaw, kappa_law_finite
from sensval.exceptions import DomainError, ParseError, SizeError
from sensval.scores import ScoreSpec, psi_norms
from sensval.screening import (
    MIN_PAIRS,
    OutcomeMatrix,
    histogram_bins,
    load_matrix,
    load_pairs,
    qq_data,
    screen,
)
from sensval.senscore import Method, Tail, sensitivity_value


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def null_matrix(n_out=2000, I=41, seed=0, shifted=0, shift=1.5):
    rng = np.random.default_rng(seed)
    vals = rng.normal(0, 1, (n_out, I))
    vals[:shifted] += shift
    return OutcomeMatrix(tuple(f"g{i:04d}" for i in range(n_out)), vals)


WIDE = "outcome,p1,p2,p3,p4\na,1.5,-0.5,2,0.25\nb,-1,-2,0.5,3\nc,0,1,1,-1\n"
LONG = "outcome,pair,y\nb,p3,0.5\na,p1,1.5\nc,p1,0\na,p2,-0.5\nb,p1,-1\nc,p2,1\na,p3,2\nb,p2,-2\nc,p3,1\na,p4,0.25\nb,p4,3\nc,p4,-1\n"


class TestLoaders:
    def test_wide(self, tmp_path):
        m = load_matrix(write(tmp_path, "w.csv", WIDE), "wide")
        assert m.outcome_ids == ("a", "b", "c")
        assert m.values.shape == (3, 4)
        assert m.row(0).tolist() == [1.5, -0.5, 2.0, 0.25]

    def test_long_equals_wide(self, tmp_path):
        w = load_matrix(write(tmp_path, "w.csv", WIDE), "wide")
        l = load_matrix(write(tmp_path, "l.csv", LONG), "long")
        order = [l.outcome_ids.index(i) for i in w.outcome_ids]
        np.testing.assert_array_equal(l.values[order], w.values)

    def test_raw(self, tmp_path):
        text = "outcome,pair,z,r\na,1,1,3\na,1,0,1\na,2,0,5\na,2,1,2\nb,1,1,0\nb,1,0,0\nb,2,1,4\nb,2,0,1\n"
        m = load_matrix(write(tmp_path, "r.csv", text), "raw")
        assert m.row(0).tolist() == [2.0, -3.0]
        assert m.row(1).tolist() == [0.0, 3.0]

    def test_raw_z_sum_names_pair(self, tmp_path):
        text = "outcome,pair,z,r\na,1,1,3\na,1,0,1\na,p9,1,5\na,p9,1,2\n"
        with pytest.raises(ParseError, match=r"p9.*line 5|line 5.*p9"):
            load_matrix(write(tmp_path, "r.csv", text), "raw")

    def test_raw_missing_unit(self, tmp_path):
        text = "outcome,pair,z,r\na,1,1,3\na,1,0,1\na,2,1,5\n"
        with pytest.raises(ParseError, match="line 4"):
            load_matrix(write(tmp_path, "r.csv", text), "raw")

    def test_duplicate_ids(self, tmp_path):
        with pytest.raises(ParseError, match="line 3"):
            load_matrix(write(tmp_path, "w.csv", "outcome,p1,p2\na,1,2\na,3,4\n"), "wide")

    def test_ragged(self, tmp_path):
        with pytest.raises(ParseError, match="line 3"):
            load_matrix(write(tmp_path, "w.csv", "outcome,p1,p2\na,1,2\nb,3\n"), "wide")

    def test_non_numeric(self, tmp_path):
        with pytest.raises(ParseError, match="line 2"):
            load_matrix(write(tmp_path, "w.csv", "outcome,p1,p2\na,1,x\n"), "wide")

    def test_missing_cells(self, tmp_path):
        m = load_matrix(write(tmp_path, "w.csv", "outcome,p1,p2,p3\na,1,,2\n"), "wide")
        assert m.row(0).tolist() == [1.0, 2.0]

    def test_long_duplicate_pair(self, tmp_path):
        with pytest.raises(ParseError, match="line 3"):
            load_matrix(write(tmp_path, "l.csv", "outcome,pair,y\na,1,2\na,1,3\n"), "long")

    def test_long_missing_column(self, tmp_path):
        with pytest.raises(ParseError, match="line 1"):
            load_matrix(write(tmp_path, "l.csv", "outcome,pair,value\na,1,2\n"), "long")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ParseError):
            load_matrix(write(tmp_path, "w.csv", WIDE), "xlsx")

    def test_empty(self, tmp_path):
        with pytest.raises(ParseError):
            load_matrix(write(tmp_path, "w.csv", ""), "wide")

    @pytest.mark.parametrize(
        "text,expected",
        [
            ("y\n1\n-2\n0.5\n", [1.0, -2.0, 0.5]),
            ("id,y\n1,1\n2,-2\n", [1.0, -2.0]),
            ("1.5\n-2\n", [1.5, -2.0]),
            ("pair,unit,z,r\n1,1,1,3\n1,2,0,1\n2,1,0,4\n2,2,1,1\n", [2.0, -3.0]),
        ],
    )
    def test_load_pairs(self, tmp_path, text, expected):
        assert load_pairs(write(tmp_path, "y.csv", text)).y.tolist() == expected

    def test_load_pairs_bad_record(self, tmp_path):
        with pytest.raises(ParseError, match="'7'"):
            load_pairs(write(tmp_path, "y.csv", "pair,unit,z,r\n7,1,1,3\n7,2,1,1\n"))


class TestOutcomeMatrix:
    def test_duplicate(self):
        with pytest.raises(ParseError):
            OutcomeMatrix(("a", "a"), np.zeros((2, 3)))

    def test_empty(self):
        with pytest.raises(SizeError):
            OutcomeMatrix((), np.zeros((0, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ParseError):
            OutcomeMatrix(("a",), np.zeros((2, 3)))


class TestScreen:
    def test_all_positive_dominates(self):
        rng = np.random.default_rng(1)
        vals = rng.normal(0.8, 1, (20, 30))
        vals[7] = np.abs(vals[7]) + 0.01
        m = OutcomeMatrix(tuple(f"o{i}" for i in range(20)), vals)
        tab = screen(m, tail="greater")
        top = tab.ranked()[0]
        assert top.outcome == "o7" and top.T == 1.0
        assert top.kappa_greater == max(r.kappa_greater for r in tab.rows)

    def test_matches_single_outcome(self):
        m = null_matrix(5, 30, seed=3, shifted=2, shift=1.0)
        tab = screen(m, "ustat:5,4,5", 0.05)
        for k, row in enumerate(tab.rows):
            y = m.row(k)
            assert row.kappa_greater == sensitivity_value(y, "ustat:5,4,5", 0.05, "greater").kappa_star
            assert row.kappa_less == sensitivity_value(y, "ustat:5,4,5", 0.05, "less").kappa_star
            two = sensitivity_value(y, "ustat:5,4,5", 0.05, "two_sided")
            assert row.kappa_two_sided == two.kappa_star
            assert row.gamma_trunc == two.gamma_star_trunc

    @pytest.mark.parametrize("shift", [0.8, 1.5, 3.0])
    def test_shifted_outcome_ranks_first(self, shift):
        wins = 0
        for seed in range(20):
            m = null_matrix(50, 41, seed=seed, shifted=1, shift=shift)
            wins += screen(m).ranked()[0].outcome == "g0000"
        assert wins >= {0.8: 10, 1.5: 19, 3.0: 20}[shift]

    def test_null_mean(self):
        tab = screen(null_matrix(), tail="greater")
        vals = np.array([r.kappa_greater for r in tab.analyzed()])
        assert vals.mean() == pytest.approx(0.36, abs=0.005)

    def test_null_reference(self):
        m = null_matrix(30, 41)
        vals = np.array(m.values)
        vals[0, :20] = np.nan
        m = OutcomeMatrix(m.outcome_ids, vals)
        tab = screen(m, "ustat:8,6,7", 0.05)
        effs = sorted(r.effective_I for r in tab.rows)
        assert tab.null_I == float(np.median(effs))
        law = AsymptoticLaw.null(psi_norms(ScoreSpec.ustat(8, 6, 7))[2])
        assert (tab.null_center, tab.null_sd) == kappa_law_finite(law, 0.05, tab.null_I)

    def test_insufficient_pairs(self):
        vals = np.array([[1.0, 2.0, 0.0, 0.0, -1.0, 3.0], [1.0, 2.0, 0.5, 4.0, -1.0, 3.0]])
        tab = screen(OutcomeMatrix(("few", "ok"), vals))
        few = next(r for r in tab.rows if r.outcome == "few")
        assert "insufficient_pairs" in few.flags and few.effective_I == 4 < MIN_PAIRS
        assert math.isnan(few.kappa_two_sided)
        assert few.rank == 2
        assert [r.outcome for r in tab.analyzed()] == ["ok"]

    def test_ranks_are_permutation(self):
        tab = screen(null_matrix(40, 20, seed=5))
        assert sorted(r.rank for r in tab.rows) == list(range(1, 41))

    def test_ties_broken_by_id(self):
        y = [1.0, 2.0, -3.0, 4.0, 5.0, 6.0]
        m = OutcomeMatrix(("z", "b", "m"), np.array([y, y, y]))
        assert [r.outcome for r in screen(m).ranked()] == ["b", "m", "z"]

    def test_permutation_equivariant(self):
        m = null_matrix(25, 30, seed=7, shifted=5)
        order = np.random.default_rng(0).permutation(25)
        a = {r.outcome: r for r in screen(m).rows}
        b = {r.outcome: r for r in screen(m.permuted(order)).rows}
        assert a == b

    def test_deterministic_across_threads(self):
        m = null_matrix(30, 15, seed=2, shifted=3)
        a = screen(m, method=Method("mc", B=500, seed=4), threads=1)
        b = screen(m, method=Method("mc", B=500, seed=4), threads=4)
        assert a.rows == b.rows
        assert a.to_csv() == b.to_csv()

    @given(st.lists(st.floats(0.5, 1.0), min_size=2, max_size=15))
    @settings(max_examples=25, deadline=None)
    def test_ranking_follows_statistic(self, targets):
        # same I, same score, T >= 1/2: two-sided ranking matches ranking by T
        I = 40
        base = np.arange(1, I + 1, dtype=float)
        rows = []
        for t in targets:
            n_pos = int(round(t * I))
            signs = np.where(np.arange(I) >= I - n_pos, 1.0, -1.0)
            rows.append(base * signs)
        rows = [r for r in rows if (r > 0).sum() * 2 >= I]
        if len(rows) < 2:
            return
        m = OutcomeMatrix(tuple(f"o{i:02d}" for i in range(len(rows))), np.array(rows))
        tab = screen(m)
        by_kappa = [r.outcome for r in tab.ranked()]
        by_T = [r.outcome for r in sorted(tab.rows, key=lambda r: (-r.T, r.outcome))]
        assert by_kappa == by_T

    def test_alpha_domain(self):
        with pytest.raises(DomainError):
            screen(null_matrix(3, 10), alpha=1.5)


class TestOutputs:
    def setup_method(self):
        self.tab = screen(null_matrix(12, 20, seed=9, shifted=2))

    def test_csv(self):
        rows = list(csv.reader(io.StringIO(self.tab.to_csv())))
        assert rows[0] == ["outcome", "effective_I", "T", "kappa_greater", "kappa_less", "kappa_two_sided", "gamma_trunc", "rank", "flags"]
        assert [int(r[7]) for r in rows[1:]] == list(range(1, 13))

    def test_json(self):
        data = json.loads(self.tab.to_json_text())
        assert set(data["null_reference"]) >= {"center", "sd"}
        assert data["null_reference"]["center"] == self.tab.null_center
        assert len(data["outcomes"]) == 12


class TestQQ:
    def test_needs_two(self):
        tab = screen(null_matrix(1, 20))
        with pytest.raises(SizeError):
            qq_data(tab)

    def test_shape(self):
        theo, obs, (c, sd) = qq_data(screen(null_matrix(9, 30)))
        assert theo.size == obs.size == 9
        assert np.all(np.diff(obs) >= 0) and theo[4] == pytest.approx(0.0, abs=1e-12)

    def test_null_on_reference_line(self):
        theo, obs, (c, sd) = qq_data(screen(null_matrix(), tail="greater"))
        n = obs.size
        slope, intercept = np.polyfit(theo, obs, 1)
        assert abs(intercept - c) <= 3 * sd / math.sqrt(n)
        assert abs(slope - sd) <= 3 * sd / math.sqrt(2 * n)

    def test_contamination_departs_upward(self):
        theo, obs, (c, sd) = qq_data(screen(null_matrix(2000, 41, shifted=100, shift=1.5), tail="greater"))
        top = obs[-50:] - (c + sd * theo[-50:])
        assert np.all(top > 0)
        assert top.mean() > 2 * sd


class TestHistogram:
    def test_single_bin(self):
        tab = screen(null_matrix(10, 20))
        rows = [r.__class__(**{**r.__dict__, "kappa_greater": 0.5}) for r in tab.rows]
        tab.rows = rows
        bins = histogram_bins(tab, 0.1)
        assert [b[2] for b in bins if b[2]] == [10]
        assert next(b for b in bins if b[2])[:2] == (0.5, 0.6)

    def test_counts_and_cover(self):
        tab = screen(null_matrix(300, 25, seed=4, shifted=30))
        bins = histogram_bins(tab, 0.05)
        assert sum(b[2] for b in bins) == len(tab.analyzed())
        assert bins[0][0] == 0.0 and bins[-1][1] == 1.0
        assert all(a[1] == b[0] for a, b in zip(bins, bins[1:]))

    def test_null_mode(self):
        bins = histogram_bins(screen(null_matrix(), tail="greater"), 0.05)
        lo, hi, _ = max(bins, key=lambda b: b[2])
        assert lo - 0.05 <= 0.36 <= hi + 0.05

    def test_width_domain(self):
        with pytest.raises(DomainError):
            histogram_bins(screen(null_matrix(3, 10)), 0.0)
