import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from sensval.exceptions import BudgetError, DegenerateSampleError, DomainError, ParseError
from sensval.numerics import Rng
from sensval.scores import PairDiffs, ScoreSpec, ScoreVector, score_vector
from sensval.senscore import (
    EXACT_MAX_I,
    Method,
    Tail,
    gamma_to_kappa,
    kappa_closed_formula,
    kappa_star_closed,
    kappa_star_search,
    kappa_to_gamma,
    pvalue_bounds_exact,
    pvalue_bounds_mc,
    pvalue_bounds_normal,
    sensitivity_table,
    sensitivity_value,
    statistic,
    two_sided,
)

WILCOXON = ScoreSpec.wilcoxon()


def brute_upper(q, t, gamma):
    # P(sum q W / sum q >= t), W iid Bernoulli(gamma / (1 + gamma)), by listing every sign pattern
    q = np.asarray(q, dtype=float)
    k = gamma / (1 + gamma)
    total = 0.0
    for w in itertools.product((0, 1), repeat=len(q)):
        w = np.array(w)
        if np.dot(q, w) / q.sum() >= t - 1e-12:
            total += k ** w.sum() * (1 - k) ** (len(q) - w.sum())
    return total


def closed_oracle(t, n, s2, alpha):
    c = math.sqrt(s2) * stats.norm.isf(alpha)
    return optimize.brentq(lambda k: math.sqrt(n) * (t - k) - c * math.sqrt(k * (1 - k)), 1e-12, t)


def vec(y, spec=WILCOXON):
    d = PairDiffs(y)
    return score_vector(spec, d), d


small_data = st.lists(st.floats(-5, 5).filter(lambda x: abs(x) > 1e-3), min_size=2, max_size=10, unique=True)


class TestParsing:
    @pytest.mark.parametrize("text,expected", [("greater", Tail.GREATER), ("two-sided", Tail.TWO_SIDED), ("LESS", Tail.LESS)])
    def test_tail(self, text, expected):
        assert Tail.parse(text) is expected

    def test_tail_error(self):
        with pytest.raises(ParseError):
            Tail.parse("both")

    @pytest.mark.parametrize(
        "text,kind,B", [("approx", "normal", None), ("exact", "exact", None), ("mc:5000", "mc", 5000), ("mc:1e5", "mc", 100000)]
    )
    def test_method(self, text, kind, B):
        m = Method.parse(text, seed=3)
        assert m.kind == kind
        if B is not None:
            assert m.B == B and m.seed == 3

    @pytest.mark.parametrize("text", ["mc:0", "mc:abc", "bootstrap"])
    def test_method_error(self, text):
        with pytest.raises(ParseError):
            Method.parse(text)

    def test_gamma_kappa(self):
        assert gamma_to_kappa(1.0) == 0.5
        assert gamma_to_kappa(math.inf) == 1.0
        assert kappa_to_gamma(0.75) == pytest.approx(3.0)
        assert kappa_to_gamma(1.0) == math.inf


class TestStatistic:
    def test_all_positive(self):
        assert statistic(*vec([1.0, 2.0, 0.5])) == 1.0

    def test_symmetric(self):
        assert statistic(*vec([1.0, -1.0])) == 0.5

    def test_example(self):
        assert statistic(*vec([3.0, -1.0, 2.0])) == pytest.approx(5 / 6, abs=1e-15)

    def test_less_tail_is_statistic_of_negated(self):
        sv, d = vec([3.0, -1.0, 2.0, -4.0, 0.0])
        assert statistic(sv, d, Tail.LESS) == pytest.approx(statistic(sv, -d))
        assert statistic(sv, d) + statistic(sv, d, Tail.LESS) == pytest.approx(1.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateSampleError):
            statistic(*vec([0.0, 0.0]))


class TestExactBounds:
    def test_single_pair(self):
        sv, _ = vec([1.0])
        assert pvalue_bounds_exact(sv, 1.0, 3.0).p_upper == pytest.approx(0.75, abs=1e-15)

    def test_two_pairs(self):
        sv, _ = vec([1.0, 2.0])
        assert pvalue_bounds_exact(sv, 1.0, 1.0).p_upper == pytest.approx(0.25, abs=1e-15)

    def test_signed_rank_all_positive(self):
        sv, _ = vec([1.0, 2.0, 3.0, 4.0, 5.0])
        b = pvalue_bounds_exact(sv, 1.0, 1.0)
        assert b.p_upper == pytest.approx(1 / 32, abs=1e-15)
        assert b.p_lower == b.p_upper

    @pytest.mark.parametrize("seed", range(6))
    def test_gamma_one_matches_classical_signed_rank(self, seed):
        y = np.random.default_rng(seed).normal(0.4, 1, 11)
        sv, d = vec(y)
        expected = stats.wilcoxon(y, alternative="greater", method="exact").pvalue
        assert pvalue_bounds_exact(sv, statistic(sv, d), 1.0).p_upper == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("gamma", [1.0, 1.5, 2.0, 4.0])
    @pytest.mark.parametrize("spec", [WILCOXON, ScoreSpec.ustat(5, 4, 5), ScoreSpec.binary(0.3, 1)], ids=str)
    def test_against_enumeration(self, gamma, spec):
        y = np.random.default_rng(7).normal(0.5, 1, 9)
        sv, d = vec(y, spec)
        t = statistic(sv, d)
        q = sv.q[sv.q > 0]
        b = pvalue_bounds_exact(sv, t, gamma)
        assert b.p_upper == pytest.approx(brute_upper(q, t, gamma), abs=1e-12)
        assert b.p_lower == pytest.approx(brute_upper(q, t, 1 / gamma), abs=1e-12)

    def test_budget(self):
        sv, d = vec(np.arange(1, EXACT_MAX_I + 2, dtype=float))
        with pytest.raises(BudgetError, match="Monte Carlo"):
            pvalue_bounds_exact(sv, 0.9, 2.0)

    def test_budget_counts_nonzero_scores(self):
        y = np.concatenate([np.arange(1, EXACT_MAX_I + 1, dtype=float), np.zeros(10)])
        sv, d = vec(y)
        assert 0 < pvalue_bounds_exact(sv, 0.9, 2.0).p_upper < 1


class TestNormalBounds:
    def test_null_mean(self):
        sv, _ = vec(np.arange(1, 21, dtype=float))
        b = pvalue_bounds_normal(sv, 0.5, 1.0)
        assert b.p_upper == pytest.approx(0.5) and b.p_lower == pytest.approx(0.5)

    def test_power_example_cross_check(self):
        sv = ScoreVector(np.ones(200), 200.0, 4 / 3, 4 / 3, 0.5, 1 / math.sqrt(3), 200)
        k = 2.5 / 3.5
        expected = stats.norm.sf(math.sqrt(200) * (0.7602 - k) / (math.sqrt(k * (1 - k)) * math.sqrt(4 / 3)))
        assert pvalue_bounds_normal(sv, 0.7602, 2.5).p_upper == pytest.approx(expected, rel=1e-12)

    def test_all_positive_shrinks_with_I(self):
        ps = [pvalue_bounds_normal(vec(np.arange(1, n + 1, dtype=float))[0], 1.0, 3.0).p_upper for n in (5, 10, 50, 200)]
        assert all(a > b for a, b in zip(ps, ps[1:]))
        assert ps[-1] < 1e-10

    @given(small_data, st.floats(1, 20), st.floats(1, 20))
    def test_monotone_in_gamma(self, y, g1, g2):
        sv, d = vec(y)
        t = statistic(sv, d)
        lo, hi = sorted((g1, g2))
        a, b = pvalue_bounds_normal(sv, t, lo), pvalue_bounds_normal(sv, t, hi)
        assert a.p_upper <= b.p_upper + 1e-15
        assert a.p_lower >= b.p_lower - 1e-15
        assert b.p_lower <= b.p_upper

    @given(small_data, st.floats(0.05, 20))
    def test_duality(self, y, g):
        sv, d = vec(y)
        t = statistic(sv, d)
        assert pvalue_bounds_normal(sv, t, g).p_lower == pvalue_bounds_normal(sv, t, 1 / g).p_upper

    def test_gamma_must_be_positive(self):
        sv, d = vec([1.0, 2.0])
        with pytest.raises(DomainError):
            pvalue_bounds_normal(sv, 0.5, 0.0)


class TestMonteCarloBounds:
    def test_common_random_numbers_monotone(self):
        sv, d = vec(np.random.default_rng(1).normal(0.8, 1, 30))
        t = statistic(sv, d)
        ps = [pvalue_bounds_mc(sv, t, g, B=4000, rng=Rng(5)).p_upper for g in (1, 1.5, 2, 5, 50)]
        assert ps == sorted(ps)

    def test_reproducible(self):
        sv, d = vec(np.random.default_rng(2).normal(0.5, 1, 25))
        t = statistic(sv, d)
        assert pvalue_bounds_mc(sv, t, 2.0, B=2000, rng=Rng(9)) == pvalue_bounds_mc(sv, t, 2.0, B=2000, rng=Rng(9))

    def test_add_one_estimator(self):
        sv, _ = vec(np.arange(1, 41, dtype=float))
        b = pvalue_bounds_mc(sv, 1.0, 1.0, B=999, rng=Rng(0))
        assert b.p_upper == pytest.approx(1 / 1000)

    @pytest.mark.parametrize("gamma", [1.0, 1.5, 2.0, 4.0])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_within_three_se_of_exact(self, gamma, seed):
        y = np.random.default_rng(100 + seed).normal(0.3, 1, 10)
        sv, d = vec(y)
        t = statistic(sv, d)
        exact = pvalue_bounds_exact(sv, t, gamma)
        B = 100_000
        mc = pvalue_bounds_mc(sv, t, gamma, B=B, rng=Rng(seed))
        for e, m in ((exact.p_upper, mc.p_upper), (exact.p_lower, mc.p_lower)):
            se = math.sqrt(e * (1 - e) / B)
            assert abs(m - e) <= 3 * se + 1 / B

    def test_gamma_one_symmetric_matches_classical(self):
        y = np.array([1.2, -0.4, 2.2, -3.1, 0.7, 1.9, -0.2, 2.8, 1.5, -1.1, 0.9, 2.4])
        sv, d = vec(y)
        expected = stats.wilcoxon(y, alternative="greater", method="exact").pvalue
        mc = pvalue_bounds_mc(sv, statistic(sv, d), 1.0, B=100_000, rng=Rng(4)).p_upper
        assert abs(mc - expected) <= 3 * math.sqrt(expected * (1 - expected) / 1e5)


class TestClosedForm:
    def test_example(self):
        k = kappa_closed_formula(0.7, 100, 4 / 3, 0.05)
        assert k == pytest.approx(0.607, abs=5e-4)
        assert k == pytest.approx(closed_oracle(0.7, 100, 4 / 3, 0.05), abs=1e-12)

    @pytest.mark.parametrize("n,s2,alpha", [(10, 1.0, 0.05), (100, 4 / 3, 0.01), (5000, 2.0, 0.001)])
    def test_t_equal_one(self, n, s2, alpha):
        c2 = s2 * stats.norm.isf(alpha) ** 2
        assert kappa_closed_formula(1.0, n, s2, alpha) == pytest.approx(n / (n + c2), rel=1e-13)

    def test_critical_value_gives_one_half(self):
        n, s2, alpha = 80, 4 / 3, 0.05
        t = 0.5 + stats.norm.isf(alpha) * math.sqrt(s2 * 0.25 / n)
        r = kappa_star_closed(ScoreVector(np.ones(n), n, s2, s2, 1, 1, n), t, alpha)
        assert r.kappa_star == pytest.approx(0.5, abs=1e-12)
        assert r.gamma_star == pytest.approx(1.0, abs=1e-10)
        assert r.gamma_star_trunc == pytest.approx(1.0, abs=1e-10)

    @given(st.floats(0.001, 0.999), st.integers(1, 10_000), st.floats(1.0, 3.0), st.sampled_from([0.001, 0.01, 0.05, 0.2]))
    def test_against_root_oracle(self, t, n, s2, alpha):
        k = kappa_closed_formula(t, n, s2, alpha)
        assert k == pytest.approx(closed_oracle(t, n, s2, alpha), abs=1e-9)
        assert k < t

    def test_vectorized(self):
        t = np.array([0.0, 0.3, 0.7, 1.0])
        k = kappa_closed_formula(t, 50, 4 / 3, 0.05)
        assert k[0] == 0.0
        np.testing.assert_allclose(k[1:], [kappa_closed_formula(v, 50, 4 / 3, 0.05) for v in t[1:]])

    def test_zero_statistic_flag(self):
        sv, d = vec([-1.0, -2.0, -3.0])
        r = kappa_star_closed(sv, 0.0, 0.05)
        assert r.gamma_star == 0.0 and r.gamma_star_trunc == 1.0
        assert "degenerate_zero_statistic" in r.flags

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_alpha_domain(self, alpha):
        sv, d = vec([1.0, 2.0])
        with pytest.raises(DomainError):
            kappa_star_closed(sv, 0.5, alpha)

    def test_result_invariants(self):
        sv, d = vec(np.random.default_rng(3).normal(1, 1, 60))
        r = sensitivity_value(d)
        assert r.gamma_star == pytest.approx(r.kappa_star / (1 - r.kappa_star))
        assert r.gamma_star_trunc == max(r.gamma_star, 1.0)
        assert set(r.to_dict()) >= {"statistic", "kappa_star", "gamma_star", "gamma_star_trunc", "alpha", "tail", "method", "effective_I"}


class TestSearch:
    def test_exact_against_dense_grid(self):
        y = np.random.default_rng(12).normal(0.9, 1, 12)
        sv, d = vec(y)
        t = statistic(sv, d)
        tol = 1e-4
        r = kappa_star_search(sv, t, 0.05, "exact", tol=tol)
        q = sv.q[sv.q > 0]
        coarse = next(k for k in np.arange(0.01, 1, 0.01) if brute_upper(q, t, k / (1 - k)) >= 0.05)
        first = next(k for k in np.arange(coarse - 0.01, coarse + 1e-4, 1e-4) if brute_upper(q, t, k / (1 - k)) >= 0.05)
        assert abs(r.kappa_star - first) <= tol + 1e-4

    @pytest.mark.parametrize("method", ["exact", "mc:20000"])
    def test_gamma_star_consistency(self, method):
        y = np.random.default_rng(21).normal(1.0, 1, 14)
        sv, d = vec(y)
        t = statistic(sv, d)
        tol = 1e-4
        m = Method.parse(method, seed=2)
        r = kappa_star_search(sv, t, 0.05, m, tol=tol)
        assert r.gamma_star_trunc > 1
        eps = 10 * tol
        if m.kind == "exact":
            up = lambda k: pvalue_bounds_exact(sv, t, k / (1 - k)).p_upper
        else:
            up = lambda k: pvalue_bounds_mc(sv, t, k / (1 - k), B=m.B, rng=Rng(m.seed, m.stream)).p_upper
        assert up(r.kappa_star + eps) > 0.05
        assert up(r.kappa_star - eps) <= 0.05

    def test_close_to_closed_form_for_large_I(self):
        y = np.random.default_rng(5).normal(1, 1, 100)
        sv, d = vec(y)
        t = statistic(sv, d)
        a = kappa_star_closed(sv, t, 0.05).kappa_star
        b = kappa_star_search(sv, t, 0.05, Method("mc", B=20000, seed=1)).kappa_star
        assert abs(a - b) < 0.02

    def test_below_support_flag(self):
        sv, d = vec([-1.0, -2.0, -3.0, 4.0])
        r = kappa_star_search(sv, 0.0, 0.05, "exact")
        assert r.gamma_star == 0.0 and "degenerate_below_support" in r.flags


class TestTwoSided:
    def test_antisymmetric(self):
        y = np.array([1, -1, 2, -2, 3, -3, 4, -4, 5, -5], dtype=float)
        sv, d = vec(y)
        g = sensitivity_value(d, alpha=0.025, tail="greater")
        l = sensitivity_value(d, alpha=0.025, tail="less")
        ts = sensitivity_value(d, alpha=0.05, tail="two_sided")
        assert g.kappa_star == pytest.approx(l.kappa_star, abs=1e-15)
        assert ts.kappa_star == pytest.approx(g.kappa_star, abs=1e-15)

    def test_takes_larger_side(self):
        sv, d = vec(np.random.default_rng(8).normal(-1, 1, 50))
        ts = two_sided(sv, d, 0.05)
        l = sensitivity_value(d, alpha=0.025, tail="less")
        assert ts.kappa_star == l.kappa_star and ts.tail is Tail.TWO_SIDED

    def test_strong_effect_ranks_above_weak(self):
        rng = np.random.default_rng(0)
        strong = rng.normal(1.2, 1, 60)
        weak = rng.normal(0.4, 1, 60)
        for alpha in (0.01, 0.05):
            s = sensitivity_value(PairDiffs(strong), alpha=alpha, tail="two_sided")
            w = sensitivity_value(PairDiffs(weak), alpha=alpha, tail="two_sided")
            assert s.gamma_star_trunc > w.gamma_star_trunc

    def test_just_above_critical_truncates(self):
        n, s2, alpha = 100, 4 / 3, 0.05
        t = 0.5 + stats.norm.isf(alpha / 2) * math.sqrt(s2 * 0.25 / n) + 1e-6
        r = kappa_star_closed(ScoreVector(np.ones(n), n, s2, s2, 1, 1, n), t, alpha / 2)
        assert r.gamma_star_trunc == pytest.approx(1.0, abs=1e-4)


class TestSensitivityTable:
    def setup_method(self):
        self.y = np.random.default_rng(31).normal(0.7, 1, 15)
        self.sv, self.d = vec(self.y)

    def test_layout(self):
        rows = sensitivity_table(self.sv, self.d, [1, 2, 3, 5, 7, 10], "exact")
        assert [r.gamma for r in rows] == [1, 2, 3, 5, 7, 10]
        ups = [r.p_upper for r in rows]
        assert ups == sorted(ups)
        assert max(ups) <= 1.0

    def test_gamma_one_is_classical(self):
        row = sensitivity_table(self.sv, self.d, [1], "exact", tail="greater")[0]
        expected = stats.wilcoxon(self.y, alternative="greater", method="exact").pvalue
        assert row.p_upper == pytest.approx(expected, rel=1e-12)
        two = sensitivity_table(self.sv, self.d, [1], "exact")[0]
        assert two.p_upper == pytest.approx(min(1.0, 2 * expected), rel=1e-12)

    def test_rejects_gamma_below_one(self):
        with pytest.raises(DomainError):
            sensitivity_table(self.sv, self.d, [0.5, 2])
        with pytest.raises(DomainError):
            sensitivity_table(self.sv, self.d, [])

    def test_mc_monotone(self):
        rows = sensitivity_table(self.sv, self.d, [1, 1.5, 2, 3, 6], Method("mc", B=3000, seed=8), tail="greater")
        assert [r.p_upper for r in rows] == sorted(r.p_upper for r in rows)


class TestProperties:
    @given(small_data, st.sampled_from([0.01, 0.05, 0.1]))
    @settings(max_examples=60, deadline=None)
    def test_kappa_below_statistic(self, y, alpha):
        sv, d = vec(y)
        t = statistic(sv, d)
        r = kappa_star_closed(sv, t, alpha)
        assert r.kappa_star < t or t == 0

    @given(small_data, st.floats(1, 10))
    @settings(max_examples=40, deadline=None)
    def test_exact_monotone_and_dual(self, y, g):
        sv, d = vec(y)
        t = statistic(sv, d)
        a = pvalue_bounds_exact(sv, t, g)
        b = pvalue_bounds_exact(sv, t, g * 1.5)
        assert a.p_upper <= b.p_upper + 1e-15 and a.p_lower >= b.p_lower - 1e-15
        assert pvalue_bounds_exact(sv, t, 1 / g).p_upper == pytest.approx(a.p_lower, abs=1e-15)

    @given(small_data)
    @settings(max_examples=30, deadline=None)
    def test_exact_against_enumeration(self, y):
        sv, d = vec(y)
        t = statistic(sv, d)
        assert pvalue_bounds_exact(sv, t, 2.0).p_upper == pytest.approx(brute_upper(sv.q[sv.q > 0], t, 2.0), abs=1e-12)
