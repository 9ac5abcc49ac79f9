import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bergeo_aoi.model import (
    MAX_SOURCES,
    ConfigError,
    derive_all,
    derive_params,
    effective_generation_probability,
    load_config,
    overall_generation_probability,
    parse_inline,
    quadratic_roots,
    validate_config,
)

prob = st.floats(min_value=0.01, max_value=1.0, allow_nan=False)
configs = st.lists(st.tuples(prob, prob), min_size=1, max_size=8).map(validate_config)


def brute_force_p_i(q, i):
    """Enumerate all 2^N generation outcomes and split each among its generators."""
    total = 0.0
    for outcome in itertools.product((0, 1), repeat=len(q)):
        if not outcome[i - 1]:
            continue
        w = math.prod(qk if g else 1 - qk for qk, g in zip(q, outcome))
        total += w / sum(outcome)
    return total


class TestValidation:
    def test_single_source(self):
        cfg = validate_config([(0.3, 0.7)])
        assert cfg.n_sources == 1
        assert cfg.q == (0.3,) and cfg.gamma == (0.7,)

    def test_zero_q(self):
        with pytest.raises(ConfigError, match="q must be > 0"):
            validate_config([(0.0, 0.7)])

    def test_error_names_source(self):
        with pytest.raises(ConfigError, match="source 2: gamma"):
            validate_config([(0.4, 0.5), (0.4, 1.2)])

    @pytest.mark.parametrize("bad", [[], [(0.5,)], [("x", 0.5)], [(float("nan"), 0.5)], [(True, 0.5)]])
    def test_malformed(self, bad):
        with pytest.raises(ConfigError):
            validate_config(bad)

    def test_too_many_sources(self):
        with pytest.raises(ConfigError, match="at most"):
            validate_config([(0.5, 0.5)] * (MAX_SOURCES + 1))

    def test_mapping_entries(self):
        cfg = validate_config([{"q": 0.2, "gamma": 0.8}, {"q": 0.5, "gamma": 0.6}])
        assert cfg.q == (0.2, 0.5)

    def test_missing_key(self):
        with pytest.raises(ConfigError, match="missing key 'gamma'"):
            validate_config([{"q": 0.2}])

    def test_boundary_one_allowed(self):
        assert validate_config([(1.0, 1.0)]).q == (1.0,)

    def test_load_config_roundtrip(self, tmp_path):
        cfg = parse_inline([0.4, 0.4], [0.5, 0.9])
        path = tmp_path / "c.json"
        import json

        path.write_text(json.dumps(cfg.to_json()))
        assert load_config(path) == cfg

    def test_load_config_bad_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)
        path.write_text('{"src": []}')
        with pytest.raises(ConfigError, match="sources"):
            load_config(path)

    def test_inline_length_mismatch(self):
        with pytest.raises(ConfigError):
            parse_inline([0.1, 0.2], [0.3])


class TestGenerationProbability:
    def test_single(self):
        assert effective_generation_probability(validate_config([(0.3, 0.5)]), 1) == 0.3

    def test_symmetric_pair(self):
        cfg = parse_inline([0.4, 0.4], [0.5, 0.5])
        assert effective_generation_probability(cfg, 1) == pytest.approx(0.32, abs=1e-15)

    def test_asymmetric_pair(self):
        cfg = parse_inline([0.2, 0.5], [0.5, 0.5])
        assert effective_generation_probability(cfg, 1) == pytest.approx(0.15, abs=1e-15)
        assert effective_generation_probability(cfg, 2) == pytest.approx(0.45, abs=1e-15)
        assert overall_generation_probability(cfg) == pytest.approx(0.6, abs=1e-15)

    def test_symmetric_triple(self):
        cfg = parse_inline([0.5] * 3, [0.5] * 3)
        for i in (1, 2, 3):
            assert effective_generation_probability(cfg, i) == pytest.approx(0.875 / 3, abs=1e-15)

    def test_overall(self):
        assert overall_generation_probability(validate_config([(0.3, 0.5)])) == pytest.approx(0.3)
        assert overall_generation_probability(parse_inline([0.2, 1.0], [0.5, 0.5])) == 1.0

    def test_bad_index(self):
        cfg = validate_config([(0.3, 0.5)])
        with pytest.raises(IndexError):
            effective_generation_probability(cfg, 2)
        with pytest.raises(IndexError):
            derive_params(cfg, 0)

    @given(configs)
    def test_sum_equals_overall(self, cfg):
        total = sum(effective_generation_probability(cfg, i) for i in range(1, cfg.n_sources + 1))
        assert total == pytest.approx(overall_generation_probability(cfg), abs=1e-12)

    @given(configs)
    def test_matches_brute_force(self, cfg):
        for i in range(1, cfg.n_sources + 1):
            assert effective_generation_probability(cfg, i) == pytest.approx(
                brute_force_p_i(cfg.q, i), abs=1e-14
            )

    @given(configs, st.randoms(use_true_random=False))
    def test_permutation_equivariance(self, cfg, rnd):
        order = list(range(cfg.n_sources))
        rnd.shuffle(order)
        perm = validate_config([(cfg.q[k], cfg.gamma[k]) for k in order])
        for new_i, old in enumerate(order, start=1):
            assert effective_generation_probability(perm, new_i) == pytest.approx(
                effective_generation_probability(cfg, old + 1), abs=1e-14
            )

    @given(configs)
    def test_bounds(self, cfg):
        for i in range(1, cfg.n_sources + 1):
            p_i = effective_generation_probability(cfg, i)
            assert cfg.q[i - 1] / cfg.n_sources - 1e-15 <= p_i <= cfg.q[i - 1] + 1e-15
            assert p_i <= overall_generation_probability(cfg) + 1e-15

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_monte_carlo(self, seed):
        # winner frequencies from raw draws, independent of the enumeration code
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        q = rng.uniform(0.05, 0.95, n)
        cfg = parse_inline(q.tolist(), [0.5] * n)
        draws, chunk = 10**7, 10**6
        wins = np.zeros(n)
        for _ in range(draws // chunk):
            gen = rng.random((chunk, n)) < q
            k = gen.sum(axis=1)
            pick = np.floor(rng.random(chunk) * np.maximum(k, 1)).astype(int)
            winner = np.argmax(np.cumsum(gen, axis=1) > pick[:, None], axis=1)
            wins += np.bincount(winner[k > 0], minlength=n)
        for i in range(n):
            p_i = effective_generation_probability(cfg, i + 1)
            se = math.sqrt(p_i * (1 - p_i) / draws)
            assert abs(wins[i] / draws - p_i) < 4 * se

class TestRoots:
    def test_example_pair(self):
        pr = derive_params(parse_inline([0.4, 0.4], [0.5, 0.5]), 1)
        assert pr.lam == pytest.approx(0.18, abs=1e-15)
        assert pr.alpha == pytest.approx(0.226981, abs=5e-7)
        assert pr.beta == pytest.approx(0.793019, abs=5e-7)
        assert pr.alpha * pr.beta == pytest.approx(0.18, abs=1e-12)
        assert pr.alpha + pr.beta == pytest.approx(1.02, abs=1e-12)
        assert not pr.repeated_root

    def test_repeated(self):
        pr = derive_params(validate_config([(0.5, 0.5)]), 1)
        assert pr.repeated_root
        assert pr.alpha == pr.beta == 0.5

    def test_certain_delivery(self):
        pr = derive_params(validate_config([(1.0, 1.0)]), 1)
        assert pr.lam == 0.0 and pr.alpha == 0.0 and pr.beta == 0.0

    def test_single_source_has_no_preemption(self):
        pr = derive_params(validate_config([(0.37, 0.61)]), 1)
        assert pr.p == pr.p_i == 0.37

    def test_quadratic_small_c(self):
        small, large, rep = quadratic_roots(1.0, 1e-20)
        assert not rep
        assert small == pytest.approx(1e-20, rel=1e-12)
        assert large == pytest.approx(1.0, rel=1e-15)

    def test_quadratic_complex(self):
        with pytest.raises(ArithmeticError):
            quadratic_roots(1.0, 1.0)

    @given(configs)
    @settings(max_examples=200)
    def test_root_identities(self, cfg):
        for pr in derive_all(cfg):
            b = 1 - pr.gamma * pr.p_i + pr.lam
            assert pr.alpha + pr.beta == pytest.approx(b, abs=1e-12)
            assert pr.alpha * pr.beta == pytest.approx(pr.lam, abs=1e-12)
            assert 0.0 <= pr.alpha <= pr.beta < 1.0
            # f(0) = lam > 0 and f(1) = gamma * p_i > 0 keep both roots inside (0, 1)
            if pr.lam > 0:
                assert pr.alpha > 0.0
            assert (1 - pr.alpha) * (1 - pr.beta) == pytest.approx(pr.gamma * pr.p_i, abs=1e-12)
