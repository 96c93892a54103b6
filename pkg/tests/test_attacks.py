import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stateguard.attacks import (
    EXCLUDED,
    FAILURE,
    SUCCESS,
    AttackConfig,
    BenignFeaturePool,
    build_pool,
    run_adaptive,
    run_attack,
    run_blackbox,
    run_graybox,
    write_trace,
)
from stateguard.defense.oracle import PlainOracle
from stateguard.featurespace import (
    BENIGN,
    MALWARE,
    Dataset,
    FeatureFamilyTable,
    FeatureVector,
    validate_perturbations,
)


class Rule:
    """Prediction model stub driven by a label function."""

    def __init__(self, fn):
        self.fn = fn

    def predict_label(self, q):
        return self.fn(q)

    def predict_proba(self, q):
        return float(self.fn(q))


def oracle_of(fn, dim):
    return PlainOracle(Rule(fn), dim)


def pool_of(order, mode):
    return BenignFeaturePool(tuple(order), mode, {})


def toy_dataset():
    dim = 10
    benign = [FeatureVector(dim, [3, 7]), FeatureVector(dim, [3]), FeatureVector(dim, [3, 7, 1]),
              FeatureVector(dim, [3, 2])]
    malware = [FeatureVector(dim, [0, 9])]
    vectors = benign + malware
    return Dataset(dim, vectors, [0, 0, 0, 0, 1], ["train"] * 5)


# pools

def test_frequency_pool_order():
    ds = toy_dataset()
    pool = build_pool(ds, "frequency", min_support=0)
    assert pool.ordering[:2] == (3, 7)
    assert set(pool.ordering[-6:]) == {0, 4, 5, 6, 8, 9}
    assert pool.frequencies[3] == 4 and pool.frequencies[7] == 2
    assert build_pool(ds, "frequency", min_support=0.5).ordering == (3, 7)


def test_random_pool_determinism():
    ds = toy_dataset()
    a, b = build_pool(ds, "random", seed=4, min_support=0), build_pool(ds, "random", seed=4, min_support=0)
    assert a.ordering == b.ordering and sorted(a.ordering) == list(range(10))


def test_pool_errors():
    ds = toy_dataset()
    no_benign = Dataset(ds.dim, ds.vectors[4:], [1], ["train"])
    with pytest.raises(ValueError):
        build_pool(no_benign)
    with pytest.raises(ValueError):
        build_pool(ds, "sorted")


# control flow

DIM = 12
PERMISSIVE = FeatureFamilyTable.permissive(DIM)
X = FeatureVector(DIM, [0, 1])


def test_constant_malware_oracle_exhausts_budget():
    order = list(range(2, 12))
    for n_max in (3, 10, 50):
        res = run_blackbox(oracle_of(lambda q: MALWARE, DIM), X, pool_of(order, "random"), n_max, PERMISSIVE)
        assert res.outcome == FAILURE and res.queries_used == min(n_max, len(order))
        assert len(res.oracle_labels) == res.queries_used + 1


def test_toy_oracle_success_and_exclusion():
    order = [5, 2, 3, 4, 6, 7, 8, 9, 10, 11]
    fn = lambda q: BENIGN if 5 in q.enabled else MALWARE
    res = run_blackbox(oracle_of(fn, DIM), X, pool_of(order, "random"), 100, PERMISSIVE, seed=1)
    assert res.outcome == SUCCESS and res.queries_used <= 2
    res = run_graybox(oracle_of(lambda q: BENIGN, DIM), X, pool_of(order, "frequency"), 100, PERMISSIVE)
    assert res.outcome == EXCLUDED and res.queries_used == 1


@pytest.mark.parametrize("seed", range(10))
def test_graybox_most_frequent_anchor(seed):
    fn = lambda q: BENIGN if 9 in q.enabled else MALWARE
    order = [9] + [i for i in range(2, 12) if i != 9]
    res = run_graybox(oracle_of(fn, DIM), X, pool_of(order, "frequency"), 100, PERMISSIVE, seed=seed)
    assert res.outcome == SUCCESS and res.queries_used in (1, 2)


def test_pool_mode_is_checked():
    with pytest.raises(ValueError):
        run_graybox(oracle_of(lambda q: 1, DIM), X, pool_of([2], "random"), 5, PERMISSIVE)
    with pytest.raises(ValueError):
        run_blackbox(oracle_of(lambda q: 1, DIM), X, pool_of([2], "frequency"), 5, PERMISSIVE)
    with pytest.raises(ValueError):
        AttackConfig("whitebox")


def test_adaptive_p0_matches_capped_graybox():
    """With p=0 the adaptive loop is the gray-box loop with bulk additions capped at m."""
    order = list(range(2, 12))
    for seed in range(10):
        res = run_adaptive(oracle_of(lambda q: MALWARE, DIM), X, pool_of(order, "frequency"), 6, m=2, p=0.0,
                           table=PERMISSIVE, seed=seed, keep_queries=True)
        ref = np.random.default_rng(seed)
        cur = X
        for n, q in enumerate(res.queries[1:]):
            cur = cur.with_added([order[n]])
            r = int(ref.integers(0, 3))
            if r:
                cur = cur.with_added(ref.choice(order, size=r, replace=False))
            assert q == cur
        assert res.queries_used == 6


def test_adaptive_p1_strips_removable_features():
    table = FeatureFamilyTable(8, (0, 0, 1, 1, 0, 0, 1, 1), {0: True, 1: True}, {0: True, 1: False})
    x = FeatureVector(8, [0, 2, 3])
    res = run_adaptive(oracle_of(lambda q: MALWARE, 8), x, pool_of([4, 5, 6, 7, 1], "frequency"), 5, m=2, p=1.0,
                       table=table, seed=3, keep_queries=True)
    assert len(res.queries) == 6
    for q in res.queries[1:]:
        # family 0 is removable, so all of it goes (X's feature 0 too);
        # family 1 keeps X's 2 and 3
        assert not (set(q.enabled) & {0, 1, 4, 5})
        assert {2, 3} <= set(q.enabled)


# invariants on real data

@pytest.fixture(scope="module")
def small_setup(small_data, small_mlp):
    ds, table = small_data
    pools = {"random": build_pool(ds, "random", seed=0, min_support=0.2),
             "frequency": build_pool(ds, "frequency", min_support=0.2)}
    return ds, table, pools, small_mlp


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.sampled_from(["blackbox", "graybox", "adaptive"]), st.integers(1, 60),
       st.floats(0, 1))
def test_every_query_is_valid_and_budgeted(small_setup, seed, strategy, n_max, p):
    ds, table, pools, model = small_setup
    mal = ds.select("test", MALWARE)
    x = mal[seed % len(mal)]
    cfg = AttackConfig(strategy, n_max, m=5, p=p)
    res = run_attack(PlainOracle(model, ds.dim), x, pools, cfg, table, seed=seed, keep_queries=True)
    for q in res.queries:
        assert validate_perturbations(x, q, table) == q
    pool_len = len(pools["random" if strategy == "blackbox" else "frequency"])
    assert res.queries_used <= min(n_max, pool_len)
    assert validate_perturbations(x, res.final_vector, table) == res.final_vector
    again = run_attack(PlainOracle(model, ds.dim), x, pools, cfg, table, seed=seed, keep_queries=True)
    assert (again.outcome, again.queries_used, again.final_vector) == (res.outcome, res.queries_used,
                                                                      res.final_vector)


def test_blackbox_success_nondecreasing_in_budget():
    dim = 64
    table = FeatureFamilyTable.permissive(dim)
    x = FeatureVector(dim, range(5))
    fn = lambda q: BENIGN if q.enabled_count >= 30 else MALWARE
    order = list(range(5, 64))
    rates = []
    for n_max in (1, 2, 4, 8, 16):
        wins = sum(run_blackbox(oracle_of(fn, dim), x, pool_of(order, "random"), n_max, table, seed=s).outcome
                   == SUCCESS for s in range(40))
        rates.append(wins)
    assert rates == sorted(rates) and rates[-1] > rates[0]


def test_trace_file(tmp_path, small_setup):
    ds, table, pools, model = small_setup
    x = ds.select("test", MALWARE)[0]
    res = run_attack(PlainOracle(model, ds.dim), x, pools, AttackConfig("graybox", 5), table, keep_queries=True)
    write_trace(tmp_path / "t.jsonl", x, res)
    lines = [json.loads(l) for l in (tmp_path / "t.jsonl").read_text().splitlines()]
    assert len(lines) == len(res.queries)
    assert lines[0] == {"n": 0, "l0_from_original": 0, "oracle_label": res.oracle_labels[0], "attack_detected": False}


def test_graybox_not_worse_than_blackbox(default_artifacts):
    cfg, art = default_artifacts
    from stateguard.harness.experiments import attack_samples, sample_seed
    samples, _ = attack_samples(art, cfg, 0)
    samples = samples[:100]
    pools = {"random": build_pool(art.dataset, "random", 0), "frequency": build_pool(art.dataset, "frequency")}
    rates = {}
    for strategy in ("blackbox", "graybox"):
        wins = 0
        for i, x in enumerate(samples):
            res = run_attack(PlainOracle(art.models["mlp"], art.dataset.dim), x, pools,
                             AttackConfig(strategy, 500), art.table, seed=sample_seed(0, i))
            wins += res.outcome == SUCCESS
        rates[strategy] = wins / len(samples)
    assert rates["graybox"] >= rates["blackbox"] - 0.10
