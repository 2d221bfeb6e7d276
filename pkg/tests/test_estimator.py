import random

import pytest

from chainbench import memstore
from chainbench.chain_model import AddressRow
from chainbench.estimator import (
    EstimateError,
    build_column_stats,
    catalog_from_dict,
    catalog_to_dict,
    estimate,
    refresh,
)
from chainbench.memstore import Filter, InsertRow, SPJQuery, Store, apply_ops
from chainbench.synth_chain import SynthConfig, generate

from util import addr, make_block, make_tx


@pytest.fixture(scope="module")
def store():
    ds = generate(SynthConfig(seed=55, n_blocks=110, mean_tx_per_block=100, address_pool=200, n_tokens=10))
    return Store.from_dataset(ds)


def test_equi_depth_buckets_uniform():
    stats = build_column_stats(list(range(1000)), n_buckets=100)
    assert len(stats.boundaries) == 101
    assert stats.boundaries[0] == 0
    assert stats.boundaries[-1] == 999
    widths = [b - a for a, b in zip(stats.boundaries[1:], stats.boundaries[2:])]
    assert all(w == 10 for w in widths)
    assert stats.ndv == 1000
    assert stats.null_fraction == 0.0


def test_all_null_column():
    stats = build_column_stats([None] * 50)
    assert stats.null_fraction == 1.0
    assert stats.boundaries == ()
    assert stats.ndv == 0


def test_boolean_column_stats():
    stats = build_column_stats([True] * 30 + [False] * 10 + [None] * 10)
    assert stats.bool_true_fraction == 0.75
    assert stats.null_fraction == pytest.approx(0.2)


def test_refresh_deterministic(store):
    c1 = refresh(store, label="S")
    c2 = refresh(store, label="S")
    assert c1.row_counts == c2.row_counts
    assert c1.columns == c2.columns


def test_unfiltered_single_table_is_exact(store):
    cat = refresh(store)
    q = SPJQuery.build(tables={"tx": "transactions"})
    assert estimate(cat, q) == store.row_count("transactions")


def test_uniform_key_join_estimate():
    store = Store()
    ops = [InsertRow("addresses", AddressRow(addr(0), 0))]  # miner
    ops += [
        InsertRow("addresses", AddressRow(bytes([1, i // 256, i % 256] + [0] * 17), 10**18))
        for i in range(1000)
    ]
    ops.append(InsertRow("blocks", make_block(0, miner=addr(0))))
    senders = [bytes([1, i // 256, i % 256] + [0] * 17) for i in range(500)]
    ops += [
        InsertRow("transactions", make_tx(i, 0, senders[i], None, 0, nonce=0, index=i))
        for i in range(500)
    ]
    apply_ops(store, ops)
    cat = refresh(store)
    q = SPJQuery.build(
        tables={"tx": "transactions", "a": "addresses"},
        joins=[("tx", "from_address", "a", "address")],
    )
    est = estimate(cat, q)
    actual = memstore.count(store, q)
    assert actual == 500
    assert est == pytest.approx(500, rel=0.01)


def test_correlated_filters_fool_independence():
    # Rows 0..99 have gas in [100k, 200k] and nonce 0..99; the nonce band
    # [900, 999] only hits rows whose gas is out of band. Each filter alone
    # keeps 10% of rows but their conjunction is empty.
    from dataclasses import replace

    store = Store()
    ops = [InsertRow("addresses", AddressRow(addr(1), 10**18)), InsertRow("blocks", make_block(0))]
    for i in range(1000):
        gas = 150_000 if i < 100 else 250_000
        row = replace(make_tx(i, 0, addr(1), None, 0, nonce=i, index=i), gas=gas)
        ops.append(InsertRow("transactions", row))
    apply_ops(store, ops)
    cat = refresh(store)
    q = SPJQuery.build(
        tables={"tx": "transactions"},
        filters=[
            Filter("tx", "gas", "range", (100_000, 200_000)),
            Filter("tx", "nonce", "range", (900, 999)),
        ],
    )
    actual = memstore.count(store, q)
    est = estimate(cat, q)
    assert actual == 0
    assert est == pytest.approx(1000 * 0.1 * 0.1, rel=0.2)  # ~10 rows predicted


def test_monotonicity_adding_filters(store):
    cat = refresh(store)
    base = SPJQuery.build(tables={"tx": "transactions"})
    filters = [
        Filter("tx", "gas", "range", (100_000, 700_000)),
        Filter("tx", "value", "ge", 10**15),
        Filter("tx", "transaction_type", "eq", 2),
    ]
    last = estimate(cat, base)
    for i in range(1, len(filters) + 1):
        q = SPJQuery.build(tables={"tx": "transactions"}, filters=filters[:i])
        est = estimate(cat, q)
        assert est <= last + 1e-9
        last = est


def test_uniform_range_qerror_bound(store):
    # gas is drawn uniformly; with >=100 rows per bucket the histogram keeps
    # single-table range estimates within 1.5x.
    cat = refresh(store)
    rng = random.Random(11)
    n = store.row_count("transactions")
    assert n >= 100 * 100
    from chainbench.eval_harness import qerror

    for _ in range(50):
        a, b = sorted((rng.randrange(21_000, 1_000_000), rng.randrange(21_000, 1_000_000)))
        if b - a < 50_000:  # skip slivers where counting noise dominates
            continue
        q = SPJQuery.build(tables={"tx": "transactions"}, filters=[Filter("tx", "gas", "range", (a, b))])
        est = estimate(cat, q)
        actual = memstore.count(store, q)
        assert qerror(est, actual) <= 1.5


def test_estimate_never_negative(store):
    cat = refresh(store)
    q = SPJQuery.build(
        tables={"tk": "tokens"},
        filters=[Filter("tk", "total_supply", "range", (10**40, 10**41))],
    )
    assert estimate(cat, q) >= 0.0


def test_missing_column_stats_error(store):
    cat = refresh(store, columns={("transactions", "gas")})
    q = SPJQuery.build(tables={"tx": "transactions"}, filters=[Filter("tx", "nonce", "ge", 5)])
    with pytest.raises(EstimateError, match="transactions.nonce"):
        estimate(cat, q)


def test_catalog_json_round_trip(store):
    cat = refresh(store, label="W1")
    clone = catalog_from_dict(catalog_to_dict(cat))
    assert clone.built_at == cat.built_at
    assert clone.row_counts == cat.row_counts
    assert clone.columns == cat.columns
    q = SPJQuery.build(
        tables={"tx": "transactions", "a": "addresses"},
        joins=[("tx", "from_address", "a", "address")],
        filters=[Filter("a", "eth_balance", "ge", 10**18)],
    )
    assert estimate(clone, q) == estimate(cat, q)
