import pytest

from chainbench import memstore
from chainbench.memstore import Store
from chainbench.sqlstub import (
    SqlParseError,
    SqlStubEngine,
    parse_literal,
    parse_script,
    split_statements,
    to_mutations,
)
from chainbench.synth_chain import SynthConfig, generate
from chainbench.workload_gen import WorkloadConfig, gen_batches, gen_initial, render_sql


def test_parse_literals():
    assert parse_literal("NULL") is None
    assert parse_literal("TRUE") is True
    assert parse_literal("FALSE") is False
    assert parse_literal("42") == 42
    assert parse_literal("-7") == -7
    assert parse_literal("'\\xdeadbeef'::bytea") == bytes.fromhex("deadbeef")
    assert parse_literal("'plain text'") == "plain text"
    assert parse_literal("'it''s, quoted; ok'") == "it's, quoted; ok"
    assert parse_literal("ARRAY[]::bytea[]") == ()
    assert parse_literal("ARRAY['\\x01020304'::bytea, '\\x0a0b0c0d'::bytea]") == (
        b"\x01\x02\x03\x04",
        b"\x0a\x0b\x0c\x0d",
    )


def test_split_statements_respects_strings():
    script = "-- comment; with semicolon\nBEGIN;\nINSERT INTO Tokens (name) VALUES ('a;b');\nCOMMIT;\n"
    stmts = split_statements(script)
    assert len(stmts) == 3
    assert "a;b" in stmts[1]


def test_unsupported_statement_rejected():
    with pytest.raises(SqlParseError, match="unsupported statement"):
        parse_script("SELECT 1;")


def test_script_application_is_atomic():
    engine = SqlStubEngine()
    good = (
        "BEGIN;\n"
        "INSERT INTO Addresses (address, eth_balance) VALUES ('\\x" + "01" * 20 + "'::bytea, 5);\n"
        "COMMIT;\n"
    )
    engine.execute(good)
    dup = (
        "BEGIN;\n"
        "INSERT INTO Addresses (address, eth_balance) VALUES ('\\x" + "02" * 20 + "'::bytea, 1);\n"
        "INSERT INTO Addresses (address, eth_balance) VALUES ('\\x" + "01" * 20 + "'::bytea, 9);\n"
        "COMMIT;\n"
    )
    # BEGIN/COMMIT are dropped at parse time, so the duplicate is statement 1.
    with pytest.raises(SqlParseError, match="statement 1.*duplicate"):
        engine.execute(dup)
    multis = engine.table_multisets()
    assert sum(multis["addresses"].values()) == 1  # the failed script left nothing behind


@pytest.mark.parametrize("seed,expire", [(101, False), (102, True)])
def test_sql_text_equals_structured_replay(seed, expire):
    ds = generate(SynthConfig(seed=seed, n_blocks=50, mean_tx_per_block=10, address_pool=50, n_tokens=6))
    cfg = WorkloadConfig(init_blocks=25, granularity=5, expire=expire)
    load = gen_initial(ds, cfg)
    pairs, _ = gen_batches(ds, cfg)

    store = Store()
    engine = SqlStubEngine()
    memstore.apply(store, load)
    engine.execute(render_sql(load))
    for pair in pairs:
        if pair.expire is not None:
            memstore.apply(store, pair.expire)
            engine.execute(render_sql(pair.expire))
        memstore.apply(store, pair.upsert)
        engine.execute(render_sql(pair.upsert))
        assert store.table_multisets() == engine.table_multisets()


def test_to_mutations_round_trip():
    ds = generate(SynthConfig(seed=103, n_blocks=30, mean_tx_per_block=8, address_pool=40, n_tokens=4))
    cfg = WorkloadConfig(init_blocks=15, granularity=5, expire=True)
    load = gen_initial(ds, cfg)
    pairs, _ = gen_batches(ds, cfg)

    direct = Store()
    via_sql = Store()
    for batch in [load] + [b for p in pairs for b in (p.expire, p.upsert) if b is not None]:
        memstore.apply_ops(direct, batch.ops)
        memstore.apply_ops(via_sql, to_mutations(parse_script(render_sql(batch))))
    assert direct.table_multisets() == via_sql.table_multisets()
    assert direct.balances == via_sql.balances
