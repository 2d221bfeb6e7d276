"""Independent oracles and handcrafted fixtures shared across tests.

The evaluators here deliberately reimplement semantics (predicates, joins,
subgraph connectivity) instead of importing the production code paths they
check.
"""

from __future__ import annotations

import itertools
import random

from chainbench.chain_model import (
    AddressRow,
    Block,
    ChainDataset,
    Contract,
    Token,
    TokenTransaction,
    Transaction,
    Withdrawal,
)
from chainbench.memstore import Filter, SPJQuery, Store


def _oracle_matches(f: Filter, row) -> bool:
    v = getattr(row, f.column)
    if v is None:
        return False
    if f.op == "range":
        return f.value[0] <= v <= f.value[1]
    if f.op == "eq":
        return v == f.value
    if f.op == "ne":
        return v != f.value
    if f.op == "is_true":
        return v is True
    if f.op == "is_false":
        return v is False
    if f.op == "contains":
        return f.value in v
    if f.op == "not_contains":
        return f.value not in v
    if f.op == "ge":
        return v >= f.value
    if f.op == "le":
        return v <= f.value
    raise AssertionError(f.op)


def nested_loop_count(store: Store, q: SPJQuery) -> int:
    """Naive nested-loop evaluation of a select-project-join count."""
    amap = q.alias_map
    aliases = sorted(amap)
    rows = {
        alias: [
            r
            for r in store.rows(amap[alias])
            if all(_oracle_matches(f, r) for f in q.filters if f.alias == alias)
        ]
        for alias in aliases
    }

    def edges_ready(bound: dict, alias: str):
        for e in q.joins:
            other = None
            if e.left_alias == alias and e.right_alias in bound:
                other = (e.left_column, e.right_alias, e.right_column)
            elif e.right_alias == alias and e.left_alias in bound:
                other = (e.right_column, e.left_alias, e.left_column)
            if other:
                yield other

    def recurse(i: int, bound: dict) -> int:
        if i == len(aliases):
            return 1
        alias = aliases[i]
        total = 0
        for row in rows[alias]:
            ok = True
            for my_col, other_alias, other_col in edges_ready(bound, alias):
                mine = getattr(row, my_col)
                theirs = getattr(bound[other_alias], other_col)
                if mine is None or theirs is None or mine != theirs:
                    ok = False
                    break
            if ok:
                bound[alias] = row
                total += recurse(i + 1, bound)
                del bound[alias]
        return total

    return recurse(0, {})


def brute_force_connected_subsets(aliases, edges, max_size):
    """All connected induced alias subsets of size <= max_size, by enumeration."""
    adjacent = {a: set() for a in aliases}
    for left, right in edges:
        adjacent[left].add(right)
        adjacent[right].add(left)

    def connected(subset) -> bool:
        members = set(subset)
        seen = {subset[0]}
        frontier = [subset[0]]
        while frontier:
            for nxt in adjacent[frontier.pop()]:
                if nxt in members and nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return seen == members

    out = []
    for size in range(1, max_size + 1):
        for combo in itertools.combinations(sorted(aliases), size):
            if connected(combo):
                out.append(frozenset(combo))
    return out


# Join edges of the schema, used to synthesize random well-formed queries.
SCHEMA_JOIN_EDGES = [
    ("transactions", "block_hash", "blocks", "hash"),
    ("transactions", "from_address", "addresses", "address"),
    ("transactions", "to_address", "addresses", "address"),
    ("transactions", "to_address", "contracts", "address"),
    ("token_transactions", "transaction_hash", "transactions", "hash"),
    ("token_transactions", "token_address", "tokens", "address"),
    ("withdrawals", "hash", "blocks", "hash"),
    ("withdrawals", "address", "addresses", "address"),
    ("contracts", "address", "addresses", "address"),
    ("tokens", "address", "addresses", "address"),
    ("tokens", "block_hash", "blocks", "hash"),
    ("contracts", "block_hash", "blocks", "hash"),
    ("blocks", "miner", "addresses", "address"),
]

_FILTER_POOL = {
    "blocks": [
        lambda rng: Filter("blocks", "number", "range", tuple(sorted((rng.randrange(0, 200), rng.randrange(0, 200))))),
        lambda rng: Filter("blocks", "size", "ge", rng.randrange(20_000, 200_000)),
    ],
    "addresses": [
        lambda rng: Filter("addresses", "eth_balance", "ge", 10 ** rng.randrange(15, 22)),
    ],
    "transactions": [
        lambda rng: Filter("transactions", "nonce", "range", tuple(sorted((rng.randrange(0, 3_000_000), rng.randrange(0, 3_000_000))))),
        lambda rng: Filter("transactions", "gas", "range", tuple(sorted((rng.randrange(21_000, 1_000_000), rng.randrange(21_000, 1_000_000))))),
        lambda rng: Filter("transactions", "value", "ge", 10 ** rng.randrange(12, 19)),
        lambda rng: Filter("transactions", "transaction_type", "eq", rng.choice((0, 1, 2))),
    ],
    "contracts": [
        lambda rng: Filter("contracts", "is_erc20", rng.choice(("is_true", "is_false"))),
        lambda rng: Filter("contracts", "version", "eq", 1),
    ],
    "tokens": [
        lambda rng: Filter("tokens", "name", rng.choice(("contains", "not_contains")), "US"),
        lambda rng: Filter("tokens", "decimals", "eq", 18),
        lambda rng: Filter("tokens", "total_supply", "ge", 10 ** rng.randrange(10, 28)),
    ],
    "token_transactions": [
        lambda rng: Filter("token_transactions", "value", "range", tuple(sorted((10 ** rng.randrange(6, 14), 10 ** rng.randrange(6, 14))))),
        lambda rng: Filter("token_transactions", "log_index", "le", rng.randrange(0, 50)),
    ],
    "withdrawals": [
        lambda rng: Filter("withdrawals", "amount", "ge", 10 ** rng.randrange(15, 18)),
        lambda rng: Filter("withdrawals", "validator", "le", rng.randrange(10, 1000)),
    ],
}


def random_spj(rng: random.Random, max_tables: int = 3) -> SPJQuery:
    """A random connected query over the schema join graph (tables as aliases)."""
    n = rng.randrange(1, max_tables + 1)
    start = rng.choice(sorted(_FILTER_POOL))
    chosen = {start}
    joins = []
    while len(chosen) < n:
        candidates = [
            e for e in SCHEMA_JOIN_EDGES
            if (e[0] in chosen) != (e[2] in chosen)
        ]
        if not candidates:
            break
        edge = rng.choice(candidates)
        joins.append(edge)
        chosen.add(edge[0])
        chosen.add(edge[2])
    filters = []
    for table in sorted(chosen):
        for maker in _FILTER_POOL[table]:
            if rng.random() < 0.4:
                filters.append(maker(rng))
    return SPJQuery.build(
        tables={t: t for t in chosen},
        joins=[(e[0], e[1], e[2], e[3]) for e in joins],
        filters=filters,
    )


# ---------------------------------------------------------------------------
# Handcrafted rows for edge-case tests


def addr(i: int) -> bytes:
    return i.to_bytes(4, "big") * 5


def hsh(i: int) -> bytes:
    return i.to_bytes(4, "big") * 8


def make_block(i: int, timestamp: int | None = None, miner: bytes | None = None) -> Block:
    return Block(
        hash=hsh(i),
        number=i,
        timestamp=timestamp if timestamp is not None else 1000 + 12 * i,
        extra_data=b"",
        base_fee_per_gas=10**9,
        size=50_000,
        miner=miner if miner is not None else addr(1),
    )


def make_tx(i: int, block: int, sender: bytes, to: bytes | None, value: int, nonce: int, index: int = 0) -> Transaction:
    return Transaction(
        hash=hsh(100 + i),
        transaction_index=index,
        value=value,
        from_address=sender,
        to_address=to,
        gas=21_000,
        max_priority_fee_per_gas=None,
        input=b"",
        block_hash=hsh(block),
        transaction_type=2,
        nonce=nonce,
    )


def tiny_dataset() -> ChainDataset:
    """Three blocks, two user addresses, one token+contract, one withdrawal."""
    a1, a2, tk = addr(1), addr(2), addr(3)
    blocks = (make_block(0), make_block(1), make_block(2))
    txs = (
        make_tx(0, 1, a1, a2, 50, nonce=7, index=0),
        make_tx(1, 1, a1, None, 0, nonce=8, index=1),  # creation: no receiver
        make_tx(2, 2, a2, a1, 20, nonce=3, index=0),
    )
    token = Token(address=tk, symbol="TOK", name="tok-token", decimals=18, total_supply=10**24, block_hash=hsh(0))
    contract = Contract(
        address=tk, version=1, function_sighashes=(b"\x01\x02\x03\x04",),
        bytecode=b"\x60\x60", is_erc20=True, is_erc721=False, block_hash=hsh(0),
    )
    token_tx = TokenTransaction(transaction_hash=hsh(101), log_index=0, token_address=tk, value=5 * 10**9)
    withdrawal = Withdrawal(hash=hsh(2), withdrawal_index=0, validator=9, address=a2, amount=1000)
    balances = {a1: 10_000 - 50 + 20, a2: 10_000 + 50 - 20 + 1000, tk: 0}
    addresses = tuple(AddressRow(a, balances[a]) for a in sorted(balances))
    return ChainDataset(
        blocks=blocks,
        addresses=addresses,
        transactions=txs,
        contracts=(contract,),
        tokens=(token,),
        token_transactions=(token_tx,),
        withdrawals=(withdrawal,),
        final_balances=balances,
        final_block=2,
    )
