"""Minimal scripted SQL-text engine for the emitted workload dialect.

Parses exactly the statement shapes the workload renderer produces (INSERT,
balance UPDATE, block_hash NULL-out, keyed DELETE, BEGIN/COMMIT) and applies
them to plain column-tuple tables. It shares no table or index code with the
in-memory store, which is what makes SQL-text replay a meaningful independent
check against structured replay. Each script is applied atomically.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .chain_model import PRIMARY_KEYS, ROW_TYPES, SCHEMA
from .memstore import DeleteRow, InsertRow, Mutation, NullBlockHash, UpdateBalance

_TABLE_BY_SQL_NAME = {
    "blocks": "blocks",
    "addresses": "addresses",
    "transactions": "transactions",
    "contracts": "contracts",
    "tokens": "tokens",
    "token_transactions": "token_transactions",
    "withdrawals": "withdrawals",
}


class SqlParseError(ValueError):
    pass


@dataclass(frozen=True)
class ParsedInsert:
    table: str
    values: dict[str, object]


@dataclass(frozen=True)
class ParsedBalanceUpdate:
    address: bytes
    delta: int


@dataclass(frozen=True)
class ParsedNullOut:
    table: str
    conditions: dict[str, object]


@dataclass(frozen=True)
class ParsedDelete:
    table: str
    conditions: dict[str, object]


ParsedStatement = ParsedInsert | ParsedBalanceUpdate | ParsedNullOut | ParsedDelete


def split_statements(script: str) -> list[str]:
    """Split on top-level semicolons, honoring single-quoted strings."""
    body = "\n".join(line for line in script.splitlines() if not line.lstrip().startswith("--"))
    statements: list[str] = []
    buf: list[str] = []
    in_string = False
    i = 0
    while i < len(body):
        ch = body[i]
        if in_string:
            buf.append(ch)
            if ch == "'":
                if i + 1 < len(body) and body[i + 1] == "'":
                    buf.append("'")
                    i += 1
                else:
                    in_string = False
        elif ch == "'":
            in_string = True
            buf.append(ch)
        elif ch == ";":
            stmt = "".join(buf).strip()
            if stmt:
                statements.append(stmt)
            buf = []
        else:
            buf.append(ch)
        i += 1
    trailing = "".join(buf).strip()
    if trailing:
        raise SqlParseError(f"unterminated statement: {trailing[:60]!r}")
    return statements


def _split_top_level(text: str, separator: str = ",") -> list[str]:
    parts: list[str] = []
    buf: list[str] = []
    depth = 0
    in_string = False
    i = 0
    while i < len(text):
        ch = text[i]
        if in_string:
            buf.append(ch)
            if ch == "'":
                if i + 1 < len(text) and text[i + 1] == "'":
                    buf.append("'")
                    i += 1
                else:
                    in_string = False
        elif ch == "'":
            in_string = True
            buf.append(ch)
        elif ch in "([":
            depth += 1
            buf.append(ch)
        elif ch in ")]":
            depth -= 1
            buf.append(ch)
        elif ch == separator and depth == 0:
            parts.append("".join(buf).strip())
            buf = []
        else:
            buf.append(ch)
        i += 1
    last = "".join(buf).strip()
    if last:
        parts.append(last)
    return parts


_INT_RE = re.compile(r"^-?\d+$")


def parse_literal(token: str):
    token = token.strip()
    if token == "NULL":
        return None
    if token == "TRUE":
        return True
    if token == "FALSE":
        return False
    if _INT_RE.match(token):
        return int(token)
    if token.startswith("ARRAY"):
        if token == "ARRAY[]::bytea[]":
            return ()
        inner = token[token.index("[") + 1 : token.rindex("]")]
        return tuple(parse_literal(item) for item in _split_top_level(inner))
    if token.startswith("'"):
        end = 1
        chars: list[str] = []
        while end < len(token):
            if token[end] == "'":
                if end + 1 < len(token) and token[end + 1] == "'":
                    chars.append("'")
                    end += 2
                    continue
                break
            chars.append(token[end])
            end += 1
        else:
            raise SqlParseError(f"unterminated string literal: {token!r}")
        text = "".join(chars)
        suffix = token[end + 1 :].strip()
        if suffix == "::bytea":
            if not text.startswith("\\x"):
                raise SqlParseError(f"bad bytea literal: {token!r}")
            return bytes.fromhex(text[2:])
        if suffix:
            raise SqlParseError(f"unexpected literal suffix: {suffix!r}")
        return text
    raise SqlParseError(f"cannot parse literal: {token!r}")


_INSERT_RE = re.compile(r"^INSERT\s+INTO\s+(\w+)\s*\(([^)]*)\)\s*VALUES\s*\((.*)\)$", re.S)
_BALANCE_RE = re.compile(
    r"^UPDATE\s+Addresses\s+SET\s+eth_balance\s*=\s*eth_balance\s*([+-])\s*(\d+)\s+WHERE\s+(.*)$",
    re.S,
)
_NULLOUT_RE = re.compile(r"^UPDATE\s+(\w+)\s+SET\s+block_hash\s*=\s*NULL\s+WHERE\s+(.*)$", re.S)
_DELETE_RE = re.compile(r"^DELETE\s+FROM\s+(\w+)\s+WHERE\s+(.*)$", re.S)


def _table_of(sql_name: str) -> str:
    table = _TABLE_BY_SQL_NAME.get(sql_name.lower())
    if table is None:
        raise SqlParseError(f"unknown table {sql_name!r}")
    return table


def _parse_conditions(text: str) -> dict[str, object]:
    # Key columns are bytes or integers, so " AND " can never appear inside a
    # condition literal.
    conditions: dict[str, object] = {}
    for clause in re.split(r"\s+AND\s+", text.strip()):
        if "=" not in clause:
            raise SqlParseError(f"cannot parse condition {clause!r}")
        col, _, lit = clause.partition("=")
        conditions[col.strip()] = parse_literal(lit.strip())
    return conditions


def parse_statement(stmt: str) -> ParsedStatement | None:
    """Parse one statement; BEGIN/COMMIT yield None."""
    flat = stmt.strip()
    if flat.upper() in ("BEGIN", "COMMIT"):
        return None
    m = _INSERT_RE.match(flat)
    if m:
        table = _table_of(m.group(1))
        names = [c.strip() for c in m.group(2).split(",")]
        literals = _split_top_level(m.group(3))
        if len(names) != len(literals):
            raise SqlParseError(f"column/value arity mismatch in {flat[:60]!r}")
        return ParsedInsert(table, {n: parse_literal(v) for n, v in zip(names, literals)})
    m = _BALANCE_RE.match(flat)
    if m:
        sign = -1 if m.group(1) == "-" else 1
        conditions = _parse_conditions(m.group(3))
        if set(conditions) != {"address"}:
            raise SqlParseError(f"balance update must key on address: {flat[:60]!r}")
        return ParsedBalanceUpdate(conditions["address"], sign * int(m.group(2)))
    m = _NULLOUT_RE.match(flat)
    if m:
        return ParsedNullOut(_table_of(m.group(1)), _parse_conditions(m.group(2)))
    m = _DELETE_RE.match(flat)
    if m:
        return ParsedDelete(_table_of(m.group(1)), _parse_conditions(m.group(2)))
    raise SqlParseError(f"unsupported statement: {flat[:80]!r}")


def parse_script(script: str) -> list[ParsedStatement]:
    parsed = []
    for stmt in split_statements(script):
        p = parse_statement(stmt)
        if p is not None:
            parsed.append(p)
    return parsed


def to_mutations(statements: list[ParsedStatement]) -> list[Mutation]:
    """Recover structured mutations from parsed SQL for store-backed targets."""
    ops: list[Mutation] = []
    for s in statements:
        if isinstance(s, ParsedInsert):
            ops.append(InsertRow(s.table, ROW_TYPES[s.table](**s.values)))
        elif isinstance(s, ParsedBalanceUpdate):
            ops.append(UpdateBalance(s.address, s.delta))
        elif isinstance(s, ParsedNullOut):
            key = tuple(s.conditions[col] for col in PRIMARY_KEYS[s.table])
            ops.append(NullBlockHash(s.table, key))
        elif isinstance(s, ParsedDelete):
            if set(s.conditions) != set(PRIMARY_KEYS[s.table]):
                raise SqlParseError(f"delete on {s.table} must key on the primary key")
            key = tuple(s.conditions[col] for col in PRIMARY_KEYS[s.table])
            ops.append(DeleteRow(s.table, key))
    return ops


class SqlStubEngine:
    """Executes workload scripts against plain column-tuple tables."""

    def __init__(self) -> None:
        self.tables: dict[str, dict[tuple, tuple]] = {t: {} for t in SCHEMA}
        self._columns = {t: [name for name, _ in cols] for t, cols in SCHEMA.items()}
        self._key_pos = {
            t: [self._columns[t].index(c) for c in PRIMARY_KEYS[t]] for t in SCHEMA
        }

    def execute(self, script: str) -> None:
        """Parse and apply a whole script atomically."""
        statements = parse_script(script)
        undo: list = []
        try:
            for i, s in enumerate(statements):
                try:
                    undo.append(self._apply(s))
                except SqlParseError as exc:
                    raise SqlParseError(f"statement {i}: {exc}") from exc
        except Exception:
            for action in reversed(undo):
                action()
            raise

    def _key_of(self, table: str, row: tuple) -> tuple:
        return tuple(row[i] for i in self._key_pos[table])

    def _apply(self, s: ParsedStatement):
        if isinstance(s, ParsedInsert):
            row = tuple(s.values[c] for c in self._columns[s.table])
            key = self._key_of(s.table, row)
            if key in self.tables[s.table]:
                raise SqlParseError(f"{s.table}: duplicate key {key!r}")
            self.tables[s.table][key] = row
            return lambda: self.tables[s.table].pop(key)
        if isinstance(s, ParsedBalanceUpdate):
            key = (s.address,)
            old = self.tables["addresses"].get(key)
            if old is None:
                raise SqlParseError("addresses: no row to update")
            new = (old[0], old[1] + s.delta)
            self.tables["addresses"][key] = new

            def undo_balance(old=old, key=key):
                self.tables["addresses"][key] = old

            return undo_balance
        if isinstance(s, (ParsedNullOut, ParsedDelete)):
            table = self.tables[s.table]
            cols = self._columns[s.table]
            pos = {c: cols.index(c) for c in s.conditions}
            matches = [k for k, row in table.items() if all(row[pos[c]] == v for c, v in s.conditions.items())]
            if isinstance(s, ParsedDelete):
                removed = {k: table.pop(k) for k in matches}

                def undo_delete(removed=removed, table=table):
                    table.update(removed)

                return undo_delete
            bh = cols.index("block_hash")
            before = {k: table[k] for k in matches}
            for k in matches:
                row = table[k]
                table[k] = row[:bh] + (None,) + row[bh + 1 :]

            def undo_null(before=before, table=table):
                table.update(before)

            return undo_null
        raise SqlParseError(f"unknown statement type {type(s).__name__}")

    def table_multisets(self) -> dict[str, dict[tuple, int]]:
        out: dict[str, dict[tuple, int]] = {}
        for table, rows in self.tables.items():
            counts: dict[tuple, int] = {}
            for row in rows.values():
                counts[row] = counts.get(row, 0) + 1
            out[table] = counts
        return out
