"""Built-in query workload plus a loader for user-supplied query files.

Query files carry a leading comment block with ``-- id:``, ``-- features:``,
and ``-- tables:`` keys, then the SQL body. Files marked ``-- external: true``
ship metadata only; their bodies live outside this package and can be dropped
into a user directory to activate them. Q1 additionally has a structured
select-project-join form so the in-memory store can answer it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .memstore import Filter, SPJQuery


class QueryAssetError(ValueError):
    pass


@dataclass(frozen=True)
class QueryAsset:
    id: str
    features: frozenset[str]
    table_instances: int
    sql: str | None  # None when the body is external
    spj: SPJQuery | None = None

    @property
    def external(self) -> bool:
        return self.sql is None


def q1_spj() -> SPJQuery:
    """Structured form of the shipped five-table count query."""
    return SPJQuery.build(
        tables={
            "tx": "transactions",
            "tk": "tokens",
            "tk_tx": "token_transactions",
            "c": "contracts",
            "a": "addresses",
        },
        joins=[
            ("tx", "hash", "tk_tx", "transaction_hash"),
            ("tk_tx", "token_address", "tk", "address"),
            ("tx", "to_address", "c", "address"),
            ("tx", "from_address", "a", "address"),
        ],
        filters=[
            Filter("tx", "nonce", "range", (2_100_000, 4_200_000)),
            Filter("tk_tx", "value", "range", (1_000_000_000, 10_000_000_000)),
            Filter("tk", "name", "not_contains", "US"),
            Filter("c", "is_erc20", "is_true"),
            Filter("a", "eth_balance", "ge", 25_000_000_000_000_000),
        ],
    )


_SPJ_FORMS = {"Q1": q1_spj}


def _parse_query_file(name: str, text: str) -> QueryAsset:
    meta: dict[str, str] = {}
    body_lines: list[str] = []
    in_header = True
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if in_header and stripped.startswith("--"):
            content = stripped[2:].strip()
            if ":" not in content:
                raise QueryAssetError(f"{name}:{lineno}: malformed metadata line {line!r}")
            key, _, value = content.partition(":")
            meta[key.strip().lower()] = value.strip()
        else:
            in_header = False
            body_lines.append(line)
    if "id" not in meta:
        raise QueryAssetError(f"{name}: missing 'id' metadata")
    qid = meta["id"]
    try:
        tables = int(meta.get("tables", "0"))
    except ValueError:
        raise QueryAssetError(f"{name}: 'tables' must be an integer") from None
    features = frozenset(f.strip() for f in meta.get("features", "").split(",") if f.strip())
    external = meta.get("external", "").lower() in ("true", "1", "yes")
    sql = "\n".join(body_lines).strip()
    if external:
        if sql:
            raise QueryAssetError(f"{name}: external query must not carry a SQL body")
        sql_text = None
    else:
        if not sql:
            raise QueryAssetError(f"{name}: empty SQL body")
        sql_text = sql + "\n"
    spj_builder = _SPJ_FORMS.get(qid)
    return QueryAsset(
        id=qid,
        features=features,
        table_instances=tables,
        sql=sql_text,
        spj=spj_builder() if spj_builder else None,
    )


def builtin_assets() -> list[QueryAsset]:
    root = resources.files("chainbench").joinpath("assets/queries")
    assets = []
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".sql"):
            assets.append(_parse_query_file(entry.name, entry.read_text(encoding="utf-8")))
    return assets


def load_workload(user_dir: str | Path | None = None) -> list[QueryAsset]:
    """Built-in assets, overlaid with any ``*.sql`` files from ``user_dir``.

    A user file whose id matches a built-in replaces it (this is how the
    external bodies are supplied); new ids are appended.
    """
    assets = {a.id: a for a in builtin_assets()}
    order = list(assets)
    if user_dir is not None:
        for path in sorted(Path(user_dir).glob("*.sql")):
            asset = _parse_query_file(path.name, path.read_text(encoding="utf-8"))
            if asset.id not in assets:
                order.append(asset.id)
            assets[asset.id] = asset
    return [assets[qid] for qid in order]


def schema_sql() -> str:
    """The static schema-creation script shipped with the package."""
    return resources.files("chainbench").joinpath("assets/schema.sql").read_text(encoding="utf-8")
