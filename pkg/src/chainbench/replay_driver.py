"""Apply a generated workload directory to a target, in order, with optional
real-time pacing and checkpointed resume.

Order is strict: the load first, then per batch the expire file (when
present) followed by the upsert file. Each file is applied atomically by the
target, and a checkpoint is written after every batch, so a halted replay can
resume without re-applying completed batches. The crash window between a
target commit and the checkpoint write is the target's concern: durable
targets should bind the checkpoint into the same transaction or tolerate
replayed duplicates; the bundled in-process targets never expose it because
they die with the process.

Between batches, registered hooks run synchronously on the replay thread;
that is where drift probes and other experiments observe each state.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .memstore import BatchRejected, Store, apply_ops
from .sqlstub import SqlStubEngine, parse_script, to_mutations
from .workload_gen import Manifest


class ReplayError(RuntimeError):
    def __init__(self, message: str, batch_index: int | None = None, statement: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index
        self.statement = statement


class CheckpointMismatch(ReplayError):
    pass


@dataclass(frozen=True)
class SqlExecutorCaps:
    can_execute: bool = True
    can_estimate_cardinality: bool = False
    can_report_cost: bool = False
    can_refresh_stats: bool = False
    can_pin_plan: bool = False


class MemstoreTarget:
    """Replay target that recovers structured mutations from the SQL text."""

    kind = "memstore"

    def __init__(self, store: Store | None = None, cap_overrides: dict | None = None):
        self.store = store if store is not None else Store()
        self._cap_overrides = cap_overrides or {}

    def apply_script(self, name: str, text: str) -> None:
        ops = to_mutations(parse_script(text))
        try:
            apply_ops(self.store, ops)
        except BatchRejected as exc:
            raise ReplayError(f"{name}: {exc}", statement=exc.op_index) from exc

    def capabilities(self) -> SqlExecutorCaps:
        base = SqlExecutorCaps(can_execute=True, can_estimate_cardinality=True, can_refresh_stats=True)
        return replace_caps(base, self._cap_overrides)


class SqlStubTarget:
    """Replay target executing the SQL text against the stub engine."""

    kind = "sqlstub"

    def __init__(self, engine: SqlStubEngine | None = None, cap_overrides: dict | None = None):
        self.engine = engine if engine is not None else SqlStubEngine()
        self._cap_overrides = cap_overrides or {}

    def apply_script(self, name: str, text: str) -> None:
        try:
            self.engine.execute(text)
        except Exception as exc:
            raise ReplayError(f"{name}: {exc}") from exc

    def capabilities(self) -> SqlExecutorCaps:
        return replace_caps(SqlExecutorCaps(can_execute=True), self._cap_overrides)


def replace_caps(caps: SqlExecutorCaps, overrides: dict) -> SqlExecutorCaps:
    """Apply config-file capability overrides; only downgrades are honest, but
    the declared surface is the operator's call."""
    if not overrides:
        return caps
    fields = {k: getattr(caps, k) for k in SqlExecutorCaps.__dataclass_fields__}
    for key, value in overrides.items():
        if key not in fields:
            raise ReplayError(f"unknown capability {key!r}")
        fields[key] = bool(value)
    return SqlExecutorCaps(**fields)


def connect_target(config: dict):
    """Build a target from a connection config: {"kind": ..., "capabilities": {...}}."""
    kind = config.get("kind")
    overrides = config.get("capabilities")
    if kind == "memstore":
        return MemstoreTarget(cap_overrides=overrides)
    if kind == "sqlstub":
        return SqlStubTarget(cap_overrides=overrides)
    raise ReplayError(f"no driver for target kind {kind!r}")


def load_target_config(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass(frozen=True)
class Hook:
    """Between-batch callback: fn(batch_index, target)."""

    fn: Callable[[int, object], None]
    continue_on_error: bool = False


@dataclass
class ReplayCheckpoint:
    manifest_hash: str
    last_batch: int  # last fully completed batch (0 = load)
    partial_files: list[str] = field(default_factory=list)  # applied files of the next batch
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return {
            "manifest_hash": self.manifest_hash,
            "last_batch": self.last_batch,
            "partial_files": list(self.partial_files),
            "wall_clock": self.wall_clock,
        }


@dataclass
class ReplayReport:
    resumed_from: int | None
    applied: list[dict] = field(default_factory=list)  # {"index", "files", "ms"}
    hook_errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"resumed_from": self.resumed_from, "applied": self.applied, "hook_errors": self.hook_errors}


def manifest_hash(workload_dir: str | Path) -> str:
    return hashlib.sha256((Path(workload_dir) / "manifest.json").read_bytes()).hexdigest()


def read_manifest(workload_dir: str | Path) -> Manifest:
    with open(Path(workload_dir) / "manifest.json", encoding="utf-8") as fh:
        return Manifest.from_dict(json.load(fh))


def pacing_delays(manifest: Manifest, scale: float) -> list[float]:
    """Per-batch pre-apply sleep: first-block timestamp gap / scale."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    delays = [0.0]
    for prev, cur in zip(manifest.batches, manifest.batches[1:]):
        delays.append(max(0.0, (cur.first_timestamp - prev.first_timestamp) / scale))
    return delays


def _checkpoint_path(workload_dir: Path) -> Path:
    return workload_dir / "replay.ckpt.json"


def _write_checkpoint(workload_dir: Path, ckpt: ReplayCheckpoint) -> None:
    path = _checkpoint_path(workload_dir)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(ckpt.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def read_checkpoint(workload_dir: str | Path) -> ReplayCheckpoint | None:
    path = _checkpoint_path(Path(workload_dir))
    if not path.exists():
        return None
    data = json.loads(path.read_text(encoding="utf-8"))
    return ReplayCheckpoint(
        data["manifest_hash"], data["last_batch"], data.get("partial_files", []), data["wall_clock"]
    )


def _run_hooks(hooks: Sequence[Hook], index: int, target, report: ReplayReport) -> None:
    for hook in hooks:
        try:
            hook.fn(index, target)
        except Exception as exc:
            if hook.continue_on_error:
                report.hook_errors.append(f"batch {index}: {exc}")
            else:
                raise ReplayError(f"hook failed after batch {index}: {exc}", batch_index=index) from exc


def replay(
    target,
    workload_dir: str | Path,
    mode: str = "max-speed",
    scale: float = 1.0,
    from_checkpoint: bool = False,
    hooks: Sequence[Hook] = (),
    sleep: Callable[[float], None] = time.sleep,
) -> ReplayReport:
    """Apply load then every batch in order; checkpoint after each batch.

    ``mode="realtime"`` sleeps the inter-batch first-block timestamp gap
    divided by ``scale`` before each subsequent batch.
    """
    if mode not in ("max-speed", "realtime"):
        raise ReplayError(f"unknown mode {mode!r}")
    wdir = Path(workload_dir)
    manifest = read_manifest(wdir)
    digest = manifest_hash(wdir)

    completed = -1
    partial: set[str] = set()
    resumed_from = None
    if from_checkpoint:
        ckpt = read_checkpoint(wdir)
        if ckpt is not None:
            if ckpt.manifest_hash != digest:
                raise CheckpointMismatch("checkpoint does not match this workload manifest; refusing to resume")
            completed = ckpt.last_batch
            partial = set(ckpt.partial_files)
            resumed_from = ckpt.last_batch

    report = ReplayReport(resumed_from=resumed_from)
    delays = pacing_delays(manifest, scale) if mode == "realtime" else None

    def run_unit(index: int, names: list[str]) -> None:
        # A batch may span two files (expire + upserts). Each file is one
        # target transaction, so the checkpoint tracks file progress: a crash
        # between the files resumes with the remaining file only.
        nonlocal completed, partial
        for name in names:
            if name in partial:
                continue
            start = time.perf_counter()
            try:
                target.apply_script(name, (wdir / name).read_text(encoding="utf-8"))
            except ReplayError as exc:
                raise ReplayError(str(exc), batch_index=index, statement=exc.statement) from exc
            elapsed = (time.perf_counter() - start) * 1000.0
            partial.add(name)
            _write_checkpoint(wdir, ReplayCheckpoint(digest, completed, sorted(partial), time.time()))
            report.applied.append({"index": index, "file": name, "ms": elapsed})
        completed = index
        partial = set()
        _write_checkpoint(wdir, ReplayCheckpoint(digest, completed, [], time.time()))

    if completed < 0:
        run_unit(0, ["load.sql"])
        _run_hooks(hooks, 0, target, report)

    for pos, info in enumerate(manifest.batches):
        if info.index <= completed:
            continue
        if delays is not None and delays[pos] > 0:
            sleep(delays[pos])
        names = []
        if manifest.expire:
            names.append(f"expire-{info.index:06d}.sql")
        names.append(f"upserts-{info.index:06d}.sql")
        run_unit(info.index, names)
        _run_hooks(hooks, info.index, target, report)

    return report
