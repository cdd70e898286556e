"""Experience replay buffers and the ERB-JSONL file format."""

from __future__ import annotations

import gzip
import io
import json
import math
from dataclasses import InitVar, dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

FORMAT_NAME = "erb"
FORMAT_VERSION = 1
METHODS = ("coreset", "uniform", "icdf", "sensitivity", "group")


class ERBError(Exception):
    """Base class for replay-buffer errors."""


class FormatError(ERBError, ValueError):
    """Malformed ERB-JSONL input."""


class VersionError(FormatError):
    pass


class CountMismatchError(FormatError):
    pass


class InvariantError(ERBError, ValueError):
    """A buffer or compressed buffer violates its invariants."""


class DimensionError(InvariantError):
    pass


def _as_vector(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"observation must be 1-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Experience:
    """One (obs, action, reward, next_obs, terminal) transition.

    Observation arrays may be shared between experiences; treat them as
    read-only.
    """

    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    terminal: bool

    def __post_init__(self):
        if type(self.obs) is not np.ndarray or self.obs.dtype != np.float64:
            object.__setattr__(self, "obs", _as_vector(self.obs))
        if type(self.next_obs) is not np.ndarray or self.next_obs.dtype != np.float64:
            object.__setattr__(self, "next_obs", _as_vector(self.next_obs))
        if self.obs.shape != self.next_obs.shape:
            raise DimensionError(
                f"obs and next_obs lengths differ: {self.obs.shape[0]} vs {self.next_obs.shape[0]}"
            )
        reward = float(self.reward)
        if not math.isfinite(reward):
            raise InvariantError(f"reward must be finite, got {self.reward!r}")
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "action", int(self.action))
        object.__setattr__(self, "terminal", bool(self.terminal))

    def __eq__(self, other):
        if not isinstance(other, Experience):
            return NotImplemented
        return (
            self.action == other.action
            and _float_bits_equal(self.reward, other.reward)
            and self.terminal == other.terminal
            and np.array_equal(self.obs.view(np.uint64), other.obs.view(np.uint64))
            and np.array_equal(self.next_obs.view(np.uint64), other.next_obs.view(np.uint64))
        )

    __hash__ = None


def _float_bits_equal(a: float, b: float) -> bool:
    return np.float64(a).view(np.uint64) == np.float64(b).view(np.uint64)


def _check_experience(e: Experience, obs_dim: int, num_actions: int) -> None:
    if e.obs.shape[0] != obs_dim:
        raise DimensionError(f"observation length {e.obs.shape[0]} != obs_dim {obs_dim}")
    if not 0 <= e.action < num_actions:
        raise InvariantError(f"action {e.action} outside [0, {num_actions})")


@dataclass(eq=False)
class ReplayBuffer:
    """Ordered store of experiences with optional FIFO capacity."""

    obs_dim: int
    num_actions: int
    env_id: str = ""
    capacity: int | None = None
    experiences: list[Experience] = field(default_factory=list)

    def __post_init__(self):
        if self.obs_dim < 1 or self.num_actions < 1:
            raise InvariantError("obs_dim and num_actions must be positive")
        if self.capacity is not None and self.capacity < 1:
            raise InvariantError("capacity must be positive")
        self.experiences = list(self.experiences)
        for e in self.experiences:
            _check_experience(e, self.obs_dim, self.num_actions)
        if self.capacity is not None and len(self.experiences) > self.capacity:
            del self.experiences[: len(self.experiences) - self.capacity]

    @classmethod
    def trusted(cls, obs_dim: int, num_actions: int, env_id: str, experiences: list[Experience]) -> "ReplayBuffer":
        """Build without per-experience checks; callers guarantee validity."""
        buf = cls(obs_dim, num_actions, env_id)
        buf.experiences = experiences
        return buf

    def __len__(self) -> int:
        return len(self.experiences)

    def __iter__(self):
        return iter(self.experiences)

    def __getitem__(self, i):
        return self.experiences[i]

    def __eq__(self, other):
        if not isinstance(other, ReplayBuffer):
            return NotImplemented
        return (
            self.obs_dim == other.obs_dim
            and self.num_actions == other.num_actions
            and self.env_id == other.env_id
            and self.experiences == other.experiences
        )

    def append(self, e: Experience) -> "ReplayBuffer":
        """Add `e` as the newest element, evicting the oldest when full."""
        _check_experience(e, self.obs_dim, self.num_actions)
        self.experiences.append(e)
        if self.capacity is not None and len(self.experiences) > self.capacity:
            del self.experiences[0]
        return self

    def extend(self, items: Iterable[Experience]) -> "ReplayBuffer":
        for e in items:
            self.append(e)
        return self

    def snapshot(self) -> "ReplayBuffer":
        """Shallow copy that later appends to `self` do not affect."""
        return ReplayBuffer(self.obs_dim, self.num_actions, self.env_id, self.capacity, list(self.experiences))


def append(buffer: ReplayBuffer, e: Experience) -> ReplayBuffer:
    return buffer.append(e)


@dataclass(eq=False)
class CompressedERB:
    """Weighted subset of a source buffer.

    ``source_index`` records where each entry came from in the source buffer.
    It is in-memory provenance only and is not written to disk.
    """

    experiences: list[Experience]
    weights: list[int]
    method: str
    ratio: float
    original_size: int
    obs_dim: int
    num_actions: int
    env_id: str = ""
    seed: int = 0
    source_index: list[int] | None = None
    # False when the experiences come from an already validated buffer
    check_records: InitVar[bool] = True

    def __post_init__(self, check_records: bool = True):
        self.experiences = list(self.experiences)
        self.weights = [int(w) for w in self.weights]
        self.ratio = float(self.ratio)
        self.validate(records=check_records)

    def validate(self, records: bool = True) -> None:
        if self.method not in METHODS:
            raise InvariantError(f"unknown method {self.method!r}")
        if not self.ratio >= 1:
            raise InvariantError(f"ratio must be >= 1, got {self.ratio}")
        if not 0 <= self.seed < 2**64:
            raise InvariantError("seed must be an unsigned 64-bit integer")
        if len(self.weights) != len(self.experiences):
            raise InvariantError("weights and experiences differ in length")
        if self.weights and min(self.weights) < 1:
            raise InvariantError("weights must be positive integers")
        if sum(self.weights) != self.original_size:
            raise InvariantError(
                f"weight sum {sum(self.weights)} != original_size {self.original_size}"
            )
        if self.original_size > 0 and not self.experiences:
            raise InvariantError("nonempty source compressed to zero entries")
        if len(self.experiences) > self.original_size:
            raise InvariantError("more entries than source experiences")
        if self.source_index is not None and len(self.source_index) != len(self.experiences):
            raise InvariantError("source_index length mismatch")
        if records:
            for e in self.experiences:
                _check_experience(e, self.obs_dim, self.num_actions)

    def __len__(self) -> int:
        return len(self.experiences)

    @property
    def entries(self) -> list[tuple[Experience, int]]:
        return list(zip(self.experiences, self.weights))

    def __eq__(self, other):
        if not isinstance(other, CompressedERB):
            return NotImplemented
        return (
            self.method == other.method
            and _float_bits_equal(self.ratio, other.ratio)
            and self.original_size == other.original_size
            and self.obs_dim == other.obs_dim
            and self.num_actions == other.num_actions
            and self.env_id == other.env_id
            and self.seed == other.seed
            and self.weights == other.weights
            and self.experiences == other.experiences
        )

    @classmethod
    def identity(cls, buffer: ReplayBuffer) -> "CompressedERB":
        """Wrap a raw buffer as an uncompressed (R=1, unit weight) ERB."""
        n = len(buffer)
        return cls(
            experiences=list(buffer.experiences),
            weights=[1] * n,
            method="coreset",
            ratio=1.0,
            original_size=n,
            obs_dim=buffer.obs_dim,
            num_actions=buffer.num_actions,
            env_id=buffer.env_id,
            seed=0,
            source_index=list(range(n)),
        )


def reward_vector(buffer: ReplayBuffer | CompressedERB) -> np.ndarray:
    """Rewards in buffer order (one per entry for compressed buffers)."""
    return np.array([e.reward for e in buffer.experiences], dtype=np.float64)


# ---------------------------------------------------------------- ERB-JSONL


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _header(buffer: ReplayBuffer | CompressedERB) -> dict:
    compressed = isinstance(buffer, CompressedERB)
    head = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": "compressed" if compressed else "raw",
        "count": len(buffer.experiences),
        "obs_dim": buffer.obs_dim,
        "num_actions": buffer.num_actions,
        "env_id": buffer.env_id,
    }
    if compressed:
        head.update(
            method=buffer.method,
            ratio=buffer.ratio,
            original_size=buffer.original_size,
            seed=buffer.seed,
        )
    return head


def _record(e: Experience, weight: int | None = None) -> dict:
    rec = {
        "obs": e.obs.tolist(),
        "action": e.action,
        "reward": e.reward,
        "next_obs": e.next_obs.tolist(),
        "terminal": e.terminal,
    }
    if weight is not None:
        rec["weight"] = weight
    return rec


def iter_lines(buffer: ReplayBuffer | CompressedERB):
    yield _dump(_header(buffer))
    if isinstance(buffer, CompressedERB):
        for e, w in zip(buffer.experiences, buffer.weights):
            yield _dump(_record(e, w))
    else:
        for e in buffer.experiences:
            yield _dump(_record(e))


def serialize_erb(buffer: ReplayBuffer | CompressedERB, destination: IO) -> None:
    """Write `buffer` as ERB-JSONL to a text or binary stream."""
    binary = not isinstance(destination, io.TextIOBase)
    for line in iter_lines(buffer):
        line += "\n"
        destination.write(line.encode("utf-8") if binary else line)


def dumps(buffer: ReplayBuffer | CompressedERB) -> str:
    return "".join(line + "\n" for line in iter_lines(buffer))


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise FormatError(f"{where}: missing field {key!r}")
    value = obj[key]
    # bool is an int subclass; reject it where a number is expected
    if kind is not bool and isinstance(value, bool):
        raise FormatError(f"{where}: field {key!r} has wrong type")
    if not isinstance(value, kind):
        raise FormatError(f"{where}: field {key!r} has wrong type")
    return value


def _parse_json(line: str, where: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{where}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: expected a JSON object")
    return obj


def _parse_record(obj: dict, where: str, compressed: bool) -> tuple[Experience, int | None]:
    obs = _require(obj, "obs", list, where)
    next_obs = _require(obj, "next_obs", list, where)
    action = _require(obj, "action", int, where)
    reward = _require(obj, "reward", (int, float), where)
    terminal = _require(obj, "terminal", bool, where)
    for v in obs + next_obs:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise FormatError(f"{where}: observations must be numeric")
    e = Experience(np.array(obs, dtype=np.float64), action, float(reward), np.array(next_obs, dtype=np.float64), terminal)
    weight = _require(obj, "weight", int, where) if compressed else None
    return e, weight


def deserialize_erb(source: IO | str | bytes) -> ReplayBuffer | CompressedERB:
    """Parse ERB-JSONL; the header decides between raw and compressed."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [ln.decode("utf-8") if isinstance(ln, bytes) else ln for ln in source]
    lines = [ln.rstrip("\r\n") for ln in lines]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise FormatError("empty input: missing header")

    head = _parse_json(lines[0], "header")
    if head.get("format") != FORMAT_NAME:
        raise FormatError(f"header: format must be {FORMAT_NAME!r}")
    version = _require(head, "version", int, "header")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported version {version}")
    kind = head.get("kind")
    if kind not in ("raw", "compressed"):
        raise FormatError(f"header: unknown kind {kind!r}")
    compressed = kind == "compressed"
    count = _require(head, "count", int, "header")
    obs_dim = _require(head, "obs_dim", int, "header")
    num_actions = _require(head, "num_actions", int, "header")
    env_id = _require(head, "env_id", str, "header")
    if count < 0:
        raise FormatError("header: negative count")

    body = lines[1:]
    if len(body) != count:
        raise CountMismatchError(f"header count {count} but {len(body)} records")

    experiences, weights = [], []
    for i, line in enumerate(body, start=2):
        e, w = _parse_record(_parse_json(line, f"line {i}"), f"line {i}", compressed)
        experiences.append(e)
        weights.append(w)

    if not compressed:
        return ReplayBuffer(obs_dim, num_actions, env_id, None, experiences)
    return CompressedERB(
        experiences=experiences,
        weights=weights,
        method=_require(head, "method", str, "header"),
        ratio=float(_require(head, "ratio", (int, float), "header")),
        original_size=_require(head, "original_size", int, "header"),
        obs_dim=obs_dim,
        num_actions=num_actions,
        env_id=env_id,
        seed=_require(head, "seed", int, "header"),
    )


def loads(text: str) -> ReplayBuffer | CompressedERB:
    return deserialize_erb(text)


def _open(path: Path, mode: str):
    if path.suffix == ".gz":
        if "w" in mode:
            # mtime=0 and no embedded filename keep output byte-identical
            raw = open(path, "wb")
            return io.TextIOWrapper(gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0), encoding="utf-8"), raw
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8"), None
    return open(path, mode, encoding="utf-8", newline="\n"), None


def save(buffer: ReplayBuffer | CompressedERB, path: str | Path) -> None:
    """Write a buffer to `path`; a ``.gz`` suffix selects gzip."""
    path = Path(path)
    fh, raw = _open(path, "w")
    try:
        for line in iter_lines(buffer):
            fh.write(line)
            fh.write("\n")
    finally:
        fh.close()
        if raw is not None:
            raw.close()


def load(path: str | Path) -> ReplayBuffer | CompressedERB:
    path = Path(path)
    fh, _ = _open(path, "r")
    try:
        try:
            return deserialize_erb(fh)
        except UnicodeDecodeError as exc:
            raise FormatError(f"not UTF-8 text: {exc}") from None
        except (OSError, EOFError) as exc:
            raise FormatError(f"unreadable file: {exc}") from None
    finally:
        fh.close()


def buffer_from_rewards(
    rewards: Sequence[float], obs_dim: int = 1, num_actions: int = 1, env_id: str = ""
) -> ReplayBuffer:
    """Buffer whose experiences differ only in reward; handy for compression work."""
    zero = np.zeros(obs_dim)
    zero.setflags(write=False)
    # Experience still checks every reward; shapes and action are valid by construction
    exps = [Experience(zero, 0, r, zero, False) for r in np.asarray(rewards, dtype=np.float64).reshape(-1).tolist()]
    return ReplayBuffer.trusted(obs_dim, num_actions, env_id, exps)
