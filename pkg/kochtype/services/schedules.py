"""Base-angle schedules and their tail analytics."""

import json
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import structlog
from pydantic import ValidationError as PydanticValidationError
from scipy.special import zeta

from kochtype.config import settings
from kochtype.exceptions import InputFileError, ScheduleError, SpecParseError
from kochtype.models import ScheduleEcho, TableScheduleFile

logger = structlog.get_logger()

CellKey = Tuple[int, int]


def check_angle(theta: float, where: str, allow_zero: bool = False) -> float:
    """Validate one base angle against the accepted range."""
    if not math.isfinite(theta):
        raise ScheduleError(f"Angle at {where} must be finite", details={"theta": theta})
    upper = settings.max_base_angle + settings.angle_tolerance
    lower_ok = theta >= 0.0 if allow_zero else theta > 0.0
    if not lower_ok or theta > upper:
        raise ScheduleError(
            f"Angle at {where} must lie in {'[' if allow_zero else '('}0, {settings.max_base_angle:.12g}]",
            details={"theta": theta, "where": where}
        )
    return float(min(theta, settings.max_base_angle))


def _format(value: float) -> str:
    return repr(float(value))


class AngleSchedule(ABC):
    """Rule assigning a base angle to every cap index."""

    kind: str = ""
    stage_uniform: bool = True

    @abstractmethod
    def params(self) -> Dict[str, Any]:
        """Variant parameters."""

    @property
    @abstractmethod
    def spec(self) -> str:
        """Canonical textual spec."""

    @abstractmethod
    def thetas(self, stages: np.ndarray) -> np.ndarray:
        """Stage angles of a stage-uniform schedule, vectorized over stages."""

    @property
    @abstractmethod
    def limit_angle(self) -> float:
        """Limit of the stage angles."""

    @property
    @abstractmethod
    def sum_converges(self) -> bool:
        """Whether the series of angles converges."""

    @property
    @abstractmethod
    def sum_sq_converges(self) -> bool:
        """Whether the series of squared angles converges."""

    @abstractmethod
    def tail_sum(self, n0: int) -> float:
        """Sum of the angles from stage n0 on; inf when divergent."""

    def theta_n(self, n: int) -> float:
        return float(self.thetas(np.array([n]))[0])

    def angle_at(self, n: int, i: int) -> float:
        return self.theta_n(n)

    def stage_thetas(self, n: int) -> np.ndarray:
        """Angles of all 2**n caps at stage n."""
        return np.full(2 ** n, self.theta_n(n))

    def stretch_limit(self, start: int = 0) -> float:
        """Infinite product of 1/cos(theta_n) over n >= start; inf when it diverges."""
        if not self.sum_sq_converges:
            return math.inf
        terms: List[float] = []
        n = start
        chunk = 1024
        while True:
            block = -np.log(np.cos(self.thetas(np.arange(n, n + chunk))))
            terms.extend(block.tolist())
            n += chunk
            if block[-1] < settings.product_increment_tolerance or n - start >= settings.stretch_exact_terms:
                break
        return math.exp(math.fsum(terms) + self._log_tail_after(n))

    def _log_tail_after(self, n: int) -> float:
        """Estimate of sum_{k >= n} -log cos(theta_k) beyond the exactly summed terms."""
        return 0.0

    def echo(self) -> ScheduleEcho:
        return ScheduleEcho(kind=self.kind, params=self.params())

    def __str__(self) -> str:
        return self.spec


@dataclass(frozen=True)
class ConstantSchedule(AngleSchedule):
    """theta_n = theta for all n (zero gives the flat construction)."""
    theta: float
    kind = "const"

    def __post_init__(self):
        object.__setattr__(self, "theta", check_angle(self.theta, "constant schedule", allow_zero=True))

    def params(self) -> Dict[str, Any]:
        return {"theta": self.theta}

    @property
    def spec(self) -> str:
        return f"const:theta={_format(self.theta)}"

    def thetas(self, stages: np.ndarray) -> np.ndarray:
        return np.full(len(stages), float(self.theta))

    @property
    def limit_angle(self) -> float:
        return float(self.theta)

    @property
    def sum_converges(self) -> bool:
        return self.theta == 0.0

    @property
    def sum_sq_converges(self) -> bool:
        return self.theta == 0.0

    def tail_sum(self, n0: int) -> float:
        return 0.0 if self.theta == 0.0 else math.inf

    def stretch_limit(self, start: int = 0) -> float:
        return 1.0 if self.theta == 0.0 else math.inf


@dataclass(frozen=True)
class AEpsSchedule(AngleSchedule):
    """theta_n = atan(4 eps / sqrt(1 + 16 n eps**2)); cap heights 2**(1-n) eps."""
    eps: float
    kind = "aeps"

    def __post_init__(self):
        if not (math.isfinite(self.eps) and self.eps > 0.0):
            raise ScheduleError("eps must be positive", details={"eps": self.eps})
        check_angle(math.atan(4.0 * self.eps), "stage 0 of aeps schedule")

    def params(self) -> Dict[str, Any]:
        return {"eps": self.eps}

    @property
    def spec(self) -> str:
        return f"aeps:eps={_format(self.eps)}"

    def thetas(self, stages: np.ndarray) -> np.ndarray:
        n = np.asarray(stages, dtype=float)
        return np.arctan(4.0 * self.eps / np.sqrt(1.0 + 16.0 * n * self.eps ** 2))

    @property
    def limit_angle(self) -> float:
        return 0.0

    @property
    def sum_converges(self) -> bool:
        return False

    @property
    def sum_sq_converges(self) -> bool:
        return False

    def tail_sum(self, n0: int) -> float:
        return math.inf

    def closed_form_stretch(self, n: int) -> float:
        """Product of 1/cos(theta_j) over j < n, which telescopes exactly."""
        return math.sqrt(1.0 + 16.0 * n * self.eps ** 2)


@dataclass(frozen=True)
class GeometricSchedule(AngleSchedule):
    """theta_n = theta0 * ratio**n."""
    theta0: float
    ratio: float
    kind = "geom"

    def __post_init__(self):
        object.__setattr__(self, "theta0", check_angle(self.theta0, "stage 0 of geometric schedule"))
        if not 0.0 < self.ratio < 1.0:
            raise ScheduleError("Geometric ratio must lie in (0, 1)", details={"ratio": self.ratio})

    def params(self) -> Dict[str, Any]:
        return {"theta0": self.theta0, "ratio": self.ratio}

    @property
    def spec(self) -> str:
        return f"geom:theta0={_format(self.theta0)},ratio={_format(self.ratio)}"

    def thetas(self, stages: np.ndarray) -> np.ndarray:
        return self.theta0 * np.power(self.ratio, np.asarray(stages, dtype=float))

    @property
    def limit_angle(self) -> float:
        return 0.0

    @property
    def sum_converges(self) -> bool:
        return True

    @property
    def sum_sq_converges(self) -> bool:
        return True

    def tail_sum(self, n0: int) -> float:
        return self.theta0 * self.ratio ** n0 / (1.0 - self.ratio)


@dataclass(frozen=True)
class PowerSchedule(AngleSchedule):
    """theta_n = theta0 * (n + 1)**(-p)."""
    theta0: float
    p: float
    kind = "power"

    def __post_init__(self):
        object.__setattr__(self, "theta0", check_angle(self.theta0, "stage 0 of power schedule"))
        if not (math.isfinite(self.p) and self.p > 0.0):
            raise ScheduleError("Power exponent must be positive", details={"p": self.p})

    def params(self) -> Dict[str, Any]:
        return {"theta0": self.theta0, "p": self.p}

    @property
    def spec(self) -> str:
        return f"power:theta0={_format(self.theta0)},p={_format(self.p)}"

    def thetas(self, stages: np.ndarray) -> np.ndarray:
        return self.theta0 * np.power(np.asarray(stages, dtype=float) + 1.0, -self.p)

    @property
    def limit_angle(self) -> float:
        return 0.0

    @property
    def sum_converges(self) -> bool:
        return self.p > 1.0

    @property
    def sum_sq_converges(self) -> bool:
        return self.p > 0.5

    def tail_sum(self, n0: int) -> float:
        if not self.sum_converges:
            return math.inf
        return float(self.theta0 * zeta(self.p, n0 + 1))

    def _log_tail_after(self, n: int) -> float:
        # -log cos t = t**2/2 + t**4/12 + t**6/45 + ...
        t2 = self.theta0 ** 2
        return float(
            t2 / 2.0 * zeta(2.0 * self.p, n + 1)
            + t2 ** 2 / 12.0 * zeta(4.0 * self.p, n + 1)
            + t2 ** 3 / 45.0 * zeta(6.0 * self.p, n + 1)
        )


@dataclass(frozen=True)
class TableSchedule(AngleSchedule):
    """Explicit per-cap angles plus stage-uniform tails declared on subtrees."""
    entries: Mapping[CellKey, float] = field(default_factory=dict)
    tails: Mapping[CellKey, AngleSchedule] = field(default_factory=dict)
    kind = "table"
    stage_uniform = False

    def __post_init__(self):
        entries = {(int(n), int(i)): float(t) for (n, i), t in dict(self.entries).items()}
        tails = {(int(n), int(i)): s for (n, i), s in dict(self.tails).items()}
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "tails", tails)
        if not entries and not tails:
            raise ScheduleError("Table schedule needs at least one entry or tail")
        for (n, i), theta in entries.items():
            _check_index(n, i)
            entries[(n, i)] = check_angle(theta, f"table entry ({n}, {i})")
        for (n, i), tail in tails.items():
            _check_index(n, i)
            if not tail.stage_uniform:
                raise ScheduleError("Table tails must be stage-uniform schedules", details={"n": n, "i": i})
        for (n, i) in list(entries) + list(tails):
            if n == 0:
                continue
            parent = self.lookup(n - 1, i // 2)
            own = self.lookup(n, i)
            if parent is not None and own is not None and own > parent + settings.angle_tolerance:
                raise ScheduleError(
                    f"Angle at ({n}, {i}) exceeds its parent's angle",
                    details={"theta": own, "parent_theta": parent}
                )

    def params(self) -> Dict[str, Any]:
        return {
            "entries": [[n, i, t] for (n, i), t in sorted(self.entries.items())],
            "tails": [[n, i, s.spec] for (n, i), s in sorted(self.tails.items())],
        }

    @property
    def spec(self) -> str:
        return "table:" + json.dumps(self.params(), sort_keys=True)

    def thetas(self, stages: np.ndarray) -> np.ndarray:
        raise ScheduleError("Table schedules are not stage-uniform")

    def lookup(self, n: int, i: int) -> Optional[float]:
        """Angle at (n, i), or None when neither an entry nor a tail defines it."""
        if (n, i) in self.entries:
            return self.entries[(n, i)]
        root = self.tail_root(n, i)
        if root is None:
            return None
        return self.tails[root].theta_n(n - root[0])

    def tail_root(self, n: int, i: int) -> Optional[CellKey]:
        """Deepest declared tail whose subtree contains (n, i)."""
        for m in range(n, -1, -1):
            key = (m, i >> (n - m))
            if key in self.tails:
                return key
        return None

    def angle_at(self, n: int, i: int) -> float:
        value = self.lookup(n, i)
        if value is None:
            raise ScheduleError(f"No angle defined at ({n}, {i})", details={"n": n, "i": i})
        return value

    def stage_thetas(self, n: int) -> np.ndarray:
        out = np.full(2 ** n, np.nan)
        for (m, j), tail in sorted(self.tails.items()):
            if m <= n:
                width = 2 ** (n - m)
                out[j * width:(j + 1) * width] = tail.theta_n(n - m)
        for (m, j), theta in self.entries.items():
            if m == n:
                out[j] = theta
        missing = np.flatnonzero(np.isnan(out))
        if missing.size:
            raise ScheduleError(
                f"No angle defined at ({n}, {int(missing[0])})",
                details={"n": n, "i": int(missing[0]), "missing": int(missing.size)}
            )
        return out

    def tail_coverage(self) -> float:
        """Base-measure fraction of [0, 1] lying under a declared tail."""
        roots = [key for key in self.tails if self._outer_tail(key)]
        return math.fsum(2.0 ** -n for n, _ in roots)

    def _outer_tail(self, key: CellKey) -> bool:
        n, i = key
        return all((m, i >> (n - m)) not in self.tails for m in range(n))

    def outer_tails(self) -> List[Tuple[CellKey, AngleSchedule]]:
        """Tails not nested inside another tail, in index order."""
        return [(key, self.tails[key]) for key in sorted(self.tails) if self._outer_tail(key)]

    @property
    def limit_angle(self) -> float:
        tails = self.outer_tails()
        if not tails or self.tail_coverage() < 1.0:
            return math.nan
        return max(t.limit_angle for _, t in tails)

    @property
    def sum_converges(self) -> bool:
        return bool(self.tails) and all(t.sum_converges for t in self.tails.values())

    @property
    def sum_sq_converges(self) -> bool:
        return bool(self.tails) and all(t.sum_sq_converges for t in self.tails.values())

    def tail_sum(self, n0: int) -> float:
        raise ScheduleError("Tail sums need a parametric schedule")

    def stretch_limit(self, start: int = 0) -> float:
        raise ScheduleError("Stretch limits of table schedules are taken per cell")


def _check_index(n: int, i: int) -> None:
    if n < 0 or not 0 <= i < 2 ** n:
        raise ScheduleError(f"Invalid dyadic index ({n}, {i})", details={"n": n, "i": i})


_SPEC = re.compile(r"^(?P<kind>[a-z]+):(?P<body>.*)$")
_KEYS = {
    "const": ("theta",),
    "aeps": ("eps",),
    "geom": ("theta0", "ratio"),
    "power": ("theta0", "p"),
}


def parse_schedule_spec(text: str) -> AngleSchedule:
    """Parse `const:theta=..`, `aeps:eps=..`, `geom:theta0=..,ratio=..`, `power:theta0=..,p=..` or `table:<path>`."""
    match = _SPEC.match(text.strip())
    if not match:
        raise SpecParseError(f"Schedule spec '{text}' must look like kind:key=value", details={"spec": text, "position": 0})
    kind, body = match.group("kind"), match.group("body")
    if kind == "table":
        return load_table_schedule(body)
    if kind not in _KEYS:
        raise SpecParseError(f"Unknown schedule kind '{kind}'", details={"spec": text, "position": 0})

    values: Dict[str, float] = {}
    position = len(kind) + 1
    for token in body.split(","):
        key, sep, raw = token.partition("=")
        key = key.strip()
        if not sep or key not in _KEYS[kind]:
            raise SpecParseError(
                f"Unexpected token '{token}' in schedule spec at column {position}",
                details={"spec": text, "position": position, "token": token}
            )
        try:
            values[key] = float(raw)
        except ValueError:
            raise SpecParseError(
                f"Value '{raw}' for '{key}' is not a number (column {position})",
                details={"spec": text, "position": position, "token": token}
            )
        position += len(token) + 1
    missing = [k for k in _KEYS[kind] if k not in values]
    if missing:
        raise SpecParseError(f"Schedule spec '{text}' is missing {', '.join(missing)}", details={"spec": text})

    if kind == "const":
        return ConstantSchedule(values["theta"])
    if kind == "aeps":
        return AEpsSchedule(values["eps"])
    if kind == "geom":
        return GeometricSchedule(values["theta0"], values["ratio"])
    return PowerSchedule(values["theta0"], values["p"])


def load_table_schedule(path: str) -> TableSchedule:
    """Read a table schedule document."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = handle.read()
    except OSError as e:
        raise InputFileError(f"Cannot read table schedule: {str(e)}", details={"path": path})
    try:
        document = TableScheduleFile.model_validate_json(raw)
    except PydanticValidationError as e:
        raise SpecParseError(f"Malformed table schedule {path}: {e.error_count()} error(s)", details={"path": path, "errors": e.errors()[:3]})

    tails = {}
    for tail in document.tails:
        schedule = parse_schedule_spec(tail.schedule)
        if not schedule.stage_uniform:
            raise SpecParseError("Nested table tails are not supported", details={"path": path})
        tails[(tail.n, tail.i)] = schedule
    schedule = TableSchedule(
        entries={(e.n, e.i): e.theta for e in document.entries},
        tails=tails
    )
    logger.info("Loaded table schedule", path=path, entries=len(schedule.entries), tails=len(schedule.tails))
    return schedule
