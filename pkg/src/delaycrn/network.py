"""Delayed mass-action reaction networks, history functions, and their text formats.

Network files are line oriented::

    # reversible dimerisation with a delayed back reaction
    2 X1 -> X2 : rate=1, delay=0
    X2 -> 2 X1 : rate=2, delay=0.5

A term is ``[integer] name``; a bare ``0`` is the empty complex. ``delay=``
may be omitted (defaults to 0). An optional leading ``species A B ...`` line
fixes the species order; without it species are indexed in order of first
appearance.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import ParseError

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_TERM = re.compile(r"(?:(\d+)\s*\*?\s*)?([A-Za-z_][A-Za-z0-9_]*)\Z")
_PARAMS = re.compile(
    r"\s*rate\s*=\s*(?P<rate>[^,\s]+)\s*(?:,\s*delay\s*=\s*(?P<delay>[^,\s]+)\s*)?\Z"
)

DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class Complex:
    """A nonnegative integer combination of species."""

    coeffs: tuple[int, ...]

    def __post_init__(self):
        coeffs = tuple(int(c) for c in self.coeffs)
        if any(c < 0 for c in coeffs):
            raise ValueError(f"complex coefficients must be nonnegative, got {coeffs}")
        object.__setattr__(self, "coeffs", coeffs)

    def __len__(self):
        return len(self.coeffs)

    @property
    def is_empty(self) -> bool:
        return not any(self.coeffs)

    def as_array(self) -> np.ndarray:
        return np.array(self.coeffs, dtype=float)

    def format(self, species) -> str:
        terms = []
        for name, c in zip(species, self.coeffs):
            if c == 1:
                terms.append(name)
            elif c > 1:
                terms.append(f"{c} {name}")
        return " + ".join(terms) if terms else "0"


@dataclass(frozen=True)
class Reaction:
    """source -> product with rate constant ``rate`` and discrete delay ``delay``."""

    source: Complex
    product: Complex
    rate: float
    delay: float = 0.0

    def __post_init__(self):
        if len(self.source) != len(self.product):
            raise ValueError("source and product complexes have different lengths")
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"rate must be positive and finite, got {self.rate}")
        if not (math.isfinite(self.delay) and self.delay >= 0):
            raise ValueError(f"delay must be nonnegative and finite, got {self.delay}")
        if self.source == self.product:
            raise ValueError("source complex equals product complex")


@dataclass(frozen=True)
class ReactionNetwork:
    """Species, deduplicated complexes and reactions of a delayed kinetic system.

    Coefficient matrices are exposed as ``source_matrix`` / ``product_matrix``
    with shape (M, N), row k holding the source (product) complex of
    reaction k.
    """

    species: tuple[str, ...]
    complexes: tuple[Complex, ...]
    reactions: tuple[Reaction, ...]

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "complexes", tuple(self.complexes))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        if not self.species:
            raise ValueError("network has no species")
        if not self.reactions:
            raise ValueError("network has no reactions")
        if len(set(self.species)) != len(self.species):
            raise ValueError("duplicate species names")
        if len(set(self.complexes)) != len(self.complexes):
            raise ValueError("duplicate complexes")
        n = len(self.species)
        known = set(self.complexes)
        for r in self.reactions:
            if len(r.source) != n:
                raise ValueError("reaction complexes do not match the species count")
            if r.source not in known or r.product not in known:
                raise ValueError("reaction uses a complex missing from the complex list")

    @classmethod
    def from_reactions(cls, species, reactions) -> "ReactionNetwork":
        """Build a network, collecting complexes in order of first use."""
        complexes = {}
        for r in reactions:
            complexes.setdefault(r.source, None)
            complexes.setdefault(r.product, None)
        return cls(tuple(species), tuple(complexes), tuple(reactions))

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @property
    def max_delay(self) -> float:
        return max(r.delay for r in self.reactions)

    @cached_property
    def source_matrix(self) -> np.ndarray:
        return np.array([r.source.coeffs for r in self.reactions], dtype=np.int64)

    @cached_property
    def product_matrix(self) -> np.ndarray:
        return np.array([r.product.coeffs for r in self.reactions], dtype=np.int64)

    @cached_property
    def reaction_vectors(self) -> np.ndarray:
        """Rows y_k' - y_k."""
        return (self.product_matrix - self.source_matrix).astype(float)

    @cached_property
    def rates(self) -> np.ndarray:
        return np.array([r.rate for r in self.reactions], dtype=float)

    @cached_property
    def delays(self) -> np.ndarray:
        return np.array([r.delay for r in self.reactions], dtype=float)

    @cached_property
    def source_index(self) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.complexes)}
        return np.array([lookup[r.source] for r in self.reactions], dtype=np.int64)

    @cached_property
    def product_index(self) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.complexes)}
        return np.array([lookup[r.product] for r in self.reactions], dtype=np.int64)

    def with_delays(self, delays) -> "ReactionNetwork":
        """Copy of the network with reaction delays replaced."""
        delays = list(delays)
        if len(delays) != self.n_reactions:
            raise ValueError(f"expected {self.n_reactions} delays, got {len(delays)}")
        reactions = tuple(
            Reaction(r.source, r.product, r.rate, float(d)) for r, d in zip(self.reactions, delays)
        )
        return ReactionNetwork(self.species, self.complexes, reactions)

    def without_delays(self) -> "ReactionNetwork":
        return self.with_delays([0.0] * self.n_reactions)

    def monomials(self, x) -> np.ndarray:
        """x^{y_k} for every reaction source (0**0 == 1)."""
        x = np.asarray(x, dtype=float)
        return np.prod(x[..., None, :] ** self.source_matrix, axis=-1)


# -- text format ------------------------------------------------------------


def _fmt_number(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def format_network(net: ReactionNetwork) -> str:
    """Canonical text form; ``parse_network(format_network(net))`` reproduces ``net``."""
    lines = ["species " + " ".join(net.species)]
    for r in net.reactions:
        lines.append(
            f"{r.source.format(net.species)} -> {r.product.format(net.species)} : "
            f"rate={_fmt_number(r.rate)}, delay={_fmt_number(r.delay)}"
        )
    return "\n".join(lines) + "\n"


def _parse_side(text: str, offset: int, lineno: int) -> dict[str, int]:
    """Parse one side of a reaction into {species: coefficient} (ordered)."""
    stripped = text.strip()
    if not stripped:
        raise ParseError("empty complex (use '0' for the empty complex)", lineno, offset + 1)
    if stripped == "0":
        return {}
    coeffs: dict[str, int] = {}
    pos = offset
    for raw in text.split("+"):
        term = raw.strip()
        col = pos + (len(raw) - len(raw.lstrip())) + 1
        pos += len(raw) + 1
        m = _TERM.match(term)
        if not m:
            if term == "0":
                raise ParseError("'0' must stand alone as the empty complex", lineno, col)
            raise ParseError(f"malformed term {term!r}", lineno, col)
        count = int(m.group(1)) if m.group(1) is not None else 1
        name = m.group(2)
        coeffs[name] = coeffs.get(name, 0) + count
    return {k: v for k, v in coeffs.items() if v > 0}


def _parse_float(text: str, what: str, lineno: int, col: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{what} is not a number: {text!r}", lineno, col) from None
    if not math.isfinite(value):
        raise ParseError(f"{what} must be finite", lineno, col)
    return value


def parse_network(text: str) -> ReactionNetwork:
    """Parse the line-oriented network format into a validated network."""
    declared: list[str] | None = None
    species: list[str] = []
    raw_reactions = []

    for lineno, full in enumerate(text.splitlines(), start=1):
        line = full.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        head = line.split(None, 1)
        if head[0] == "species":
            if declared is not None or raw_reactions:
                raise ParseError("'species' directive must come first and only once", lineno, 1)
            names = head[1].replace(",", " ").split() if len(head) > 1 else []
            for name in names:
                if not _IDENT.match(name):
                    raise ParseError(f"invalid species name {name!r}", lineno)
            if len(set(names)) != len(names) or not names:
                raise ParseError("species directive needs distinct names", lineno)
            declared = list(names)
            species = list(names)
            continue

        arrow = line.find("->")
        if arrow < 0:
            raise ParseError("expected '->'", lineno, len(line) + 1)
        colon = line.find(":", arrow)
        if colon < 0:
            raise ParseError("expected ':' followed by rate=<r>, delay=<d>", lineno, len(line) + 1)
        lhs = _parse_side(line[:arrow], 0, lineno)
        rhs = _parse_side(line[arrow + 2:colon], arrow + 2, lineno)

        params = line[colon + 1:]
        m = _PARAMS.match(params)
        if not m:
            raise ParseError("expected 'rate=<r>, delay=<d>'", lineno, colon + 2)
        rate = _parse_float(m.group("rate"), "rate", lineno, colon + 2 + m.start("rate"))
        if rate <= 0:
            raise ParseError(f"nonpositive rate {rate}", lineno, colon + 2 + m.start("rate"))
        delay = 0.0
        if m.group("delay") is not None:
            delay = _parse_float(m.group("delay"), "delay", lineno, colon + 2 + m.start("delay"))
            if delay < 0:
                raise ParseError(f"negative delay {delay}", lineno, colon + 2 + m.start("delay"))

        for name in list(lhs) + list(rhs):
            if name not in species:
                if declared is not None:
                    raise ParseError(f"unknown species {name!r} (not in species directive)", lineno)
                species.append(name)
        if lhs == rhs:
            raise ParseError("source equals product", lineno, 1)
        raw_reactions.append((lhs, rhs, rate, delay))

    if not raw_reactions:
        raise ParseError("no reactions")

    def vec(side):
        return Complex(tuple(side.get(name, 0) for name in species))

    reactions = [Reaction(vec(lhs), vec(rhs), rate, delay) for lhs, rhs, rate, delay in raw_reactions]
    return ReactionNetwork.from_reactions(species, reactions)


def load_network(path) -> ReactionNetwork:
    return parse_network(Path(path).read_text(encoding="utf-8"))


# -- history functions ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HistoryFunction:
    """Initial function on [-tau, 0]: either constant or piecewise linear through samples.

    Build with :meth:`constant` or :meth:`sampled`; both validate the domain
    and nonnegativity.
    """

    kind: str
    tau: float
    value: np.ndarray | None = None
    times: np.ndarray | None = field(default=None, repr=False)
    samples: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def constant(cls, value, tau: float) -> "HistoryFunction":
        value = np.array(value, dtype=float).reshape(-1)
        if tau < 0 or not math.isfinite(tau):
            raise ValueError(f"tau must be nonnegative, got {tau}")
        if not np.all(np.isfinite(value)) or np.any(value < 0):
            raise ValueError(f"history values must be finite and nonnegative, got {value}")
        value.setflags(write=False)
        return cls("constant", float(tau), value=value)

    @classmethod
    def sampled(cls, times, samples, tau: float) -> "HistoryFunction":
        """Linear interpolant through (times, samples), restricted to [-tau, 0].

        The first time must be <= -tau and the last must be 0; samples before
        -tau are replaced by the interpolated value at -tau.
        """
        times = np.array(times, dtype=float).reshape(-1)
        samples = np.array(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.shape[0] != times.size or times.size == 0:
            raise ValueError("times and samples must have the same nonzero length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if not np.all(np.isfinite(samples)) or np.any(samples < 0):
            raise ValueError("history samples must be finite and nonnegative")
        tol = DOMAIN_TOL * max(1.0, tau)
        if abs(times[-1]) > tol:
            raise ValueError(f"history samples must end at t=0, last time is {times[-1]}")
        if times[0] > -tau + tol:
            raise ValueError(f"history samples start at {times[0]} and do not cover [-{tau}, 0]")
        times[-1] = 0.0
        if times[0] < -tau - tol:
            first = np.array([np.interp(-tau, times, samples[:, i]) for i in range(samples.shape[1])])
            keep = times > -tau + tol
            times = np.concatenate([[-tau], times[keep]])
            samples = np.vstack([first, samples[keep]])
        else:
            times[0] = -tau
        if times.size == 1:
            # tau == 0: a single point is the whole domain
            return cls.constant(samples[0], tau)
        times.setflags(write=False)
        samples.setflags(write=False)
        return cls("sampled", float(tau), times=times, samples=samples)

    @property
    def n_species(self) -> int:
        return self.value.size if self.kind == "constant" else self.samples.shape[1]

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def min_value(self) -> float:
        return float(self.value.min() if self.is_constant else self.samples.min())

    def breakpoints(self) -> np.ndarray:
        """Times where the history may fail to be smooth (domain ends included)."""
        if self.is_constant:
            return np.array([-self.tau, 0.0]) if self.tau > 0 else np.array([0.0])
        return np.asarray(self.times)

    def lipschitz(self) -> float:
        if self.is_constant:
            return 0.0
        slopes = np.abs(np.diff(self.samples, axis=0)) / np.diff(self.times)[:, None]
        return float(slopes.max())

    def _check_domain(self, t):
        tol = DOMAIN_TOL * max(1.0, self.tau)
        t = np.asarray(t, dtype=float)
        if np.any(t < -self.tau - tol) or np.any(t > tol):
            raise ValueError(f"history evaluated outside [-{self.tau}, 0]")
        return np.clip(t, -self.tau, 0.0)

    def __call__(self, t) -> np.ndarray:
        """Evaluate at a scalar time or an array of times (result shape (..., N))."""
        t = self._check_domain(t)
        if self.is_constant:
            return np.broadcast_to(self.value, t.shape + self.value.shape).copy()
        out = np.empty(t.shape + (self.samples.shape[1],))
        for i in range(self.samples.shape[1]):
            out[..., i] = np.interp(t, self.times, self.samples[:, i])
        return out


def evaluate_history(h: HistoryFunction, t: float) -> np.ndarray:
    return h(t)


def parse_history(spec: str, net: ReactionNetwork, base_dir=None) -> HistoryFunction:
    """Parse ``const v1 ... vN`` or ``csv <path>`` against ``net``.

    CSV files carry a header ``t,x1,...,xN``; relative paths resolve against
    ``base_dir`` when given.
    """
    tau = net.max_delay
    parts = spec.strip().split(None, 1)
    if not parts:
        raise ParseError("empty history spec")
    kind = parts[0].lower()
    if kind == "const":
        fields = parts[1].replace(",", " ").split() if len(parts) > 1 else []
        try:
            values = [float(v) for v in fields]
        except ValueError:
            raise ParseError(f"history values must be numbers: {spec!r}") from None
        if len(values) != net.n_species:
            raise ParseError(f"history has {len(values)} values, network has {net.n_species} species")
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise ParseError("history values must be finite and nonnegative")
        return HistoryFunction.constant(values, tau)
    if kind == "csv":
        if len(parts) < 2:
            raise ParseError("csv history needs a path")
        path = Path(parts[1].strip())
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return read_history_csv(path, net)
    raise ParseError(f"unknown history kind {parts[0]!r} (expected 'const' or 'csv')")


def read_history_csv(path, net: ReactionNetwork) -> HistoryFunction:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and not row[0].lstrip().startswith("#")]
    if not rows:
        raise ParseError(f"{path}: empty history file")
    header = [h.strip() for h in rows[0]]
    if header[0] != "t":
        raise ParseError(f"{path}: header must start with 't'", 1)
    if len(header) != net.n_species + 1:
        raise ParseError(
            f"{path}: history has {len(header) - 1} species columns, network has {net.n_species}", 1
        )
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if data.size == 0:
        raise ParseError(f"{path}: no data rows")
    if data.shape[1] != net.n_species + 1:
        raise ParseError(f"{path}: ragged rows")
    try:
        return HistoryFunction.sampled(data[:, 0], data[:, 1:], net.max_delay)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
