"""Passive OS fingerprinting from TCP SYN characteristics.

Implements the classic p0f-style approach: the initial SYN leaks the
sender's stack through its TTL, window size, MSS, window scale, and the
exact order of TCP options.  Signatures are one line each:

    label:ttl:window:mss:wscale:df:options

where window may be an exact value, ``*``, or ``mss*K`` (a multiple of the
SYN's own MSS), mss/wscale may be ``*``, df is 0/1, and options is a
comma-separated list of option names in wire order.  First match wins,
so more specific signatures go first in the database.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

from .ir import ParseError

# TCP option kind numbers, by conventional short name.
OPTION_KINDS = {
    "eol": 0,
    "nop": 1,
    "mss": 2,
    "ws": 3,
    "sok": 4,
    "sack": 5,
    "ts": 8,
}
KIND_NAMES = {v: k for k, v in OPTION_KINDS.items()}

# Initial TTLs real stacks ship with; an observed TTL has been decremented
# once per hop so it matches the smallest bucket at or above it.
TTL_BUCKETS = (32, 64, 128, 255)


@dataclass
class SynFeatures:
    """What a single SYN reveals: raw values plus the wire order of options."""

    ttl: int
    window: int
    options: list[int] = field(default_factory=list)  # option kinds, wire order
    mss: int | None = None
    wscale: int | None = None
    df: bool = False

    @property
    def ttl_bucket(self) -> int:
        for bucket in TTL_BUCKETS:
            if self.ttl <= bucket:
                return bucket
        return TTL_BUCKETS[-1]


@dataclass
class Signature:
    label: str
    ttl: int
    window: str
    mss: str
    wscale: str
    df: str
    options: list[str]

    def matches(self, f: SynFeatures) -> bool:
        if f.ttl_bucket != self.ttl:
            return False
        if not self._window_ok(f):
            return False
        if self.mss != "*" and (f.mss is None or f.mss != int(self.mss)):
            return False
        if self.wscale != "*" and (f.wscale is None or f.wscale != int(self.wscale)):
            return False
        if self.df != "*" and f.df != bool(int(self.df)):
            return False
        want = [OPTION_KINDS[name] for name in self.options]
        return f.options == want

    def _window_ok(self, f: SynFeatures) -> bool:
        if self.window == "*":
            return True
        if self.window.startswith("mss*"):
            if f.mss is None or f.mss == 0:
                return False
            return f.window == f.mss * int(self.window[4:])
        return f.window == int(self.window)


def parse_signature_line(line: str, where: str) -> Signature:
    fields = line.split(":")
    if len(fields) != 7:
        raise ParseError(f"{where}: want 7 colon-separated fields, got {len(fields)}")
    label, ttl_s, window, mss, wscale, df, opts_s = (f.strip() for f in fields)
    if not label:
        raise ParseError(f"{where}: empty label")
    try:
        ttl = int(ttl_s)
    except ValueError:
        raise ParseError(f"{where}: bad ttl {ttl_s!r}") from None
    if ttl not in TTL_BUCKETS:
        raise ParseError(f"{where}: ttl {ttl} not one of {TTL_BUCKETS}")
    if window != "*" and not window.startswith("mss*") and not window.isdigit():
        raise ParseError(f"{where}: bad window {window!r}")
    if window.startswith("mss*") and not window[4:].isdigit():
        raise ParseError(f"{where}: bad window multiple {window!r}")
    for name, value in (("mss", mss), ("wscale", wscale)):
        if value != "*" and not value.isdigit():
            raise ParseError(f"{where}: bad {name} {value!r}")
    if df not in ("0", "1", "*"):
        raise ParseError(f"{where}: df must be 0, 1, or *")
    options = []
    if opts_s:
        for name in opts_s.split(","):
            name = name.strip()
            if name not in OPTION_KINDS:
                raise ParseError(f"{where}: unknown option {name!r}")
            options.append(name)
    return Signature(label, ttl, window, mss, wscale, df, options)


def parse_signature_db(text: str, origin: str = "signature db") -> list[Signature]:
    """Parse a database; order in the file is match priority."""
    sigs = []
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        sigs.append(parse_signature_line(line, f"{origin} line {i}"))
    return sigs


def load_default_db() -> list[Signature]:
    text = resources.files("netcarta").joinpath("data/signatures.txt").read_text("utf-8")
    return parse_signature_db(text, "bundled signatures.txt")


def classify(features: SynFeatures, db: list[Signature]) -> str | None:
    """Label of the first matching signature, or None."""
    for sig in db:
        if sig.matches(features):
            return sig.label
    return None
