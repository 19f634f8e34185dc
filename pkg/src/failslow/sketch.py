"""Two-stage pattern sketch for on-the-fly trace compression.

Stage-1 is a set of ``tables`` bucket arrays (``buckets`` each) indexed
by independent salted multiply-shift hashes of the pattern key. A bucket
holds one key and a frequency counter: matching inserts increment it,
inserts of a different key decrement it (clearing the bucket at zero),
and an empty bucket is claimed with frequency 1. When a bucket's
frequency reaches ``threshold``, the key is promoted to Stage-2.

Stage-2 is a bounded pattern list with aggregated attributes per key
(payload sums, endpoints, first-seen timestamp, duration, one-pass
latency statistics). When full, the earliest-promoted entry is evicted
FIFO. A key evicted and later re-promoted starts fresh statistics.

``retention_bound`` gives the closed-form lower bound on the probability
that a pattern of frequency f survives into Stage-2 out of a stream of N
events: 1 - ((N - f) / (m (f - H)))^d, clamped to [0, 1].
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import ConfigError, PipelineError
from .probes import TraceEvent, pattern_key, EVENT_BYTES
from . import workload as wl

ENTRY_BYTES = 64   # documented fixed entry size for byte accounting
BUCKET_BYTES = 16  # key 8 + counter 8

_MASK64 = (1 << 64) - 1
_DEFAULT_SALT_SEED = 0x5EEDFA11


@dataclass(frozen=True)
class SketchConfig:
    """Sketch shape: tables (d), buckets per table (m), promotion
    threshold (H), Stage-2 capacity, and the hash salt seed."""

    tables: int = 3
    buckets: int = 512
    threshold: int = 10
    max_length: int = 8192
    salt_seed: int = _DEFAULT_SALT_SEED

    def __post_init__(self):
        if self.tables < 1:
            raise ConfigError("tables must be >= 1")
        if self.buckets < 1:
            raise ConfigError("buckets must be >= 1")
        if self.threshold < 2:
            raise ConfigError("threshold must be >= 2")
        if self.max_length < 1:
            raise ConfigError("max_length must be >= 1")

    @property
    def structure_bytes(self) -> int:
        """Allocated footprint: bucket arrays plus Stage-2 capacity."""
        return self.tables * self.buckets * BUCKET_BYTES + self.max_length * ENTRY_BYTES


@dataclass(slots=True)
class PatternEntry:
    """One Stage-2 pattern with aggregated attributes.

    ``freq`` counts occurrences since promotion (seeded with the Stage-1
    counter value at promotion). Latency statistics cover the recorded
    events only (the promoting one onward), via Welford's one-pass
    method: ``lat_m2 / (lat_count - 1)`` is the unbiased variance.
    """

    key: tuple
    freq: int
    kind: str
    core: int
    src: int
    dst: int
    volume: int
    flops: int
    first_seen: float
    last_end: float
    lat_count: int
    lat_mean: float
    lat_m2: float
    promoted_at: int

    @property
    def duration(self) -> float:
        return self.last_end - self.first_seen

    @property
    def lat_variance(self) -> float:
        if self.lat_count < 2:
            return 0.0
        return self.lat_m2 / (self.lat_count - 1)

    @property
    def cycles_total(self) -> float:
        return self.lat_mean * self.lat_count


def _encode_key(key: tuple) -> int:
    """Stable integer encoding of a pattern key (kind, a, b)."""
    kind, a, b = key
    code = 1 if kind == wl.COMP else (2 if kind == wl.COMM else 3)
    return (code << 48) | ((a & 0xFFFFFF) << 24) | (b & 0xFFFFFF)


class FailSlowSketch:
    """One sketch instance; single-owner, fed by one event stream."""

    def __init__(self, config: SketchConfig):
        self.config = config
        d, m = config.tables, config.buckets
        salt_rng = random.Random(config.salt_seed)
        # odd multipliers for multiply-shift hashing
        self._salts = [salt_rng.getrandbits(64) | 1 for _ in range(d)]
        # buckets hold the integer key encoding; 0 marks an empty bucket
        self._keys: list[list[int]] = [[0] * m for _ in range(d)]
        self._freqs: list[list[int]] = [[0] * m for _ in range(d)]
        self.entries: dict[tuple, PatternEntry] = {}
        self.n_inserted = 0
        self.n_promoted = 0
        self.n_evicted = 0
        self._promotion_counter = 0

    def _index(self, enc: int, j: int) -> int:
        # salted multiply followed by an avalanche fold; without the
        # fold, bucket indices read only a low slice of the product and
        # keys differing in high bits alias across every table
        x = (enc * self._salts[j]) & _MASK64
        x ^= x >> 33
        x = (x * 0xFF51AFD7ED558CCD) & _MASK64
        x ^= x >> 33
        return x % self.config.buckets

    def insert(self, key: tuple, ev: TraceEvent) -> bool:
        """Run one event through all Stage-1 tables.

        Returns True when a new Stage-2 entry was created by this
        insert. At most one Stage-2 routing happens per event even if
        several tables cross the threshold simultaneously.
        """
        self.n_inserted += 1
        enc = _encode_key(key)
        H = self.config.threshold
        m = self.config.buckets
        routed = False
        created = False
        for j, salt in enumerate(self._salts):
            x = (enc * salt) & _MASK64
            x ^= x >> 33
            x = (x * 0xFF51AFD7ED558CCD) & _MASK64
            i = (x ^ (x >> 33)) % m
            keys_j = self._keys[j]
            freqs_j = self._freqs[j]
            held = keys_j[i]
            if held == enc:
                f = freqs_j[i] + 1
                freqs_j[i] = f
                if f >= H and not routed:
                    routed = True
                    created = self._route_stage2(key, ev, f)
            elif held == 0:
                keys_j[i] = enc
                freqs_j[i] = 1
            else:
                f = freqs_j[i] - 1
                if f <= 0:
                    keys_j[i] = 0
                    freqs_j[i] = 0
                else:
                    freqs_j[i] = f
        return created

    def insert_event(self, ev: TraceEvent) -> bool:
        return self.insert(pattern_key(ev), ev)

    def _route_stage2(self, key: tuple, ev: TraceEvent, stage1_freq: int) -> bool:
        if key in self.entries:
            self.update(key, ev)
            return False
        if len(self.entries) >= self.config.max_length:
            self.evict()
        dur = ev.end - ev.start
        self.entries[key] = PatternEntry(
            key=key, freq=stage1_freq, kind=ev.kind, core=ev.core,
            src=ev.src, dst=ev.dst,
            volume=ev.payload if ev.kind != wl.COMP else 0,
            flops=ev.payload if ev.kind == wl.COMP else 0,
            first_seen=ev.start, last_end=ev.end,
            lat_count=1, lat_mean=dur, lat_m2=0.0,
            promoted_at=self._promotion_counter,
        )
        self._promotion_counter += 1
        self.n_promoted += 1
        return True

    def update(self, key: tuple, ev: TraceEvent) -> None:
        """Fold one more occurrence into an existing Stage-2 entry."""
        entry = self.entries.get(key)
        if entry is None:
            raise PipelineError(f"update for absent pattern {key!r}; promotion must precede")
        entry.freq += 1
        if ev.kind == wl.COMP:
            entry.flops += ev.payload
        else:
            entry.volume += ev.payload
        if ev.end > entry.last_end:
            entry.last_end = ev.end
        dur = ev.end - ev.start
        entry.lat_count += 1
        delta = dur - entry.lat_mean
        entry.lat_mean += delta / entry.lat_count
        entry.lat_m2 += delta * (dur - entry.lat_mean)

    def evict(self) -> tuple:
        """Drop the earliest-promoted entry; error if the list is not full."""
        if len(self.entries) < self.config.max_length:
            raise PipelineError("evict called on a non-full pattern list")
        key = next(iter(self.entries))
        del self.entries[key]
        self.n_evicted += 1
        return key

    def report(self, raw_bytes: int | None = None) -> "SketchReport":
        """Pattern list plus compression accounting.

        ``raw_bytes`` defaults to the 32-byte-per-event cost of every
        event this sketch ingested; pass the run-wide figure when
        reporting across merged sketches.
        """
        raw = raw_bytes if raw_bytes is not None else self.n_inserted * EVENT_BYTES
        return make_report([self], raw)


@dataclass
class SketchReport:
    entries: list[PatternEntry]
    raw_bytes: int
    compressed_bytes: int
    ratio: float
    degenerate: bool
    config: SketchConfig

    @property
    def n_entries(self) -> int:
        return len(self.entries)


def make_report(sketches: list[FailSlowSketch], raw_bytes: int | None = None) -> SketchReport:
    """Merge per-core sketches into one analysis view.

    Entries are ordered by promotion time (first_seen, then key) across
    sketches. Compressed bytes follow the documented model: 64 bytes per
    entry plus one d x m bucket structure at 16 bytes per bucket.
    """
    if not sketches:
        raise PipelineError("make_report needs at least one sketch")
    config = sketches[0].config
    entries: list[PatternEntry] = []
    for sk in sketches:
        if sk.config != config:
            raise PipelineError("cannot merge sketches with different configs")
        entries.extend(sk.entries.values())
    entries.sort(key=lambda e: (e.first_seen, e.key))
    if raw_bytes is None:
        raw_bytes = sum(sk.n_inserted for sk in sketches) * EVENT_BYTES
    compressed = len(entries) * ENTRY_BYTES + config.tables * config.buckets * BUCKET_BYTES
    degenerate = raw_bytes == 0
    ratio = 1.0 if degenerate else raw_bytes / compressed
    return SketchReport(entries=entries, raw_bytes=raw_bytes, compressed_bytes=compressed,
                        ratio=ratio, degenerate=degenerate, config=config)


def retention_bound(n_events: int, freq: int, buckets: int, threshold: int,
                    tables: int) -> float:
    """Closed-form lower bound on Stage-2 retention probability.

    Defined for a pattern with frequency strictly above the promotion
    threshold; the bound is non-decreasing in tables and buckets and
    non-increasing in the stream length.
    """
    if freq <= threshold:
        raise ConfigError(f"retention bound needs freq > threshold ({freq} <= {threshold})")
    if buckets < 1 or tables < 1:
        raise ConfigError("buckets and tables must be >= 1")
    if n_events < freq:
        raise ConfigError("stream length cannot be below the pattern frequency")
    miss = (n_events - freq) / (buckets * (freq - threshold))
    bound = 1.0 - miss ** tables
    return min(1.0, max(0.0, bound))
