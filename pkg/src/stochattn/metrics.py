"""Metrics records and their JSONL persistence.

One record is one measurement: a step, a split, a seed, and whichever
numeric fields apply. Serialization is lossless for float64 (json round
trips shortest-repr floats exactly), and unknown fields on read are hard
errors so a schema drift cannot pass silently.
"""

import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

_SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    split: str
    seed: int
    nll: float = None
    kl: float = None
    l2: float = None
    total: float = None
    kl_weight: float = None
    accuracy: float = None
    pavpu: float = None
    wall_ms: float = None

    def __post_init__(self):
        if self.split not in _SPLITS:
            raise ConfigError(f"split must be one of {_SPLITS}, got {self.split!r}")

    def to_json(self):
        doc = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, line):
        doc = json.loads(line)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown metrics field {sorted(unknown)[0]!r}")
        return cls(**doc)


def write_records(path, records, append=False):
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


def append_record(path, record):
    write_records(path, [record], append=True)


def read_records(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(MetricsRecord.from_json(line))
    return records
