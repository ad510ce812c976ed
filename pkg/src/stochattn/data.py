"""Graph dataset container and its on-disk TSV format.

A dataset is a directory of four tab-separated files plus a YAML manifest:

    features.tsv   node_id <tab> f1 ... fF         one row per node, ids 0..N-1 ascending
    edges.tsv      u <tab> v                       undirected pairs, endpoints in range
    labels.tsv     node_id <tab> label             every node exactly once
    splits.tsv     node_id <tab> train|val|test|none

The manifest records the file names, their SHA-256 checksums, a dataset
name, and a row_normalize flag. Checksums are verified on load before any
parsing. When row_normalize is set, feature rows are scaled to sum to one
at load time (zero rows are left alone); write_graph stores features as
they are and clears the flag, so a write/load round trip is exact.
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import DataValidationError, IntegrityError, ParseError

SPLIT_TAGS = ("train", "val", "test", "none")

# name -> (nodes, features, classes, train, val, test)
KNOWN_DATASETS = {
    "cora": (2708, 1433, 7, 140, 500, 1000),
    "citeseer": (3327, 3703, 6, 120, 500, 1000),
    "pubmed": (19717, 500, 3, 60, 500, 1000),
}

_FILE_KEYS = ("features", "edges", "labels", "splits")


@dataclass
class GraphDataset:
    name: str
    features: np.ndarray   # [N, F] float64
    edges: np.ndarray      # [E, 2] int, undirected pairs as stored
    labels: np.ndarray     # [N] int
    splits: dict           # tag -> sorted int array (train/val/test/none)

    @property
    def n_nodes(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def __eq__(self, other):
        if not isinstance(other, GraphDataset):
            return NotImplemented
        return (self.name == other.name
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.labels, other.labels)
                and set(self.splits) == set(other.splits)
                and all(np.array_equal(self.splits[k], other.splits[k])
                        for k in self.splits))


def row_normalize(features):
    """Scale each row to sum to 1; rows summing to 0 pass through."""
    sums = features.sum(axis=1, keepdims=True)
    safe = np.where(sums == 0.0, 1.0, sums)
    return features / safe


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line:
                yield line_no, line.split("\t")


def _parse_int(field, path, line_no, what):
    try:
        return int(field)
    except ValueError:
        raise ParseError(str(path), line_no, f"bad {what} {field!r}") from None


def _parse_features(path):
    rows, width = [], None
    for line_no, fields in _lines(path):
        if len(fields) < 2:
            raise ParseError(str(path), line_no, "expected node_id and at least one feature")
        node = _parse_int(fields[0], path, line_no, "node id")
        if node != len(rows):
            raise ParseError(str(path), line_no,
                             f"node ids must be 0..N-1 ascending, got {node}")
        if width is None:
            width = len(fields) - 1
        elif len(fields) - 1 != width:
            raise ParseError(str(path), line_no,
                             f"expected {width} features, got {len(fields) - 1}")
        try:
            rows.append([float(f) for f in fields[1:]])
        except ValueError:
            raise ParseError(str(path), line_no, "bad feature value") from None
    if not rows:
        raise ParseError(str(path), 1, "empty features file")
    return np.array(rows, dtype=np.float64)


def _parse_edges(path, n):
    pairs = []
    for line_no, fields in _lines(path):
        if len(fields) != 2:
            raise ParseError(str(path), line_no, "expected exactly two node ids")
        u = _parse_int(fields[0], path, line_no, "node id")
        v = _parse_int(fields[1], path, line_no, "node id")
        if not (0 <= u < n and 0 <= v < n):
            raise ParseError(str(path), line_no, f"edge endpoint out of range: {u} {v}")
        pairs.append((u, v))
    return np.array(pairs, dtype=np.intp).reshape(len(pairs), 2)


def _parse_labels(path, n):
    labels = np.full(n, -1, dtype=np.intp)
    for line_no, fields in _lines(path):
        if len(fields) != 2:
            raise ParseError(str(path), line_no, "expected node_id and label")
        node = _parse_int(fields[0], path, line_no, "node id")
        label = _parse_int(fields[1], path, line_no, "label")
        if not 0 <= node < n:
            raise ParseError(str(path), line_no, f"node id out of range: {node}")
        if label < 0:
            raise ParseError(str(path), line_no, f"negative label: {label}")
        if labels[node] != -1:
            raise ParseError(str(path), line_no, f"duplicate label for node {node}")
        labels[node] = label
    missing = np.flatnonzero(labels == -1)
    if missing.size:
        raise DataValidationError(f"{path}: node {missing[0]} has no label")
    return labels


def _parse_splits(path, n):
    tags = np.full(n, -1, dtype=np.intp)
    for line_no, fields in _lines(path):
        if len(fields) != 2:
            raise ParseError(str(path), line_no, "expected node_id and split tag")
        node = _parse_int(fields[0], path, line_no, "node id")
        if fields[1] not in SPLIT_TAGS:
            raise ParseError(str(path), line_no, f"unknown split tag {fields[1]!r}")
        if not 0 <= node < n:
            raise ParseError(str(path), line_no, f"node id out of range: {node}")
        if tags[node] != -1:
            raise ParseError(str(path), line_no, f"duplicate split for node {node}")
        tags[node] = SPLIT_TAGS.index(fields[1])
    missing = np.flatnonzero(tags == -1)
    if missing.size:
        raise DataValidationError(f"{path}: node {missing[0]} has no split tag")
    return {tag: np.flatnonzero(tags == i)
            for i, tag in enumerate(SPLIT_TAGS)}


def _validate_known(dataset):
    stats = KNOWN_DATASETS.get(dataset.name)
    if stats is None:
        return
    n, f, c, tr, va, te = stats
    got = (dataset.n_nodes, dataset.n_features, dataset.n_classes,
           len(dataset.splits["train"]), len(dataset.splits["val"]),
           len(dataset.splits["test"]))
    if got != (n, f, c, tr, va, te):
        raise DataValidationError(
            f"dataset {dataset.name!r}: expected nodes/features/classes/splits "
            f"{(n, f, c, tr, va, te)}, got {got}")


def load_graph(manifest_path):
    """Load and validate a dataset directory; checksums are checked first."""
    manifest_path = Path(manifest_path)
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = yaml.safe_load(fh)
    if not isinstance(manifest, dict):
        raise DataValidationError(f"{manifest_path}: manifest is not a mapping")
    required = {"name", "row_normalize", "files", "sha256"}
    unknown = set(manifest) - required
    if unknown:
        raise DataValidationError(f"{manifest_path}: unknown manifest keys {sorted(unknown)}")
    missing = required - set(manifest)
    if missing:
        raise DataValidationError(f"{manifest_path}: missing manifest keys {sorted(missing)}")
    base = manifest_path.parent
    paths = {}
    for key in _FILE_KEYS:
        if key not in manifest["files"] or key not in manifest["sha256"]:
            raise DataValidationError(f"{manifest_path}: manifest lacks entry for {key!r}")
        paths[key] = base / manifest["files"][key]
        if not paths[key].exists():
            raise DataValidationError(f"missing data file {paths[key]}")
        digest = _sha256(paths[key])
        if digest != manifest["sha256"][key]:
            raise IntegrityError(
                f"{paths[key]}: checksum mismatch "
                f"(manifest {manifest['sha256'][key]}, file {digest})")
    features = _parse_features(paths["features"])
    n = features.shape[0]
    dataset = GraphDataset(
        name=str(manifest["name"]),
        features=features,
        edges=_parse_edges(paths["edges"], n),
        labels=_parse_labels(paths["labels"], n),
        splits=_parse_splits(paths["splits"], n),
    )
    _validate_known(dataset)
    if manifest["row_normalize"]:
        dataset.features = row_normalize(dataset.features)
    return dataset


def write_graph(dataset, directory):
    """Write the four TSVs plus manifest; returns the manifest path.

    Floats are written with repr, which round-trips float64 exactly. The
    manifest's row_normalize flag is written as false because features are
    stored exactly as held in memory.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = {key: f"{key}.tsv" for key in _FILE_KEYS}

    with open(directory / names["features"], "w", encoding="utf-8") as fh:
        for i, row in enumerate(dataset.features):
            fh.write(str(i) + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")
    with open(directory / names["edges"], "w", encoding="utf-8") as fh:
        for u, v in dataset.edges:
            fh.write(f"{u}\t{v}\n")
    with open(directory / names["labels"], "w", encoding="utf-8") as fh:
        for i, label in enumerate(dataset.labels):
            fh.write(f"{i}\t{label}\n")
    tag_of = np.full(dataset.n_nodes, SPLIT_TAGS.index("none"), dtype=np.intp)
    for tag, idx in dataset.splits.items():
        tag_of[idx] = SPLIT_TAGS.index(tag)
    with open(directory / names["splits"], "w", encoding="utf-8") as fh:
        for i in range(dataset.n_nodes):
            fh.write(f"{i}\t{SPLIT_TAGS[tag_of[i]]}\n")

    manifest = {
        "name": dataset.name,
        "row_normalize": False,
        "files": names,
        "sha256": {key: _sha256(directory / names[key]) for key in _FILE_KEYS},
    }
    manifest_path = directory / "manifest.yaml"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)
    return manifest_path
