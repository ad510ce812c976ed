#!/usr/bin/env python3
"""Convert raw Planetoid citation-network files to the TSV dataset format.

The raw distribution ships eight pickled files per dataset
(ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}); this script
reassembles the full node ordering and writes the directory layout that
stochattn.data.load_graph expects: features/edges/labels/splits TSVs and
a checksummed manifest. Features are stored raw and the manifest sets
row_normalize, matching the usual preprocessing for attention-based node
classifiers.

Usage:
    python3 scripts/convert_planetoid.py --raw-dir /path/to/planetoid/data \
        --name cora --out data/cora

The raw files are available from the Planetoid repository
(https://github.com/kimiyoung/planetoid, data/ directory).
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse
import yaml

from stochattn import data

PIECES = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def _load_raw(raw_dir, name):
    raw = {}
    for piece in PIECES:
        path = raw_dir / f"ind.{name}.{piece}"
        with open(path, "rb") as fh:
            # the originals are python2 pickles
            raw[piece] = pickle.load(fh, encoding="latin1")
    index_path = raw_dir / f"ind.{name}.test.index"
    raw["test.index"] = np.loadtxt(index_path, dtype=np.int64)
    return raw


def _dense(mat):
    if scipy.sparse.issparse(mat):
        return np.asarray(mat.todense(), dtype=np.float64)
    return np.asarray(mat, dtype=np.float64)


def reassemble(raw):
    """Full-graph arrays in node-id order from the raw Planetoid pieces.

    Rows of allx cover the labeled training nodes and the unlabeled pool;
    tx holds the test nodes, whose positions are given by test.index (the
    index list is shuffled for citeseer, and may have holes: isolated test
    nodes absent from tx get zero features and label 0).
    """
    test_idx = raw["test.index"]
    allx = _dense(raw["allx"])
    tx = _dense(raw["tx"])
    ally = np.asarray(raw["ally"])
    ty = np.asarray(raw["ty"])

    n = max(allx.shape[0], int(test_idx.max()) + 1)
    features = np.zeros((n, allx.shape[1]))
    onehot = np.zeros((n, ally.shape[1]))
    features[: allx.shape[0]] = allx
    onehot[: ally.shape[0]] = ally
    features[test_idx] = tx
    onehot[test_idx] = ty
    labels = onehot.argmax(axis=1).astype(np.int64)

    edges = set()
    for u, neighbors in raw["graph"].items():
        for v in neighbors:
            if u == v:
                continue  # self-loops are the model's business, not the data's
            edges.add((min(u, v), max(u, v)))
    edge_arr = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)

    n_train = np.asarray(raw["y"]).shape[0]
    splits = {
        "train": np.arange(n_train, dtype=np.int64),
        "val": np.arange(n_train, n_train + 500, dtype=np.int64),
        "test": np.sort(test_idx),
    }
    return features, edge_arr, labels, splits


def convert(raw_dir, name, out_dir):
    raw = _load_raw(Path(raw_dir), name)
    features, edges, labels, splits = reassemble(raw)
    dataset = data.GraphDataset(name=name, features=features, edges=edges,
                                labels=labels, splits=splits)
    manifest_path = data.write_graph(dataset, out_dir)
    # load-time row normalization; the stored features stay raw counts
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = yaml.safe_load(fh)
    manifest["row_normalize"] = True
    with open(manifest_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)
    data.load_graph(manifest_path)  # round-trip validation, checksums included
    return manifest_path


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--raw-dir", required=True,
                        help="directory holding the ind.<name>.* files")
    parser.add_argument("--name", required=True,
                        choices=sorted(data.KNOWN_DATASETS),
                        help="dataset name (fixes the expected shapes)")
    parser.add_argument("--out", required=True,
                        help="output directory for the TSVs and manifest")
    args = parser.parse_args(argv)
    manifest_path = convert(args.raw_dir, args.name, args.out)
    print(f"wrote {manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
