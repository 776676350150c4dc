#!/usr/bin/env python3
"""Convert the Planetoid citation datasets (Cora, Citeseer, Pubmed) into
linktheft bundles: edges.txt, attrs.csv, labels.csv, meta.json.

    python3 scripts/fetch_planetoid.py --out data            # download
    python3 scripts/fetch_planetoid.py --raw-dir raw --out data

The raw files are the `ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}`
pickles from the Planetoid repository. Citeseer has test indices with no
feature row; those nodes get zero attributes and no label.
"""

import argparse
import json
import pickle
import sys
import urllib.request
from pathlib import Path

import numpy as np
import scipy.sparse as sp

BASE_URL = "https://github.com/kimiyoung/planetoid/raw/master/data"
PARTS = ["x", "tx", "allx", "y", "ty", "ally", "graph", "test.index"]


def fetch(name, raw_dir):
    raw_dir.mkdir(parents=True, exist_ok=True)
    for part in PARTS:
        path = raw_dir / f"ind.{name}.{part}"
        if path.exists():
            continue
        url = f"{BASE_URL}/ind.{name}.{part}"
        print(f"downloading {url}", file=sys.stderr)
        urllib.request.urlretrieve(url, path)


def load_pickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def load_raw(name, raw_dir):
    objs = {p: load_pickle(raw_dir / f"ind.{name}.{p}") for p in PARTS if p != "test.index"}
    test_index = [int(line) for line in (raw_dir / f"ind.{name}.test.index").read_text().split()]
    allx, tx = sp.csr_matrix(objs["allx"]), sp.csr_matrix(objs["tx"])
    ally, ty = np.asarray(objs["ally"]), np.asarray(objs["ty"])

    n_train = allx.shape[0]
    n = max(max(test_index) + 1, n_train + tx.shape[0])
    n = max(n, max(objs["graph"].keys()) + 1)
    attrs = sp.lil_matrix((n, allx.shape[1]))
    attrs[:n_train] = allx
    labels = np.full(n, -1, dtype=np.int64)
    labels[:n_train] = np.where(ally.sum(1) > 0, ally.argmax(1), -1)
    # Rows of tx/ty belong to the nodes listed in test.index, in file order.
    for row, node in enumerate(test_index):
        attrs[node] = tx[row]
        if ty[row].sum() > 0:
            labels[node] = ty[row].argmax()

    edges = set()
    for u, nbrs in objs["graph"].items():
        for v in nbrs:
            if u != v:
                edges.add((min(u, v), max(u, v)))
    return attrs.tocsr(), labels, sorted(edges), ally.shape[1]


def write_bundle(name, attrs, labels, edges, num_classes, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "edges.txt", "w") as f:
        for u, v in edges:
            f.write(f"{u} {v}\n")
    dense = attrs.toarray()
    with open(out_dir / "attrs.csv", "w") as f:
        for row in dense:
            f.write(",".join(format(v, ".10g") for v in row) + "\n")
    with open(out_dir / "labels.csv", "w") as f:
        f.write("node_id,class_id\n")
        for node, c in enumerate(labels):
            if c >= 0:
                f.write(f"{node},{c}\n")
    meta = {"name": name, "num_classes": int(num_classes), "attr_dim": int(attrs.shape[1])}
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(
        f"{name}: {attrs.shape[0]} nodes, {len(edges)} edges, "
        f"{attrs.shape[1]} attributes, {num_classes} classes -> {out_dir}"
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("data"))
    ap.add_argument("--raw-dir", type=Path, default=None, help="directory with ind.* files")
    ap.add_argument("datasets", nargs="*", default=["cora", "citeseer", "pubmed"])
    args = ap.parse_args()
    raw_dir = args.raw_dir or args.out / "raw"
    for name in args.datasets:
        if args.raw_dir is None:
            fetch(name, raw_dir)
        attrs, labels, edges, num_classes = load_raw(name, raw_dir)
        write_bundle(name, attrs, labels, edges, num_classes, args.out / name)


if __name__ == "__main__":
    main()
