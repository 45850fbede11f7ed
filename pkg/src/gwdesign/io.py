"""CSV / JSON-lines persistence for fields, meshes, wells and chain records."""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .errors import InvalidArgumentError


def write_nodal_csv(path, mesh_or_nodes, values):
    nodes = getattr(mesh_or_nodes, "nodes", mesh_or_nodes)
    values = np.asarray(values, dtype=float)
    if values.shape != (len(nodes),):
        raise InvalidArgumentError("one value per node required")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for (x, y), v in zip(nodes.tolist(), values.tolist()):
            w.writerow([repr(x), repr(y), repr(v)])


def read_nodal_csv(path):
    """Return ``(nodes, values)`` from a nodal CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :2], data[:, 2]


def write_mesh_csv(mesh, nodes_path, elements_path):
    with open(nodes_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "x", "y"])
        for i, (x, y) in enumerate(mesh.nodes.tolist()):
            w.writerow([i, repr(x), repr(y)])
    with open(elements_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "n0", "n1", "n2"])
        for e, tri in enumerate(mesh.elements.tolist()):
            w.writerow([e, *tri])


def write_wells_csv(path, points, scores=None):
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["order", "x", "y", "score"])
        for i, (x, y) in enumerate(points.tolist()):
            s = "" if scores is None else repr(float(scores[i]))
            w.writerow([i, repr(x), repr(y), s])


def read_wells_csv(path):
    """Read well coordinates from a CSV with ``x`` and ``y`` columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "y"} <= set(reader.fieldnames):
            raise InvalidArgumentError(f"{path}: wells CSV needs x and y columns")
        pts = [(float(r["x"]), float(r["y"])) for r in reader]
    return np.array(pts, dtype=float).reshape(-1, 2)


def dump_json(obj, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True))
        fh.write("\n")


class JsonlWriter:
    """Append-only JSON-lines file, flushed per record."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")
        self.count = 0

    def __call__(self, record):
        self._fh.write(json.dumps(record, sort_keys=True))
        self._fh.write("\n")
        self._fh.flush()
        self.count += 1

    def close(self):
        self._fh.close()


def count_jsonl(path):
    """Number of complete records; raises ``ValueError`` on a torn or corrupt line."""
    n = 0
    with open(path) as fh:
        content = fh.read()
    if content and not content.endswith("\n"):
        raise ValueError(f"{path}: last record is not newline-terminated")
    for line in content.splitlines():
        json.loads(line)
        n += 1
    return n


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    probe = os.path.join(path, ".write_test")
    with open(probe, "w") as fh:
        fh.write("")
    os.remove(probe)
