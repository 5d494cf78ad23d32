"""Checkpoints (``model.json`` + ``weights.bin``) and dataset bundles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WEIGHTS_DTYPE = "<f8"


def save_checkpoint(directory, meta, arrays):
    """Write ``meta`` plus a tensor index to model.json and the raw values to weights.bin.

    Arrays are written in sorted-name order as little-endian float64.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    chunks = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype=WEIGHTS_DTYPE)
        index.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        offset += a.size
        chunks.append(a.ravel().tobytes())
    doc = dict(meta)
    doc["tensors"] = index
    doc["dtype"] = "float64-le"
    with open(directory / "model.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    with open(directory / "weights.bin", "wb") as fh:
        for c in chunks:
            fh.write(c)


def load_checkpoint(directory):
    directory = Path(directory)
    with open(directory / "model.json") as fh:
        meta = json.load(fh)
    flat = np.fromfile(directory / "weights.bin", dtype=WEIGHTS_DTYPE).astype(np.float64)
    tensors = meta.pop("tensors")
    expected = sum(t["count"] for t in tensors)
    if flat.size != expected:
        raise ValueError(f"{directory}: weights.bin holds {flat.size} values, index expects {expected}")
    arrays = {}
    for t in tensors:
        arrays[t["name"]] = flat[t["offset"] : t["offset"] + t["count"]].reshape(t["shape"]).copy()
    meta.pop("dtype", None)
    return meta, arrays


def write_csv(path, array, header):
    array = np.atleast_2d(np.asarray(array, dtype=np.float64))
    if array.shape[1] != len(header):
        raise ValueError(f"{path}: {array.shape[1]} columns but {len(header)} header names")
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in array:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


@dataclass
class DatasetBundle:
    """Joint samples ``a = [m, d]`` plus the coordinates that describe ``d``.

    ``param_coords`` is set when the parameter is itself a field (e.g. a
    source term sampled on its own grid).
    """

    params: np.ndarray
    responses: np.ndarray
    coords: np.ndarray
    meta: dict = field(default_factory=dict)
    param_coords: np.ndarray = None

    def __post_init__(self):
        self.params = np.atleast_2d(np.asarray(self.params, dtype=np.float64))
        self.responses = np.atleast_2d(np.asarray(self.responses, dtype=np.float64))
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim == 1:
            self.coords = self.coords[:, None]
        if self.param_coords is not None:
            self.param_coords = np.asarray(self.param_coords, dtype=np.float64)
            if self.param_coords.ndim == 1:
                self.param_coords = self.param_coords[:, None]
        self.validate()

    @property
    def n_m(self):
        return self.params.shape[1]

    @property
    def n_d(self):
        return self.responses.shape[1]

    @property
    def n_samples(self):
        return self.params.shape[0]

    def validate(self):
        if self.params.shape[0] != self.responses.shape[0]:
            raise ValueError("params and responses have different sample counts")
        if self.coords.shape[0] != self.n_d:
            raise ValueError("one coordinate row per response column required")
        if self.param_coords is not None and self.param_coords.shape[0] != self.n_m:
            raise ValueError("one parameter coordinate row per parameter column required")
        for name in ("params", "responses", "coords"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")
        for key, expected in (("n_m", self.n_m), ("n_d", self.n_d)):
            if key in self.meta and self.meta[key] != expected:
                raise ValueError(f"meta {key}={self.meta[key]} but data has {expected}")

    def subset(self, rows):
        return DatasetBundle(
            self.params[rows], self.responses[rows], self.coords, dict(self.meta), self.param_coords
        )

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = dict(self.meta)
        meta.update(
            n_m=self.n_m,
            n_d=self.n_d,
            n_samples=self.n_samples,
            coord_dim=self.coords.shape[1],
            param_field=self.param_coords is not None,
        )
        names = meta.get("param_names") or [f"m{k}" for k in range(self.n_m)]
        axes = meta.get("coord_names") or [f"x{k}" for k in range(self.coords.shape[1])]
        write_csv(directory / "params.csv", self.params, names)
        write_csv(directory / "responses.csv", self.responses, [f"d{k}" for k in range(self.n_d)])
        write_csv(directory / "coords.csv", self.coords, axes)
        if self.param_coords is not None:
            write_csv(
                directory / "param_coords.csv",
                self.param_coords,
                [f"x{k}" for k in range(self.param_coords.shape[1])],
            )
        with open(directory / "meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        self.meta = meta

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        with open(directory / "meta.json") as fh:
            meta = json.load(fh)
        _, params = read_csv(directory / "params.csv")
        _, responses = read_csv(directory / "responses.csv")
        _, coords = read_csv(directory / "coords.csv")
        pc = directory / "param_coords.csv"
        param_coords = read_csv(pc)[1] if pc.exists() else None
        return cls(params, responses, coords, meta, param_coords)
