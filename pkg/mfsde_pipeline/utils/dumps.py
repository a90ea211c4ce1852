"""
Dump formats.

Density dumps, binary (.bin): little-endian float64, a header
[d, alpha, M, T, N] followed by the (N + 1) x (2M + 1)^d levels, row-major.
Density dumps, CSV (.csv): a '#mfsde-density' line with the same header,
then one row per level, written with 17 significant digits.

Ensemble dumps, CSV (.csv): a '#mfsde-ensemble' json line, then long
format columns path, n, t, x_1..x_d. Ensemble dumps, binary (.npz).

Every format reads back bit-exact.
"""
import json
import logging
import pathlib

import numpy as np
import pandas as pd

from mfsde_pipeline.fpsolve import DensityField
from mfsde_pipeline.grid import Grid
from mfsde_pipeline.sde import Ensemble
from mfsde_pipeline.utils import to_json

logger = logging.getLogger(__name__)

DENSITY_TAG = "#mfsde-density"
ENSEMBLE_TAG = "#mfsde-ensemble"
HEADER_SIZE = 5
FLOAT = "<f8"


def _header(g):
    return [g.d, g.alpha, g.M, g.T, g.N]


def _grid_from_header(header):
    d, alpha, M, T, N = header
    return Grid(d=int(d), alpha=float(alpha), M=int(M), T=float(T), N=int(N))


def write_density(field, filepath):
    filepath = pathlib.Path(filepath)
    if filepath.suffix == ".csv":
        return write_density_csv(field, filepath)
    header = np.asarray(_header(field.grid), dtype=FLOAT)
    np.concatenate([header, field.values.astype(FLOAT).ravel()]).tofile(filepath)
    logger.debug("wrote density dump %s", filepath)
    return filepath


def write_density_csv(field, filepath):
    g = field.grid
    with open(filepath, "w") as f:
        f.write(
            "{} d={} alpha={!r} M={} T={!r} N={}\n".format(
                DENSITY_TAG, g.d, g.alpha, g.M, g.T, g.N
            )
        )
        pd.DataFrame(field.values).to_csv(
            f, header=False, index=False, float_format="%.17g"
        )
    return pathlib.Path(filepath)


def read_density(filepath):
    """
    :returns: DensityField
    :raises ValueError: the file is not a density dump
    """
    filepath = pathlib.Path(filepath)
    if filepath.suffix == ".csv":
        return read_density_csv(filepath)
    raw = np.fromfile(filepath, dtype=FLOAT)
    if raw.size < HEADER_SIZE:
        raise ValueError("{} is too short for a density dump".format(filepath))
    g = _grid_from_header(raw[:HEADER_SIZE])
    body = raw[HEADER_SIZE:]
    if body.size != (g.N + 1) * g.n_nodes:
        raise ValueError(
            "{} holds {} values, header announces {}".format(
                filepath, body.size, (g.N + 1) * g.n_nodes
            )
        )
    return DensityField(
        grid=g, values=body.reshape(g.N + 1, g.n_nodes), description=filepath.stem
    )


def _csv_grid(filepath):
    with open(filepath) as f:
        first = f.readline().split()
    if not first or first[0] != DENSITY_TAG:
        raise ValueError("{} is not a density dump".format(filepath))
    fields = dict(item.split("=") for item in first[1:])
    return _grid_from_header([fields[key] for key in ("d", "alpha", "M", "T", "N")])


def read_density_grid(filepath):
    """Grid of a density dump, read from its header only"""
    filepath = pathlib.Path(filepath)
    if filepath.suffix == ".csv":
        return _csv_grid(filepath)
    header = np.fromfile(filepath, dtype=FLOAT, count=HEADER_SIZE)
    if header.size < HEADER_SIZE:
        raise ValueError("{} is too short for a density dump".format(filepath))
    return _grid_from_header(header)


def read_density_csv(filepath):
    g = _csv_grid(filepath)
    values = pd.read_csv(
        filepath, skiprows=1, header=None, float_precision="round_trip"
    ).to_numpy(dtype=float)
    return DensityField(
        grid=g,
        values=values.reshape(g.N + 1, g.n_nodes),
        description=pathlib.Path(filepath).stem,
    )


def write_diagnostics(field, filepath):
    frame = pd.DataFrame(
        [vars(rec) for rec in field.diagnostics or ()],
        columns=["n", "mass", "min_value", "max_value", "solver_residual"],
    )
    frame.insert(1, "t", frame["n"] * field.grid.kappa)
    frame.to_csv(filepath, index=False, float_format="%.17g")
    return pathlib.Path(filepath)


def _ensemble_meta(e):
    return dict(
        problem=e.problem,
        T=e.T,
        N=e.N,
        kappa=e.kappa,
        seed=e.seed,
        kappa_brownian=e.kappa_brownian,
        density=e.density,
        method=e.method,
    )


def write_ensemble(e, filepath):
    filepath = pathlib.Path(filepath)
    if filepath.suffix == ".npz":
        np.savez(
            filepath,
            levels=e.levels,
            paths=e.paths,
            x0=e.x0,
            streams=e.streams,
            meta=np.array(to_json(_ensemble_meta(e))),
        )
        return filepath

    P, L, d = e.paths.shape
    frame = pd.DataFrame(
        {
            "path": np.repeat(np.arange(P), L),
            "n": np.tile(e.levels, P),
            "t": np.tile(e.times, P),
        }
    )
    for i in range(d):
        frame["x_{}".format(i + 1)] = e.paths[:, :, i].ravel()
    meta = _ensemble_meta(e)
    meta["streams"] = e.streams
    with open(filepath, "w") as f:
        f.write("{} {}\n".format(ENSEMBLE_TAG, to_json(meta)))
        frame.to_csv(f, index=False, float_format="%.17g")
    return filepath


def read_ensemble(filepath):
    filepath = pathlib.Path(filepath)
    if filepath.suffix == ".npz":
        with np.load(filepath) as data:
            meta = json.loads(str(data["meta"]))
            return Ensemble(
                levels=data["levels"],
                paths=data["paths"],
                x0=data["x0"],
                streams=data["streams"],
                **meta
            )

    with open(filepath) as f:
        tag, _, meta = f.readline().partition(" ")
    if tag != ENSEMBLE_TAG:
        raise ValueError("{} is not an ensemble dump".format(filepath))
    meta = json.loads(meta)
    streams = np.asarray(meta.pop("streams"))
    frame = pd.read_csv(filepath, skiprows=1, float_precision="round_trip")
    P = int(frame["path"].max()) + 1
    levels = frame["n"].to_numpy()[: len(frame) // P]
    xs = [c for c in frame.columns if c.startswith("x_")]
    paths = frame[xs].to_numpy(dtype=float).reshape(P, len(levels), len(xs))
    return Ensemble(
        levels=levels, paths=paths, x0=paths[:, 0].copy(), streams=streams, **meta
    )
