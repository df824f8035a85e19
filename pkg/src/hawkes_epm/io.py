"""Event and covariate ingestion, lossless checkpoints and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import EventSequence
from .hgap_epm import CommunityParams
from .model import CovariateMatrix, HawkesParams

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hawkes-epm-checkpoint"
CHECKPOINT_VERSION = 1


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class CheckpointError(DataError):
    pass


@dataclass
class LoadedEvents:
    data: EventSequence
    vocab: list
    n_self_edges: int

    def __iter__(self):
        # allows ``data, vocab, n_self = load_events(...)``
        return iter((self.data, self.vocab, self.n_self_edges))


def load_events(path, vocab=None, T=None, time_scale=1.0) -> LoadedEvents:
    """Read a ``t,src,dst`` CSV.

    Node ids are strings mapped to dense integers in order of first
    appearance, or through a given ``vocab`` (unknown ids are then an
    error).  Rows are sorted stably by time; self-edges are skipped with a
    counted warning.  ``time_scale`` multiplies every time (e.g. 1/86400 to
    read seconds as days).  T defaults to the last event time.
    """
    path = Path(path)
    fixed = vocab is not None
    names = list(vocab) if fixed else []
    index = {name: i for i, name in enumerate(names)}
    if len(index) != len(names):
        raise DataError("vocabulary contains duplicate ids")
    ts, ss, ds = [], [], []
    n_self = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, expected header 't,src,dst'")
        if [h.strip() for h in header] != ["t", "src", "dst"]:
            raise DataError(f"{path}: line 1: expected header 't,src,dst', got {','.join(header)!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataError(f"{path}: line {line}: expected 3 fields, got {len(row)}")
            try:
                t = float(row[0]) * time_scale
            except ValueError:
                raise DataError(f"{path}: line {line}: time {row[0]!r} is not a number") from None
            if not np.isfinite(t) or t < 0:
                raise DataError(f"{path}: line {line}: time must be finite and nonnegative")
            s, d = row[1].strip(), row[2].strip()
            if not s or not d:
                raise DataError(f"{path}: line {line}: empty node id")
            if s == d:
                n_self += 1
                continue
            ids = []
            for name in (s, d):
                if name not in index:
                    if fixed:
                        raise DataError(f"{path}: line {line}: node {name!r} not in vocabulary")
                    index[name] = len(names)
                    names.append(name)
                ids.append(index[name])
            ts.append(t)
            ss.append(ids[0])
            ds.append(ids[1])
    if n_self:
        warnings.warn(f"{path}: skipped {n_self} self-edge rows", RuntimeWarning)
    t = np.asarray(ts, dtype=np.float64)
    order = np.argsort(t, kind="stable")
    horizon = float(t.max()) if t.size else 0.0
    if T is not None:
        if t.size and T < horizon:
            raise DataError(f"horizon T={T} is before the last event at {horizon}")
        horizon = float(T)
    data = EventSequence(t[order], np.asarray(ss, np.int64)[order], np.asarray(ds, np.int64)[order],
                         horizon, len(names))
    return LoadedEvents(data, names, n_self)


def write_events(path, data: EventSequence, vocab=None):
    names = vocab if vocab is not None else [str(i) for i in range(data.V)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "src", "dst"])
        for t, s, d in zip(data.t.tolist(), data.src.tolist(), data.dst.tolist()):
            w.writerow([repr(t), names[s], names[d]])


def load_covariates(path, vocab, D=None) -> CovariateMatrix | None:
    """Read ``src,dst,x1..xD``; pairs not listed are zero vectors.

    Returns None when ``path`` is None (covariates disabled).
    """
    if path is None:
        return None
    path = Path(path)
    index = {name: i for i, name in enumerate(vocab)}
    x = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["src", "dst"]:
            raise DataError(f"{path}: line 1: expected header 'src,dst,x1,...'")
        width = len(header) - 2
        if D is not None and width != D:
            raise DataError(f"{path}: covariate dimension {width} does not match D={D}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != width + 2:
                raise DataError(f"{path}: line {line}: expected {width + 2} fields, got {len(row)}")
            s, d = row[0].strip(), row[1].strip()
            for name in (s, d):
                if name not in index:
                    raise DataError(f"{path}: line {line}: node {name!r} not in vocabulary")
            key = (index[s], index[d])
            if key in x:
                raise DataError(f"{path}: line {line}: duplicate covariate row for pair ({s}, {d})")
            try:
                vec = np.array([float(c) for c in row[2:]])
            except ValueError:
                raise DataError(f"{path}: line {line}: non-numeric covariate") from None
            if not np.all(np.isfinite(vec)):
                raise DataError(f"{path}: line {line}: non-finite covariate")
            x[key] = vec
    return CovariateMatrix(x, width)


# lossless encoding --------------------------------------------------------------

def _enc_float(v):
    return float(v).hex()


def _enc_array(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "hex": [float(v).hex() for v in a.ravel().tolist()]}


def _dec_array(obj):
    shape = tuple(int(s) for s in obj["shape"])
    flat = np.array([float.fromhex(h) for h in obj["hex"]], dtype=np.float64)
    if flat.size != int(np.prod(shape)):
        raise CheckpointError(f"array payload has {flat.size} values for shape {shape}")
    return flat.reshape(shape)


def encode_params(params) -> dict:
    if isinstance(params, CommunityParams):
        return {"kind": "community",
                "phi": _enc_array(params.phi), "omega": _enc_array(params.omega),
                "r": _enc_array(params.r), "a": _enc_array(params.a), "c": _enc_array(params.c),
                "hyper": {k: _enc_float(v) for k, v in sorted(params.hyper.items())}}
    if isinstance(params, HawkesParams):
        keys = sorted(params.mu)
        K = params.K
        mu_vals = np.stack([params.mu[k] for k in keys]) if keys else np.zeros((0, K, K))
        return {"kind": "hawkes",
                "phi": _enc_array(params.phi), "omega": _enc_array(params.omega),
                "alpha": _enc_array(params.alpha), "delta": _enc_float(params.delta),
                "mu_pairs": [list(k) for k in keys], "mu": _enc_array(mu_vals),
                "beta": _enc_array(params.beta), "tau": _enc_float(params.tau),
                "nu": _enc_array(params.nu),
                "fit_horizon": None if params.fit_horizon is None else _enc_float(params.fit_horizon),
                "e0": _enc_float(params.e0), "f0": _enc_float(params.f0)}
    raise TypeError(f"cannot encode {type(params).__name__}")


def decode_params(obj):
    try:
        kind = obj["kind"]
        if kind == "community":
            return CommunityParams(_dec_array(obj["phi"]), _dec_array(obj["omega"]),
                                   _dec_array(obj["r"]), _dec_array(obj["a"]), _dec_array(obj["c"]),
                                   {k: float.fromhex(v) for k, v in obj["hyper"].items()})
        if kind == "hawkes":
            mu_vals = _dec_array(obj["mu"])
            pairs = obj["mu_pairs"]
            if len(pairs) != mu_vals.shape[0]:
                raise CheckpointError("mu pairs and values differ in length")
            fh = obj["fit_horizon"]
            return HawkesParams(
                phi=_dec_array(obj["phi"]), omega=_dec_array(obj["omega"]),
                alpha=_dec_array(obj["alpha"]), delta=float.fromhex(obj["delta"]),
                mu={(int(u), int(v)): mu_vals[i] for i, (u, v) in enumerate(pairs)},
                beta=_dec_array(obj["beta"]), tau=float.fromhex(obj["tau"]),
                nu=_dec_array(obj["nu"]),
                fit_horizon=None if fh is None else float.fromhex(fh),
                e0=float.fromhex(obj["e0"]), f0=float.fromhex(obj["f0"]))
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as err:
        raise CheckpointError(f"malformed checkpoint payload: {err!r}") from err
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def save_checkpoint(path, params, vocab=None, meta=None):
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
           "params": encode_params(params), "vocab": vocab, "meta": meta or {}}
    text = json.dumps(doc, sort_keys=True, indent=1)
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def load_checkpoint(path, kind=None):
    """Returns ``(params, vocab, meta)``; nothing is returned on any error."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {doc.get('version')} "
                              f"but this build reads version {CHECKPOINT_VERSION}")
    params = decode_params(doc.get("params", {}))
    if kind is not None and doc["params"]["kind"] != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, "
                              f"found {doc['params']['kind']}")
    return params, doc.get("vocab"), doc.get("meta", {})


def checkpoint_roundtrip(params):
    return decode_params(json.loads(json.dumps(encode_params(params))))


# manifests --------------------------------------------------------------------

def config_hash(config) -> str:
    text = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def append_manifest(out_dir, filename, config, seed):
    """One JSON line per emitted file in ``<out_dir>/manifest.jsonl``."""
    line = json.dumps({"file": str(filename), "config_hash": config_hash(config), "seed": seed},
                      sort_keys=True)
    with open(Path(out_dir) / "manifest.jsonl", "a") as fh:
        fh.write(line + "\n")
