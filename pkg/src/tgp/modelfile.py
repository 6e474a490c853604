"""Saving and loading fitted models.

The frequencies and phases are not stored. The file keeps the seed,
the kernel width and the frequency covariance, and loading redraws the
basis and compares its checksum with the recorded one.
"""

from __future__ import annotations

import numpy as np

from . import container
from .errors import DataError
from .model import BaseMeasure, FvpdForm, TgpModel
from .rff import sample_basis

KIND = "tgp-model"
FORMAT_VERSION = 1

_META_KEYS = ("algorithm", "lam", "eta", "N", "sigma_grid", "offset", "hyperparams",
              "step", "iters", "mc_samples")


def _jsonable(v):
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer, int)) and not isinstance(v, bool):
        return int(v)
    return v


def model_to_bytes(model: TgpModel) -> bytes:
    basis = model.basis
    if basis.seed is None:
        raise DataError("only models with a seeded basis can be saved")
    meta = {
        "format_version": FORMAT_VERSION,
        "basis": {
            "seed": int(basis.seed),
            "gamma": basis.gamma,
            "S": basis.S,
            "d": basis.d,
            "checksum": basis.checksum(),
            "identity_frequencies": basis.sigma_z is None,
        },
        "model": {k: _jsonable(model.meta[k]) for k in _META_KEYS if k in model.meta},
        "form": "predictive" if model.is_fvpd else "theta",
    }
    arrays = {"mu": model.base.mu, "Sigma": model.base.Sigma}
    if basis.sigma_z is not None:
        arrays["sigma_z"] = basis.sigma_z
    if model.is_fvpd:
        arrays["M_inv"] = model.fvpd.M_inv
        arrays["m"] = model.fvpd.m
    else:
        arrays["theta"] = model.theta
    return container.dumps(KIND, meta, arrays)


def model_from_bytes(blob: bytes) -> TgpModel:
    meta, arrays = container.loads(blob, KIND)
    if meta.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {meta.get('format_version')!r}")
    try:
        b = meta["basis"]
        basis = sample_basis(b["d"], b["S"], b["gamma"], arrays.get("sigma_z"), seed=b["seed"])
        if basis.checksum() != b["checksum"]:
            raise DataError("regenerated basis does not match the recorded checksum")
        base = BaseMeasure(arrays["mu"], arrays["Sigma"])
        info = dict(meta["model"])
        for key in ("sigma_grid", "offset"):
            if key in info:
                info[key] = tuple(info[key])
        if meta["form"] == "predictive":
            return TgpModel(basis, base, fvpd=FvpdForm(arrays["M_inv"], arrays["m"]), meta=info)
        return TgpModel(basis, base, theta=arrays["theta"], meta=info)
    except KeyError as exc:
        raise DataError(f"model file is missing field {exc}") from exc


def save_model(model: TgpModel, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(model_to_bytes(model))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def load_model(path) -> TgpModel:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return model_from_bytes(blob)
