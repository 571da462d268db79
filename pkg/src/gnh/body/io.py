"""Body model interchange file (numpy ``.npz``).

Keys:
    template     V x 3 float32, metres
    faces        F x 3 uint32
    rest_joints  J x 3 float32
    parents      J int32, parents[0] = -1
    weights      V x J float32                     (dense), or
    weights_index V x K int32 + weights_value V x K float32 (sparse, K nonzeros per row)

Shape and pose-corrective fields (``shapedirs``, ``betas``, ``posedirs``) are
accepted and ignored: the shape is fixed at the mean body.
"""
from __future__ import annotations

import warnings

import numpy as np

from .model import ModelError, SkinnedBodyModel

IGNORED_KEYS = ("shapedirs", "betas", "posedirs")


def _densify(index: np.ndarray, value: np.ndarray, n_joints: int) -> np.ndarray:
    if index.shape != value.shape:
        raise ModelError("weights_index and weights_value shapes differ")
    if index.size and (index.min() < 0 or index.max() >= n_joints):
        raise ModelError("weights_index references an unknown joint")
    w = np.zeros((index.shape[0], n_joints))
    np.add.at(w, (np.arange(index.shape[0])[:, None].repeat(index.shape[1], 1), index), value)
    return w


def load_body_model(path) -> SkinnedBodyModel:
    with np.load(path, allow_pickle=False) as z:
        keys = set(z.files)
        missing = {"template", "faces", "rest_joints", "parents"} - keys
        if missing:
            raise ModelError(f"body model file lacks {sorted(missing)}")
        for k in IGNORED_KEYS:
            if k in keys:
                warnings.warn(f"body model field '{k}' ignored (shape fixed at zero)")
        J = z["rest_joints"].shape[0]
        if "weights" in keys:
            w = z["weights"].astype(np.float64)
        elif {"weights_index", "weights_value"} <= keys:
            w = _densify(z["weights_index"], z["weights_value"].astype(np.float64), J)
        else:
            raise ModelError("body model file has no skinning weights")
        return SkinnedBodyModel(template_vertices=z["template"].astype(np.float64),
                                faces=z["faces"].astype(np.int64),
                                rest_joints=z["rest_joints"].astype(np.float64),
                                parents=z["parents"].astype(np.int64),
                                skin_weights=w)


def save_body_model(path, model: SkinnedBodyModel, sparse: bool = False) -> None:
    out = dict(template=model.template_vertices.astype(np.float32),
               faces=model.faces.astype(np.uint32),
               rest_joints=model.rest_joints.astype(np.float32),
               parents=model.parents.astype(np.int32))
    if sparse:
        K = int((model.skin_weights > 0).sum(1).max())
        idx = np.argsort(-model.skin_weights, axis=1)[:, :K]
        out["weights_index"] = idx.astype(np.int32)
        out["weights_value"] = np.take_along_axis(model.skin_weights, idx, 1).astype(np.float32)
    else:
        out["weights"] = model.skin_weights.astype(np.float32)
    np.savez(path, **out)
