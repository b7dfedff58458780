"""Saving and loading a trained embedding network and its posterior.

File layout
-----------
1. One line of UTF-8 JSON terminated by ``\\n`` (the header).
2. The raw tensor payload: little-endian float64 values, C order, tensors
   concatenated in the order listed in ``header["tensors"]``.

The header holds ``format`` (``"caelmips-checkpoint"``), ``version``, the
network sizes (``context_dim``, ``num_actions``, ``embed_dim``,
``hidden``, ``dropout``), optional ``posterior_context_dim`` and free-form
``config``, plus ``tensors``: a list of ``{"name", "shape", "offset"}``
where ``offset`` counts float64 values from the start of the payload.
Network tensors are named ``net/<param>`` and ``running/<stat>``;
posterior tensors ``posterior/{weights,intercept,mean,scale}``.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import InvalidArgumentError
from .net import PARAM_NAMES, EmbeddingNet
from .posterior import PosteriorModel

FORMAT = "caelmips-checkpoint"
VERSION = 1
_DTYPE = np.dtype("<f8")
_RUNNING = ("m1", "v1", "m2", "v2")
_POSTERIOR = ("weights", "intercept", "mean", "scale")


def save_checkpoint(path, net: EmbeddingNet, posterior: Optional[PosteriorModel] = None, config: Optional[dict] = None) -> None:
    tensors = [(f"net/{k}", net.params[k]) for k in PARAM_NAMES]
    tensors += [(f"running/{k}", net.running[k]) for k in _RUNNING]
    if posterior is not None:
        tensors += [(f"posterior/{k}", getattr(posterior, k)) for k in _POSTERIOR]
    entries, offset = [], 0
    for name, arr in tensors:
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        offset += int(np.size(arr))
    header = {
        "format": FORMAT,
        "version": VERSION,
        "context_dim": net.context_dim,
        "num_actions": net.num_actions,
        "embed_dim": net.embed_dim,
        "hidden": net.hidden,
        "dropout": net.dropout,
        "posterior_context_dim": None if posterior is None else posterior.context_dim,
        "config": config or {},
        "tensors": entries,
    }
    payload = b"".join(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes() for _, arr in tensors)
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)


def load_checkpoint(path) -> tuple[EmbeddingNet, Optional[PosteriorModel], dict]:
    """Inverse of :func:`save_checkpoint`; returns (net, posterior or None, header)."""
    raw = Path(path).read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise InvalidArgumentError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw[:cut].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidArgumentError(f"{path}: unreadable checkpoint header ({exc})") from None
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise InvalidArgumentError(f"{path}: not a version {VERSION} {FORMAT} file")
    payload = np.frombuffer(raw[cut + 1 :], dtype=_DTYPE)
    tensors = {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + size > payload.size:
            raise InvalidArgumentError(f"{path}: truncated payload at tensor {entry['name']}")
        tensors[entry["name"]] = payload[start : start + size].reshape(entry["shape"]).copy()
    net = EmbeddingNet(
        header["context_dim"],
        header["num_actions"],
        header["embed_dim"],
        header["hidden"],
        header["dropout"],
        {k: tensors[f"net/{k}"] for k in PARAM_NAMES},
        {k: tensors[f"running/{k}"] for k in _RUNNING},
    )
    posterior = None
    if header.get("posterior_context_dim") is not None:
        posterior = PosteriorModel(
            *(tensors[f"posterior/{k}"] for k in _POSTERIOR), context_dim=header["posterior_context_dim"]
        )
    return net, posterior, header
