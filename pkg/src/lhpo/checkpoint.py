"""Binary checkpoints for surrogates and ensembles.

Layout: magic bytes ``LHPO1``, a little-endian uint32 header length, a JSON
header (architecture, member count, member seeds), then the members' weight
vectors as raw little-endian float64. Raw bytes make the roundtrip bit-exact.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from lhpo.ensemble import Ensemble
from lhpo.errors import FormatError
from lhpo.surrogate import Architecture, SurrogateParams

MAGIC = b"LHPO1"


def save_ensemble(ens: Ensemble, path: str | os.PathLike) -> None:
    arch = ens.arch
    header = {
        "arch": {"input_dim": arch.input_dim, "set_dim": arch.set_dim, "width": arch.width},
        "n_members": len(ens.members),
        "n_params": arch.n_params,
        "member_seeds": [int(s) for s in ens.member_seeds],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for m in ens.members:
            fh.write(np.ascontiguousarray(m.theta, dtype="<f8").tobytes())


def load_ensemble(path: str | os.PathLike) -> Ensemble:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes (not a checkpoint)")
    offset = len(MAGIC)
    (header_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    try:
        header = json.loads(data[offset : offset + header_len].decode("utf-8"))
        arch = Architecture(**header["arch"])
        n_members = header["n_members"]
        n_params = header["n_params"]
        seeds = [int(s) for s in header["member_seeds"]]
    except (json.JSONDecodeError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header ({exc})") from exc
    offset += header_len
    if n_params != arch.n_params:
        raise FormatError(f"{path}: header weight count disagrees with architecture")
    expected = offset + 8 * n_members * n_params
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    members = []
    for i in range(n_members):
        theta = np.frombuffer(
            data, dtype="<f8", count=n_params, offset=offset + 8 * i * n_params
        ).astype(np.float64)
        members.append(SurrogateParams(arch, theta))
    return Ensemble(members, seeds)


def save_params(params: SurrogateParams, path: str | os.PathLike) -> None:
    """Single-surrogate checkpoint: an ensemble container with one member."""
    save_ensemble(Ensemble([params], [0]), path)


def load_params(path: str | os.PathLike) -> SurrogateParams:
    ens = load_ensemble(path)
    if len(ens.members) != 1:
        raise FormatError(f"{path}: expected a single-member checkpoint")
    return ens.members[0]
