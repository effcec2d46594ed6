"""Binary complex-matrix files.

Every file starts with four little-endian uint32 header words followed by
interleaved (re, im) little-endian doubles in C order:

* channel dumps: header ``(T, F, K, M)``, data shaped (K, M, T, F);
* plain matrices: header ``(rows, cols, 0, 0)``;
* bases: header ``(rows, N, scope, 1)`` with scope 0 = full block and
  1 = sub-block, followed by one double holding the noise variance used.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .subspace import Basis

_HEADER = struct.Struct("<4I")
_SIGMA = struct.Struct("<d")
_SCOPES = {"full": 0, "sub-block": 1}


def _write(path, header, arr, extra=b""):
    arr = np.ascontiguousarray(arr, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*header))
        fh.write(extra)
        fh.write(arr.tobytes())


def _read(path, extra_size=0):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + extra_size:
        raise InvalidInput(f"{path}: file too short for header")
    header = _HEADER.unpack_from(raw)
    extra = raw[_HEADER.size:_HEADER.size + extra_size]
    body = raw[_HEADER.size + extra_size:]
    if len(body) % 16:
        raise InvalidInput(f"{path}: payload is not a whole number of complex doubles")
    return header, extra, np.frombuffer(body, dtype="<c16").astype(complex)


def write_channel_dump(path, H) -> None:
    """Store channels shaped (K, M, T, F)."""
    H = np.asarray(H)
    if H.ndim != 4:
        raise InvalidInput("channel dump must be shaped (K, M, T, F)")
    K, M, T, F = H.shape
    _write(path, (T, F, K, M), H)


def read_channel_dump(path) -> np.ndarray:
    (T, F, K, M), _, data = _read(path)
    if data.size != T * F * K * M:
        raise InvalidInput(f"{path}: header ({T}, {F}, {K}, {M}) does not match payload")
    return data.reshape(K, M, T, F)


def write_matrix(path, A) -> None:
    A = np.asarray(A)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise InvalidInput("only 1-D or 2-D arrays can be stored")
    _write(path, (A.shape[0], A.shape[1], 0, 0), A)


def read_matrix(path) -> np.ndarray:
    (rows, cols, a, b), _, data = _read(path)
    if (a, b) != (0, 0) or data.size != rows * cols:
        raise InvalidInput(f"{path}: not a plain matrix file")
    return data.reshape(rows, cols)


def write_basis(path, basis: Basis) -> None:
    scope = _SCOPES.get(basis.scope)
    if scope is None:
        raise InvalidInput(f"unknown basis scope {basis.scope!r}")
    _write(path, (basis.rows, basis.N, scope, 1), basis.G, _SIGMA.pack(float(basis.sigma2)))


def read_basis(path) -> Basis:
    (rows, N, scope, tag), extra, data = _read(path, _SIGMA.size)
    if tag != 1 or scope not in _SCOPES.values() or data.size != rows * N:
        raise InvalidInput(f"{path}: not a basis file")
    (sigma2,) = _SIGMA.unpack(extra)
    name = {v: k for k, v in _SCOPES.items()}[scope]
    return Basis(data.reshape(rows, N), scope=name, kind="file", sigma2=sigma2)
