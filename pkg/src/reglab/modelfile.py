"""Model definition files.

An INI-style text file with the sections below; every key is checked and
unknown sections or keys are errors. Example::

    [params]
    alpha = 1
    beta = 1
    gamma = 1
    capacity = 1

    [drift]
    kind = logistic          ; logistic | linear | polynomial
    # coefficients = 0, 1, -1  (polynomial: ascending; linear: the rate c)

    [diffusion]
    kind = feller            ; feller | polynomial
    # coefficients = 0, 1, 0.5

    [lattice]
    dim = 1
    sides = 8                ; comma separated, one per axis
    boundary = torus         ; torus | truncate

    [kernel]
    -1 = 0.5                 ; offset = weight, offsets comma separated in d > 1
    1 = 0.5
    # preset = nearest-neighbor  (alternative to offset lines)

    [weights]
    decay_rate = 1

    [initial]
    kind = constant          ; constant | point | values
    value = 1                ; constant level or point mass at the origin
    # values = 1, 0, 2, ...

[diffusion], [weights] and [initial] are optional (defaults: Feller with
the [params] beta, decay rate 1, constant 1).
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    DiffusionSpec, DriftSpec, Lattice, Model, ModelError, ModelParams, build_kernel,
    liggett_spitzer_weights, nearest_neighbor_stencil,
)

_SECTIONS = {
    "params": {"alpha", "beta", "gamma", "capacity"},
    "drift": {"kind", "coefficients"},
    "diffusion": {"kind", "coefficients"},
    "lattice": {"dim", "sides", "boundary"},
    "kernel": None,  # offsets, or a preset
    "weights": {"decay_rate"},
    "initial": {"kind", "value", "values"},
}
_REQUIRED = ("params", "drift", "lattice", "kernel")


@dataclass(frozen=True)
class ModelFile:
    model: Model
    initial: np.ndarray
    sha256: str
    path: str
    text: str


def _floats(s: str) -> list[float]:
    try:
        return [float(v) for v in s.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ModelError(f"expected numbers, got {s!r}") from None


def _float(sec, key, default=None) -> float:
    if key not in sec:
        if default is None:
            raise ModelError(f"[{sec.name}] needs {key}")
        return default
    v = _floats(sec[key])
    if len(v) != 1:
        raise ModelError(f"[{sec.name}] {key} must be a single number")
    return v[0]


def parse_model_text(text: str, path: str = "<string>") -> ModelFile:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), delimiters=("=",))
    cp.optionxform = str  # keep offsets and keys verbatim
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ModelError(f"{path}: {exc}") from None
    for name in cp.sections():
        if name not in _SECTIONS:
            raise ModelError(f"{path}: unknown section [{name}]")
        allowed = _SECTIONS[name]
        if allowed is not None:
            bad = set(cp[name]) - allowed
            if bad:
                raise ModelError(f"{path}: unknown key(s) {sorted(bad)} in [{name}]")
    for name in _REQUIRED:
        if name not in cp:
            raise ModelError(f"{path}: missing section [{name}]")

    p = cp["params"]
    params = ModelParams(_float(p, "alpha"), _float(p, "beta", 0.0), _float(p, "gamma", 0.0), _float(p, "capacity", 0.0))

    d = cp["drift"]
    kind = d.get("kind", "").strip()
    if kind == "logistic":
        if "coefficients" in d:
            raise ModelError("logistic drift takes gamma and capacity from [params]; drop coefficients")
        drift = DriftSpec.logistic(params.gamma, params.capacity)
    elif kind == "linear":
        drift = DriftSpec.linear(_float(d, "coefficients"))
    elif kind == "polynomial":
        if "coefficients" not in d:
            raise ModelError("polynomial drift needs coefficients")
        drift = DriftSpec.polynomial(_floats(d["coefficients"]))
    else:
        raise ModelError(f"unknown drift kind {kind!r}")

    if "diffusion" in cp:
        g = cp["diffusion"]
        gk = g.get("kind", "").strip()
        if gk == "feller":
            if "coefficients" in g:
                raise ModelError("feller diffusion takes beta from [params]; drop coefficients")
            diffusion = DiffusionSpec.feller(params.beta)
        elif gk == "polynomial":
            if "coefficients" not in g:
                raise ModelError("polynomial diffusion needs coefficients")
            diffusion = DiffusionSpec.polynomial(_floats(g["coefficients"]))
        else:
            raise ModelError(f"unknown diffusion kind {gk!r}")
    else:
        diffusion = DiffusionSpec.feller(params.beta)

    la = cp["lattice"]
    sides = tuple(int(v) for v in _floats(la.get("sides", "")))
    dim = int(_float(la, "dim", float(len(sides))))
    if len(sides) == 1 and dim > 1:
        sides = sides * dim
    if len(sides) != dim or any(s != int(s) for s in sides):
        raise ModelError("[lattice] sides must list one integer per axis")
    lattice = Lattice(sides, la.get("boundary", "torus").strip())

    ks = cp["kernel"]
    if "preset" in ks:
        if len(ks) > 1:
            raise ModelError("[kernel] preset excludes offset lines")
        if ks["preset"].strip() != "nearest-neighbor":
            raise ModelError(f"unknown kernel preset {ks['preset']!r}")
        stencil = nearest_neighbor_stencil(dim)
    else:
        stencil = {}
        for key, val in ks.items():
            off = tuple(int(v) for v in _floats(key))
            if len(off) != dim:
                raise ModelError(f"[kernel] offset {key!r} does not have {dim} components")
            stencil[off] = stencil.get(off, 0.0) + _float(ks, key)
        if not stencil:
            raise ModelError("[kernel] is empty")
    kernel = build_kernel(stencil, lattice)

    decay = _float(cp["weights"], "decay_rate", 1.0) if "weights" in cp else 1.0
    model = Model(params, drift, diffusion, kernel, liggett_spitzer_weights(kernel, decay))

    n = lattice.n_sites
    if "initial" in cp:
        ini = cp["initial"]
        ik = ini.get("kind", "constant").strip()
        if ik == "constant":
            x0 = np.full(n, _float(ini, "value", 1.0))
        elif ik == "point":
            x0 = np.zeros(n)
            x0[lattice.origin_index] = _float(ini, "value")
        elif ik == "values":
            x0 = np.array(_floats(ini.get("values", "")))
            if x0.shape != (n,):
                raise ModelError(f"[initial] values needs {n} entries")
        else:
            raise ModelError(f"unknown initial kind {ik!r}")
    else:
        x0 = np.ones(n)
    if np.any(x0 < 0) or not np.all(np.isfinite(x0)):
        raise ModelError("[initial] must be finite and nonnegative")
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return ModelFile(model, x0, digest, path, text)


def load_model_file(path) -> ModelFile:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc.strerror}") from None
    return parse_model_text(text, str(p))


def logistic_model_text(alpha=1.0, beta=1.0, gamma=1.0, capacity=1.0, sides=(8,), boundary="torus",
                        initial=1.0) -> str:
    """Model file text for the logistic system with nearest-neighbour migration."""
    return (
        f"[params]\nalpha = {alpha!r}\nbeta = {beta!r}\ngamma = {gamma!r}\ncapacity = {capacity!r}\n\n"
        "[drift]\nkind = logistic\n\n[diffusion]\nkind = feller\n\n"
        f"[lattice]\ndim = {len(sides)}\nsides = {', '.join(str(s) for s in sides)}\nboundary = {boundary}\n\n"
        "[kernel]\npreset = nearest-neighbor\n\n[weights]\ndecay_rate = 1\n\n"
        f"[initial]\nkind = constant\nvalue = {initial!r}\n"
    )
