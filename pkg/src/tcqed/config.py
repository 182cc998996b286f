"""Device configuration files (TOML).

Schema::

    temperature_mk = 130.0
    n_thermal = 0.1              # optional; overrides the Bose factor

    [resonator]
    freq_ghz = 6.0
    gamma0_mhz = 0.7
    n_trunc = 3
    synthetic = ["freq_ghz"]     # optional: keys not taken from measurement

    [[qubit]]                    # one table per qubit, chip order
    ejmax_ghz = 17.0
    ec_ghz = 0.462
    g_mhz = 114.8
    t1_ns = 65.0
    t2_ns = 32.5
    n_levels = 2

    [mutuals]                    # optional; identity when absent
    diag_phi0_per_a = [...]
    row = [[...], ...]           # normalized ratios, unit diagonal
    synthetic = true

    [background]                 # optional
    eps_re = 0.05
    eps_im = 0.0
    synthetic = true
"""

from __future__ import annotations

import hashlib
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .device import DeviceConfig, MutualMatrix, ResonatorSpec, TransmonSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUNDLED = {"paper-device": "paper_device.toml"}
DEFAULT_DIAG_MUTUAL = 0.0045 / 100.4e-6  # flux quanta per ampere


def _synthetic_keys(table: dict, prefix: str) -> list[str]:
    mark = table.get("synthetic", False)
    if mark is True:
        return [prefix]
    if isinstance(mark, list):
        return [f"{prefix}.{k}" for k in mark]
    return []


def config_from_dict(doc: dict) -> DeviceConfig:
    try:
        res = doc["resonator"]
        qubits_doc = doc["qubit"]
    except KeyError as exc:
        raise ValueError(f"config is missing the required section {exc.args[0]!r}") from None
    synthetic = _synthetic_keys(res, "resonator")
    resonator = ResonatorSpec(float(res["freq_ghz"]), float(res["gamma0_mhz"]), int(res.get("n_trunc", 3)))
    qubits = []
    for i, q in enumerate(qubits_doc):
        qubits.append(TransmonSpec(
            ej_max=float(q["ejmax_ghz"]), ec=float(q["ec_ghz"]), g_ge=float(q["g_mhz"]),
            n_levels=int(q.get("n_levels", 2)), t1=float(q.get("t1_ns", 65.0)) * 1e-9,
            t2=float(q.get("t2_ns", 32.5)) * 1e-9,
            g_ef=float(q["g_ef_mhz"]) if "g_ef_mhz" in q else None))
        synthetic += _synthetic_keys(q, f"qubit[{i}]")
    n = len(qubits)
    mut = doc.get("mutuals")
    if mut is None:
        mutuals = MutualMatrix.identity(n, DEFAULT_DIAG_MUTUAL)
    else:
        rows = np.asarray(mut.get("row", np.eye(n)), dtype=float)
        diag = mut.get("diag_phi0_per_a", [DEFAULT_DIAG_MUTUAL] * len(rows))
        mutuals = MutualMatrix(rows, diag)
        synthetic += _synthetic_keys(mut, "mutuals")
    bg = doc.get("background", {})
    eps = complex(float(bg.get("eps_re", 0.0)), float(bg.get("eps_im", 0.0)))
    synthetic += _synthetic_keys(bg, "background")
    n_thermal = doc.get("n_thermal")
    return DeviceConfig(resonator, tuple(qubits), mutuals, eps, float(doc.get("temperature_mk", 0.0)),
                        None if n_thermal is None else float(n_thermal), tuple(synthetic))


def load_config(source: str | Path) -> DeviceConfig:
    """Read a config file, or a bundled config by name (``"paper-device"``)."""
    text = read_config_text(source)
    return config_from_dict(tomllib.loads(text))


def read_config_text(source: str | Path) -> str:
    if str(source) in BUNDLED:
        return resources.files("tcqed").joinpath("data", BUNDLED[str(source)]).read_text()
    return Path(source).read_text()


def config_hash(source: str | Path) -> str:
    return hashlib.sha256(read_config_text(source).encode()).hexdigest()


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, str):
        return '"' + x.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return "[" + ", ".join(_fmt(v) for v in x) + "]"


def dumps_config(config: DeviceConfig) -> str:
    """TOML text that :func:`config_from_dict` reads back to an equal config."""
    syn = set(config.synthetic)

    def mark(prefix):
        if prefix in syn:
            return [f"synthetic = true"]
        keys = [s.split(".", 1)[1] for s in syn if s.startswith(prefix + ".")]
        return [f"synthetic = {_fmt(sorted(keys))}"] if keys else []

    lines = [f"temperature_mk = {_fmt(config.temperature_mk)}"]
    if config.n_thermal is not None:
        lines.append(f"n_thermal = {_fmt(config.n_thermal)}")
    r = config.resonator
    lines += ["", "[resonator]", f"freq_ghz = {_fmt(r.omega_r)}", f"gamma0_mhz = {_fmt(r.gamma0)}",
              f"n_trunc = {r.n_truncation}"] + mark("resonator")
    for i, q in enumerate(config.qubits):
        lines += ["", "[[qubit]]", f"ejmax_ghz = {_fmt(q.ej_max)}", f"ec_ghz = {_fmt(q.ec)}",
                  f"g_mhz = {_fmt(q.g_ge)}", f"t1_ns = {_fmt(q.t1 * 1e9)}", f"t2_ns = {_fmt(q.t2 * 1e9)}",
                  f"n_levels = {q.n_levels}"]
        if q.g_ef is not None:
            lines.append(f"g_ef_mhz = {_fmt(q.g_ef)}")
        lines += mark(f"qubit[{i}]")
    m = config.mutuals
    lines += ["", "[mutuals]", f"diag_phi0_per_a = {_fmt(m.diagonal_mutuals)}", "row = ["]
    lines += [f"    {_fmt(row)}," for row in m.ratios]
    lines += ["]"] + mark("mutuals")
    lines += ["", "[background]", f"eps_re = {_fmt(config.epsilon.real)}", f"eps_im = {_fmt(config.epsilon.imag)}"]
    lines += mark("background")
    return "\n".join(lines) + "\n"
