"""Radio side of the simulator: geometry, path loss, SINR to CQI, TB sizing, HARQ, mobility."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

# numerology 0: 12 subcarriers x 14 OFDM symbols per 1 ms subframe
RE_PER_RB = 12 * 14


@dataclass
class ChannelParams:
    # log-distance model anchored at d0 = 10 m; equals 128.1 + 35 log10(d / 1 km)
    pl0: float = 58.1
    d0: float = 10.0
    exponent: float = 3.5
    tx_power: float = 46.0  # dBm over the whole carrier
    noise_density: float = -174.0  # dBm/Hz
    noise_figure: float = 9.0  # dB
    bandwidth_per_rb: float = 180000.0  # Hz
    shadowing_sigma: float = 0.0  # dB, drawn once per UE-BS link
    bler_target: float = 0.1

    def validate(self) -> None:
        if self.exponent <= 0:
            raise ValueError(f"path loss exponent must be positive, got {self.exponent}")
        if not 0.0 <= self.bler_target < 1.0:
            raise ValueError(f"bler_target must lie in [0, 1), got {self.bler_target}")
        if self.d0 <= 0:
            raise ValueError("reference distance d0 must be positive")
        if self.shadowing_sigma < 0:
            raise ValueError("shadowing_sigma must be non-negative")


class CqiTable:
    """Fifteen SINR thresholds and spectral efficiencies, indexed by CQI 1..15."""

    def __init__(self, thresholds_db, efficiencies):
        self.thresholds_db = np.asarray(thresholds_db, dtype=float)
        self.efficiencies = np.asarray(efficiencies, dtype=float)
        if self.thresholds_db.shape != (15,) or self.efficiencies.shape != (15,):
            raise ValueError("a CQI table needs exactly 15 rows")
        if np.any(np.diff(self.thresholds_db) <= 0) or np.any(np.diff(self.efficiencies) <= 0):
            raise ValueError("CQI thresholds and efficiencies must be strictly increasing")

    @classmethod
    def load(cls, path: Optional[str | Path] = None) -> "CqiTable":
        if path is None:
            with resources.files("qosched").joinpath("data/cqi_table.txt").open() as fh:
                rows = np.loadtxt(fh, ndmin=2)
        else:
            rows = np.loadtxt(path, ndmin=2)
        order = np.argsort(rows[:, 0])
        rows = rows[order]
        if not np.array_equal(rows[:, 0], np.arange(1, 16)):
            raise ValueError("CQI table rows must cover indices 1..15")
        return cls(rows[:, 1], rows[:, 2])

    def efficiency(self, cqi: int) -> float:
        return 0.0 if cqi <= 0 else float(self.efficiencies[cqi - 1])

    def rbg_bits(self, rbg_size: int) -> np.ndarray:
        """Per-CQI bits carried by a single RBG (index 0 is CQI 0)."""
        return np.array([tb_bits(c, 1, rbg_size, self) for c in range(16)], dtype=np.int64)


_DEFAULT_TABLE: Optional[CqiTable] = None


def default_table() -> CqiTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = CqiTable.load()
    return _DEFAULT_TABLE


def path_loss(distance, params: ChannelParams, shadowing=0.0):
    """Log-distance path loss in dB; distances below d0 are clamped to d0."""
    d = np.maximum(np.asarray(distance, dtype=float), params.d0)
    pl = params.pl0 + 10.0 * params.exponent * np.log10(d / params.d0) + shadowing
    return float(pl) if np.ndim(pl) == 0 else pl


def _dbm_to_mw(x):
    return np.power(10.0, np.asarray(x) / 10.0)


def rx_power_dbm(positions, bs_positions, params: ChannelParams, n_rb: int, shadowing=None):
    """Per-RB received power (dBm) from every BS, shape (n_ue, n_bs)."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    bs_positions = np.atleast_2d(np.asarray(bs_positions, dtype=float))
    dist = np.linalg.norm(positions[:, None, :] - bs_positions[None, :, :], axis=-1)
    sh = 0.0 if shadowing is None else shadowing
    per_rb_tx = params.tx_power - 10.0 * math.log10(n_rb)
    return per_rb_tx - path_loss(dist, params, sh)


def sinr_db(positions, serving, bs_positions, params: ChannelParams, n_rb: int, shadowing=None):
    """Wideband SINR of each UE towards its serving BS.

    Every other BS is treated as a full-buffer interferer on all RBs.
    """
    rx_mw = _dbm_to_mw(rx_power_dbm(positions, bs_positions, params, n_rb, shadowing))
    serving = np.atleast_1d(np.asarray(serving, dtype=np.int64))
    idx = np.arange(rx_mw.shape[0])
    signal = rx_mw[idx, serving]
    interference = rx_mw.sum(axis=1) - signal
    noise = _dbm_to_mw(params.noise_density + params.noise_figure
                       + 10.0 * math.log10(params.bandwidth_per_rb))
    return 10.0 * np.log10(signal / (interference + noise))


def cqi_from_sinr(sinr, table: CqiTable):
    """Highest CQI whose threshold does not exceed the SINR, 0 below the table."""
    out = np.searchsorted(table.thresholds_db, np.asarray(sinr, dtype=float), side="right")
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)


def compute_cqi(ue, bs_positions, params: ChannelParams, table: CqiTable, n_rb: int,
                shadowing=None) -> int:
    """CQI reported by a single UE (anything with ``position`` and ``serving_bs``)."""
    sh = None if shadowing is None else np.atleast_2d(shadowing)
    s = sinr_db(ue.position, [ue.serving_bs], bs_positions, params, n_rb, sh)
    return int(cqi_from_sinr(s[0], table))


def tb_bits(cqi: int, n_rbg_assigned: int, rbg_size: int, table: CqiTable) -> int:
    if cqi <= 0 or n_rbg_assigned <= 0:
        return 0
    return int(math.floor(table.efficiency(cqi) * RE_PER_RB * rbg_size * n_rbg_assigned))


class Outcome(enum.Enum):
    DELIVERED = "Delivered"
    HARQ_RETX = "HarqRetx"


def transmission_outcome(cqi: int, rng: np.random.Generator, params: ChannelParams) -> Outcome:
    """Single attempt: fails with probability ``bler_target``."""
    if cqi < 1:
        raise ValueError("cannot transmit at CQI 0")
    if params.bler_target > 0.0 and rng.random() < params.bler_target:
        return Outcome.HARQ_RETX
    return Outcome.DELIVERED


def bs_layout(n_bs: int, spacing: float) -> np.ndarray:
    """BS sites: a triangle for three cells, otherwise a ring of the given spacing."""
    if n_bs == 1:
        return np.zeros((1, 2))
    if n_bs == 3:
        return np.array([[0.0, 0.0], [spacing, 0.0], [spacing / 2, spacing * math.sqrt(3) / 2]])
    radius = spacing / (2 * math.sin(math.pi / n_bs))
    ang = 2 * math.pi * np.arange(n_bs) / n_bs
    return np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)


def area_bounds(bs_positions: np.ndarray, margin: float) -> np.ndarray:
    """[[xmin, ymin], [xmax, ymax]] of the simulated area."""
    return np.array([bs_positions.min(axis=0) - margin, bs_positions.max(axis=0) + margin])


def strongest_bs(position, bs_positions, params: ChannelParams, n_rb: int, shadowing_row=None) -> int:
    rx = rx_power_dbm(position, bs_positions, params, n_rb,
                      None if shadowing_row is None else np.atleast_2d(shadowing_row))[0]
    return int(np.argmax(rx))


def advance_mobility(ue, dt_ms: float, bounds=None, bs_positions=None, params=None,
                     n_rb: int = 1, reselect: bool = False, shadowing_row=None):
    """Constant-velocity motion with reflective walls; optional serving-BS reselection.

    Mutates and returns ``ue``.
    """
    if dt_ms <= 0:
        raise ValueError("dt must be positive")
    ue.position = ue.position + ue.velocity * (dt_ms / 1000.0)
    if bounds is not None:
        lo, hi = bounds
        for k in range(2):
            if ue.position[k] < lo[k]:
                ue.position[k] = 2 * lo[k] - ue.position[k]
                ue.velocity[k] = -ue.velocity[k]
            elif ue.position[k] > hi[k]:
                ue.position[k] = 2 * hi[k] - ue.position[k]
                ue.velocity[k] = -ue.velocity[k]
    if reselect and bs_positions is not None:
        ue.serving_bs = strongest_bs(ue.position, bs_positions, params, n_rb, shadowing_row)
    return ue
