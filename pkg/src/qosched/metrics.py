"""KPI accounting, summaries and CSV/JSON export.

Per-TTI CSV columns, in order::

    tti, class, delivered, dropped, satisfied, mean_hol, reward, hol_sum

``mean_hol`` is empty when no packet of the class completed in that TTI;
``reward`` repeats the TTI's reward summed over all BSs on each class row;
``hol_sum`` is the integer sum behind ``mean_hol`` so that cumulative
figures can be rebuilt exactly.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

DELIVERED, DROPPED, SATISFIED, HOL_SUM = range(4)
CSV_COLUMNS = ("tti", "class", "delivered", "dropped", "satisfied", "mean_hol", "reward", "hol_sum")


class NoData:
    """Marker for a ratio or mean over zero completed packets."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "NoData"

    def __bool__(self):
        return False


NODATA = NoData()


class KpiRecord:
    """Per-TTI, per-class counters plus per-BS reward sums."""

    def __init__(self, classes: Sequence[str], n_ttis: int, n_bs: int):
        self.classes = list(classes)
        self.counts = np.zeros((n_ttis, len(self.classes), 4), dtype=np.int64)
        self.reward = np.zeros((n_ttis, n_bs))
        self.n = 0  # TTIs recorded so far
        self._cidx = {c: i for i, c in enumerate(self.classes)}

    def class_index(self, label: str) -> int:
        return self._cidx[label]

    def add_completion(self, tti: int, label: str, t_hol: int, delivered: bool, satisfied: bool) -> None:
        row = self.counts[tti, self._cidx[label]]
        if delivered:
            row[DELIVERED] += 1
        else:
            row[DROPPED] += 1
        if satisfied:
            row[SATISFIED] += 1
        row[HOL_SUM] += t_hol

    def close_tti(self, tti: int, rewards: Sequence[float]) -> None:
        self.reward[tti] = rewards
        self.n = tti + 1

    def trimmed(self) -> "KpiRecord":
        out = KpiRecord(self.classes, self.n, self.reward.shape[1])
        out.counts = self.counts[: self.n].copy()
        out.reward = self.reward[: self.n].copy()
        out.n = self.n
        return out

    def cumulative(self, start: int = 0) -> np.ndarray:
        """Running totals, shape (n, classes, 4)."""
        return np.cumsum(self.counts[start: self.n], axis=0)

    def totals(self, start: int = 0) -> np.ndarray:
        return self.counts[start: self.n].sum(axis=0)

    def reward_per_tti(self) -> np.ndarray:
        return self.reward[: self.n].sum(axis=1)


def delivery_ratio(totals: np.ndarray, cls_idx: int):
    """satisfied / (delivered + dropped) for one class of a cumulative totals array."""
    t = totals[cls_idx]
    denom = int(t[DELIVERED] + t[DROPPED])
    if denom == 0:
        return NODATA
    return int(t[SATISFIED]) / denom


def mean_hol(totals: np.ndarray, cls_idx: int):
    t = totals[cls_idx]
    n = int(t[DELIVERED] + t[DROPPED])
    if n == 0:
        return NODATA
    return int(t[HOL_SUM]) / n


def reward_curve(rewards: Sequence[float], window: int = 100) -> np.ndarray:
    """Trailing running mean; the first ``window - 1`` points average what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        return r
    c = np.concatenate([[0.0], np.cumsum(r)])
    idx = np.arange(1, r.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def summarize(kpi: KpiRecord, start: int = 0) -> dict[str, Any]:
    tot = kpi.totals(start)
    per_class = {}
    for i, c in enumerate(kpi.classes):
        dr = delivery_ratio(tot, i)
        mh = mean_hol(tot, i)
        per_class[c] = {
            "delivered": int(tot[i, DELIVERED]),
            "dropped": int(tot[i, DROPPED]),
            "satisfied": int(tot[i, SATISFIED]),
            "hol_sum": int(tot[i, HOL_SUM]),
            "delivery_ratio": None if dr is NODATA else dr,
            "mean_hol": None if mh is NODATA else mh,
        }
    rw = kpi.reward_per_tti()[start:]
    return {
        "ttis": int(kpi.n - start),
        "classes": per_class,
        "mean_reward": float(rw.mean()) if rw.size else 0.0,
    }


def csv_text(kpi: KpiRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    rewards = kpi.reward_per_tti()
    for t in range(kpi.n):
        r = repr(float(rewards[t]))
        for i, c in enumerate(kpi.classes):
            d, x, s, h = (int(v) for v in kpi.counts[t, i])
            done = d + x
            w.writerow((t, c, d, x, s, repr(h / done) if done else "", r, h))
    return buf.getvalue()


def summary_text(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def export(kpi: KpiRecord, csv_path: str | Path, json_path: str | Path,
           summary: Optional[dict] = None) -> None:
    """Write the per-TTI CSV and the JSON summary (``summary`` defaults to ``summarize(kpi)``)."""
    csv_path, json_path = Path(csv_path), Path(json_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(csv_text(kpi))
    json_path.write_text(summary_text(summary if summary is not None else summarize(kpi)))


def read_csv(path: str | Path) -> KpiRecord:
    """Rebuild a KpiRecord (single-BS reward column) from an exported CSV."""
    rows = list(csv.DictReader(Path(path).open()))
    classes = list(dict.fromkeys(r["class"] for r in rows))
    n = len(rows) // max(len(classes), 1)
    kpi = KpiRecord(classes, n, 1)
    for r in rows:
        t, i = int(r["tti"]), kpi.class_index(r["class"])
        kpi.counts[t, i] = (int(r["delivered"]), int(r["dropped"]), int(r["satisfied"]), int(r["hol_sum"]))
        kpi.reward[t, 0] = float(r["reward"])
    kpi.n = n
    return kpi
