"""Force-estimation error summaries per material and per pull phase."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

PHASES = ("all", "tracting", "holding")
COLUMNS = ("material_id", "phase", "n", "mae", "abs_err_sd", "mse", "rmse", "sq_err_sd")


def error_metrics(predictions, targets) -> dict:
    """MAE, MSE and RMSE with the standard deviations of |e| and e^2 (population SD)."""
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"{len(p)} predictions for {len(t)} targets")
    if len(p) == 0:
        raise ValueError("no samples to evaluate")
    e = p - t
    a = np.abs(e)
    sq = e * e
    mse = float(sq.mean())
    return dict(
        n=len(p),
        mae=float(a.mean()),
        abs_err_sd=float(a.std()),
        mse=mse,
        rmse=float(np.sqrt(mse)),
        sq_err_sd=float(sq.std()),
    )


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # dicts keyed by COLUMNS
    skipped: int = 0

    @classmethod
    def build(cls, predictions, targets, materials, phases, skipped=0):
        pred = np.asarray(predictions, dtype=float)
        targ = np.asarray(targets, dtype=float)
        mats = np.asarray(materials, dtype=object)
        phs = np.asarray(phases, dtype=object)
        if not (len(pred) == len(targ) == len(mats) == len(phs)):
            raise ValueError("predictions, targets, materials and phases differ in length")
        rows = []
        for mat in sorted(set(mats.tolist())):
            for ph in PHASES:
                sel = mats == mat
                if ph != "all":
                    sel &= phs == ph
                if sel.any():
                    rows.append(dict(material_id=mat, phase=ph, **error_metrics(pred[sel], targ[sel])))
        return cls(rows, skipped)

    def get(self, material_id, phase="all"):
        for r in self.rows:
            if r["material_id"] == material_id and r["phase"] == phase:
                return r
        raise KeyError((material_id, phase))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([r["material_id"], r["phase"], r["n"]] + [f"{r[k]:.6f}" for k in COLUMNS[3:]])
        return buf.getvalue()

    def to_table(self) -> str:
        head = f"{'material':<10} {'phase':<9} {'n':>6} {'MAE':>9} {'SD|e|':>9} {'MSE':>9} {'RMSE':>9} {'SD e^2':>9}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(
                f"{r['material_id']:<10} {r['phase']:<9} {r['n']:>6d} {r['mae']:>9.4f} "
                f"{r['abs_err_sd']:>9.4f} {r['mse']:>9.4f} {r['rmse']:>9.4f} {r['sq_err_sd']:>9.4f}"
            )
        if self.skipped:
            lines.append(f"({self.skipped} samples skipped: fewer than 2 reconstructed points)")
        return "\n".join(lines) + "\n"
