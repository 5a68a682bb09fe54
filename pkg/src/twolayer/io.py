"""JSON records for solutions and branches.

Floats are written with ``repr`` (shortest round-trip form), so reading a
record back reproduces every coefficient bit for bit.  Branch files are JSON
Lines: a header line followed by one line per point, appended as points are
accepted.  A torn final line from an interrupted run is ignored on read.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .params import PhysParams
from .state import SolutionVector

SOLUTION_FORMAT = "twolayer.solution/1"
BRANCH_FORMAT = "twolayer.branch/1"


def params_to_dict(params: PhysParams) -> dict[str, float]:
    return {"k": params.k, "H": params.H, "omega0": params.omega0}


def params_from_dict(d: dict[str, Any]) -> PhysParams:
    return PhysParams(float(d["k"]), float(d["H"]), float(d["omega0"]))


def solution_to_dict(sol: SolutionVector) -> dict[str, Any]:
    return {
        "N": sol.N,
        "u_hat": sol.u_hat.tolist(),
        "v_hat": sol.v_hat.tolist(),
        "X_hat": sol.X_hat.tolist(),
        "Y_hat": sol.Y_hat.tolist(),
        "L": float(sol.L),
    }


def solution_from_dict(d: dict[str, Any]) -> SolutionVector:
    return SolutionVector(
        int(d["N"]),
        np.array(d["u_hat"], dtype=np.float64),
        np.array(d["v_hat"], dtype=np.float64),
        np.array(d["X_hat"], dtype=np.float64),
        np.array(d["Y_hat"], dtype=np.float64),
        float(d["L"]),
    )


def _clean(obj: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj: Any, **kw) -> str:
    return json.dumps(_clean(obj), allow_nan=False, **kw)


def write_solution(path: str | Path, sol: SolutionVector, params: PhysParams,
                   meta: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    record = {
        "format": SOLUTION_FORMAT,
        "params": params_to_dict(params),
        "solution": solution_to_dict(sol),
        "meta": meta or {},
    }
    path.write_text(dumps(record, indent=1) + "\n")
    return path


def read_solution(path: str | Path) -> tuple[SolutionVector, PhysParams, dict[str, Any]]:
    record = json.loads(Path(path).read_text())
    if record.get("format") != SOLUTION_FORMAT:
        raise ValueError(f"{path}: not a solution record")
    return (solution_from_dict(record["solution"]), params_from_dict(record["params"]),
            record.get("meta", {}))


class BranchFile:
    """Append-only JSON Lines store for one branch."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)

    def exists(self) -> bool:
        return self.path.exists() and self.path.stat().st_size > 0

    def write_header(self, params: PhysParams, policy: dict[str, Any]) -> None:
        header = {"format": BRANCH_FORMAT, "params": params_to_dict(params), "policy": policy}
        self.path.write_text(dumps(header) + "\n")

    def append(self, record: dict[str, Any]) -> None:
        line = dumps(record) + "\n"
        with self.path.open("a") as fh:
            fh.write(line)
            fh.flush()

    def records(self) -> Iterator[dict[str, Any]]:
        lines = self.path.read_text().splitlines()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    return  # torn write at the end of an interrupted run
                raise ValueError(f"{self.path}:{i + 1}: corrupt branch record") from None

    def repair(self) -> bool:
        """Drop a torn final line so later appends start on a clean line."""
        text = self.path.read_text()
        lines = text.splitlines(keepends=True)
        if not lines:
            return False
        try:
            json.loads(lines[-1])
            if lines[-1].endswith("\n"):
                return False
            self.path.write_text(text + "\n")
        except json.JSONDecodeError:
            self.path.write_text("".join(lines[:-1]))
        return True

    def read(self) -> tuple[dict[str, Any], list[dict[str, Any]]]:
        recs = list(self.records())
        if not recs or recs[0].get("format") != BRANCH_FORMAT:
            raise ValueError(f"{self.path}: not a branch file")
        return recs[0], recs[1:]
