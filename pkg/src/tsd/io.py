"""Artifact serialization: factorization CSVs, model metadata, atomic writes."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from tsd.core import ChemDataset, Factorization, FitReport, Hyperparams, PreprocessSpec

FLOAT_FORMAT = "%.17g"
MODEL_FILES = ("D.csv", "A.csv", "W.csv", "model.json", "report.json")


def atomic_write(path, data: str | bytes) -> Path:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, frame: pd.DataFrame) -> Path:
    return atomic_write(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> Path:
    return atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def source_names(k: int) -> list[str]:
    return [f"source_{j}" for j in range(k)]


def factorization_frames(f: Factorization, analyte_names, sample_ids) -> dict[str, pd.DataFrame]:
    src = source_names(f.k)
    D = pd.DataFrame(f.D, columns=list(analyte_names))
    D.insert(0, "source", src)
    A = pd.DataFrame(f.A, columns=src)
    A.insert(0, "sample_id", list(sample_ids))
    W = pd.DataFrame({"source": src, "weight": f.W})
    return {"D.csv": D, "A.csv": A, "W.csv": W}


def save_model(
    outdir,
    f: Factorization,
    ds: ChemDataset,
    h: Hyperparams,
    report: FitReport,
    extra: dict | None = None,
) -> list[Path]:
    """Write D, A (per-sample source contributions), W, model metadata and the
    fit report. Timing is left out of the report so reruns are byte-identical."""
    outdir = Path(outdir)
    paths = [write_csv(outdir / name, frame) for name, frame in
             factorization_frames(f, ds.analyte_names, ds.sample_ids).items()]
    meta = {
        "k_sources": f.k,
        "hyperparams": h.to_dict(),
        "seed": h.seed,
        "converged": report.converged,
        "stop_reason": report.stop_reason,
        "iterations": report.iterations,
        "analytes": list(ds.analyte_names),
        "target": ds.target_name,
        "preprocess": ds.preprocess.to_dict() if ds.preprocess is not None else None,
        **(extra or {}),
    }
    paths.append(write_json(outdir / "model.json", meta))
    paths.append(write_json(outdir / "report.json", report.to_dict(include_timing=False)))
    return paths


def load_model(model_dir):
    """Read a saved model back as ``(Factorization, Hyperparams, PreprocessSpec | None, meta)``."""
    model_dir = Path(model_dir)
    missing = [n for n in ("D.csv", "A.csv", "W.csv", "model.json") if not (model_dir / n).exists()]
    if missing:
        raise FileNotFoundError(f"model directory {model_dir} lacks {missing}")
    meta = json.loads((model_dir / "model.json").read_text(encoding="utf-8"))
    D = pd.read_csv(model_dir / "D.csv").drop(columns="source")
    if list(D.columns) != list(meta["analytes"]):
        raise ValueError("D.csv columns do not match the analytes recorded in model.json")
    A = pd.read_csv(model_dir / "A.csv", dtype={"sample_id": str}).drop(columns="sample_id")
    W = pd.read_csv(model_dir / "W.csv")["weight"].to_numpy()
    f = Factorization(D=D.to_numpy(float), A=A.to_numpy(float), W=W)
    h = Hyperparams.from_dict(meta["hyperparams"])
    spec = PreprocessSpec.from_dict(meta["preprocess"]) if meta.get("preprocess") else None
    return f, h, spec, meta
