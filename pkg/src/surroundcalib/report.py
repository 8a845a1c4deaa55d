"""Calibration report and MAE table serialisation."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from . import __version__
from .camera import Pose
from .config import PLACEMENT_KEYS, RigConfig, pose_from_matrix_list, pose_to_matrix_list
from .errors import ConfigError
from .harness import AXES, pose_error
from .search import CAMERA_IDS, NEIGHBOURS, RigCalibrationResult

REPORT_VERSION = 1


def _pose_entry(pose: Pose) -> dict:
    placement = pose.placement()
    return {"placement": {k: placement[k] for k in PLACEMENT_KEYS}, "matrix": pose_to_matrix_list(pose)}


def build_report(
    config: RigConfig,
    result: RigCalibrationResult,
    trace_paths: dict[str, str],
    ground_truth: dict[str, Pose] | None = None,
) -> dict:
    """Everything needed to audit and reproduce a run. Wall-clock time is
    deliberately left out so identical inputs give identical bytes."""
    initial = config.poses()
    cameras = {}
    for name in CAMERA_IDS:
        refined = result.poses[name]
        entry = {
            "status": "fixed" if name not in NEIGHBOURS else ("failed" if name in result.failures else "ok"),
            "initial_pose": _pose_entry(initial[name]),
            "refined_pose": _pose_entry(refined),
            "delta_vs_initial": pose_error(refined, initial[name]),
        }
        if name in result.failures:
            entry["error"] = result.failures[name]
        if name in result.traces:
            tr = result.traces[name]
            entry["initial_loss"] = tr.initial_loss
            entry["final_loss"] = tr.final_loss
            entry["trace"] = trace_paths.get(name)
        if ground_truth is not None:
            entry["delta_vs_gt"] = pose_error(refined, ground_truth[name])
            entry["initial_delta_vs_gt"] = pose_error(initial[name], ground_truth[name])
        cameras[name] = entry
    return {
        "version": REPORT_VERSION,
        "tool_version": __version__,
        "config_digest": config.digest(),
        "seed": config.seed,
        "batch_size": config.batch_size,
        "status": result.status,
        "cameras": cameras,
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def load_report_poses(path) -> dict[str, Pose]:
    path = Path(path)
    try:
        report = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"report not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    try:
        return {name: pose_from_matrix_list(c["refined_pose"]["matrix"]) for name, c in report["cameras"].items()}
    except KeyError as exc:
        raise ConfigError(f"report {path} lacks field {exc}") from None


def format_table(table: dict) -> str:
    header = ["camera", "dtx(m)", "dty(m)", "dtz(m)", "droll(deg)", "dpitch(deg)", "dyaw(deg)"]
    rows = [header]
    for name, err in table["cameras"].items():
        rows.append([name] + [f"{err[a]:+.4f}" for a in AXES])
    rows.append(["MAE"] + [f"{table['mae'][a]:.4f}" for a in AXES])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)


def write_csv(path, table: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["camera", *AXES])
        for name, err in table["cameras"].items():
            w.writerow([name] + [repr(float(err[a])) for a in AXES])
        w.writerow(["MAE"] + [repr(float(table["mae"][a])) for a in AXES])


def read_csv(path) -> dict:
    cams, mae = {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            values = {a: float(row[a]) for a in AXES}
            if row["camera"] == "MAE":
                mae = values
            else:
                cams[row["camera"]] = values
    return {"cameras": cams, "mae": mae}
