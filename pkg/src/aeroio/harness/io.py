"""CSV formats for sensor logs and estimated trajectories.

Sequence files start with ``#key=value`` metadata lines followed by a header
row and one row per frame. Columns are looked up by header name, so extra or
reordered columns are fine. Floats are written with 17 significant digits,
which round-trips float64 exactly.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .. import geometry
from .._fsutil import atomic_write
from ..exceptions import MonotonicityViolation, ParseError
from ..sensor_sim import GroundTruth, SequenceLog

RPM_TO_RAD_S = 2.0 * math.pi / 60.0

SENSOR_COLUMNS = ["t", "gx", "gy", "gz", "ax", "ay", "az", "w1", "w2", "w3", "w4"]
TRUTH_POS = ["gt_px", "gt_py", "gt_pz"]
TRUTH_QUAT = ["gt_qw", "gt_qx", "gt_qy", "gt_qz"]
TRUTH_ROT = [f"gt_r{i}{j}" for i in range(3) for j in range(3)]
TRUTH_VEL = ["gt_vx", "gt_vy", "gt_vz"]
TRUTH_RATE = ["gt_wx", "gt_wy", "gt_wz"]
TRUTH_ACC = ["gt_awx", "gt_awy", "gt_awz"]
BIAS_G = ["bgx", "bgy", "bgz"]
BIAS_A = ["bax", "bay", "baz"]

TRAJ_STD = [f"std_{blk}{ax}" for blk in ("th", "v", "p", "ba", "bg") for ax in "xyz"]
TRAJECTORY_COLUMNS = ["t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz"] + TRAJ_STD

# Header names seen in released real-flight logs, mapped onto the synthetic names.
COLUMN_ALIASES = {
    "timestamp": "t", "time": "t",
    "gyro_x": "gx", "gyro_y": "gy", "gyro_z": "gz",
    "acc_x": "ax", "acc_y": "ay", "acc_z": "az",
    "motor1": "w1", "motor2": "w2", "motor3": "w3", "motor4": "w4",
    "rotor1": "w1", "rotor2": "w2", "rotor3": "w3", "rotor4": "w4",
    "pos_x": "gt_px", "pos_y": "gt_py", "pos_z": "gt_pz",
    "quat_w": "gt_qw", "quat_x": "gt_qx", "quat_y": "gt_qy", "quat_z": "gt_qz",
    "vel_x": "gt_vx", "vel_y": "gt_vy", "vel_z": "gt_vz",
}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_table(metadata: dict, header: list, columns: list) -> str:
    buf = io.StringIO()
    for key, value in metadata.items():
        buf.write(f"#{key}={value}\n")
    buf.write(",".join(header) + "\n")
    data = np.column_stack(columns)
    for row in data:
        buf.write(",".join(_fmt(x) for x in row) + "\n")
    return buf.getvalue()


@dataclass
class _Table:
    metadata: dict
    columns: dict  # name -> float array
    lines: np.ndarray  # 1-based file line of each data row


def _read_table(path, aliases: dict | None = None) -> _Table:
    aliases = {**COLUMN_ALIASES, **(aliases or {})}
    metadata, header, rows, lines = {}, None, [], []
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition("=")
                if sep:
                    metadata[key.strip()] = value.strip()
                continue
            fields = next(csv.reader([line]))
            if header is None:
                header = [aliases.get(name.strip(), name.strip()) for name in fields]
                if len(set(header)) != len(header):
                    raise ParseError(f"{path}:{lineno}: duplicate column names")
                continue
            if len(fields) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, found {len(fields)}")
            try:
                rows.append([float(x) for x in fields])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            lines.append(lineno)
    if header is None:
        raise ParseError(f"{path}: no header row")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    data = np.array(rows)
    return _Table(metadata, {name: data[:, i] for i, name in enumerate(header)}, np.array(lines))


def _take(table: _Table, names, path, required=True):
    missing = [n for n in names if n not in table.columns]
    if missing:
        if required:
            raise ParseError(f"{path}: missing columns {missing}")
        return None
    return np.column_stack([table.columns[n] for n in names])


def _check_time(t, lines, path):
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        k = int(bad[0]) + 1
        raise MonotonicityViolation(
            f"{path}:{lines[k]}: timestamp {t[k]!r} does not increase (previous {t[k - 1]!r})")


# -- sequences --------------------------------------------------------------


def save_sequence(log: SequenceLog, path) -> None:
    """Write ``log`` (sensors, ground truth if present, biases if present)."""
    header = list(SENSOR_COLUMNS)
    cols = [log.t, log.gyro, log.accel, log.rotor]
    if log.truth is not None:
        tr = log.truth
        quats = np.array([geometry.to_quaternion(R) for R in tr.R])
        header += TRUTH_POS + TRUTH_QUAT + TRUTH_ROT + TRUTH_VEL + TRUTH_RATE + TRUTH_ACC
        cols += [tr.p, quats, tr.R.reshape(-1, 9), tr.v, tr.omega_body, tr.a_world]
        if tr.yaw is not None:
            header.append("gt_yaw")
            cols.append(tr.yaw)
    if log.bias_g is not None:
        header += BIAS_G
        cols.append(log.bias_g)
    if log.bias_a is not None:
        header += BIAS_A
        cols.append(log.bias_a)
    metadata = dict(log.metadata)
    metadata.setdefault("unit", "rad/s")
    atomic_write(path, _write_table(metadata, header, cols))


def load_sequence(path, aliases: dict | None = None) -> SequenceLog:
    """Read a sequence CSV.

    Rotor speeds are converted from RPM when the header declares
    ``unit=rpm``. Ground truth is attached when position columns exist;
    attitude comes from the rotation-matrix columns if present, otherwise from
    the quaternion. Missing truth velocity, body rate or acceleration are
    reconstructed by finite differences.

    Raises
    ------
    ParseError
        Malformed rows or missing columns, with the offending line number.
    MonotonicityViolation
        Non-increasing timestamps, naming the line.
    """
    table = _read_table(path, aliases)
    t = table.columns.get("t")
    if t is None:
        raise ParseError(f"{path}: missing column 't'")
    _check_time(t, table.lines, path)
    gyro = _take(table, SENSOR_COLUMNS[1:4], path)
    accel = _take(table, SENSOR_COLUMNS[4:7], path)
    rotor = _take(table, SENSOR_COLUMNS[7:11], path)
    metadata = dict(table.metadata)
    unit = metadata.get("unit", "rad/s").lower()
    if unit == "rpm":
        rotor = rotor * RPM_TO_RAD_S
        metadata["unit"] = "rad/s"
    elif unit not in ("rad/s", "rad_s"):
        raise ParseError(f"{path}: unknown rotor unit {unit!r}")

    truth = None
    pos = _take(table, TRUTH_POS, path, required=False)
    if pos is not None:
        R = _take(table, TRUTH_ROT, path, required=False)
        if R is not None:
            R = R.reshape(-1, 3, 3)
        else:
            q = _take(table, TRUTH_QUAT, path)
            R = np.array([geometry.from_quaternion(row) for row in q])
        vel = _take(table, TRUTH_VEL, path, required=False)
        if vel is None:
            vel = np.gradient(pos, t, axis=0)
        rate = _take(table, TRUTH_RATE, path, required=False)
        if rate is None:
            rate = _body_rates(R, t)
        acc = _take(table, TRUTH_ACC, path, required=False)
        if acc is None:
            acc = np.gradient(vel, t, axis=0)
        yaw = table.columns.get("gt_yaw")
        truth = GroundTruth(t.copy(), R, pos, vel, rate, acc, yaw)
    return SequenceLog(t, gyro, accel, rotor, truth,
                       _take(table, BIAS_G, path, required=False),
                       _take(table, BIAS_A, path, required=False), metadata)


def _body_rates(R, t):
    if len(t) < 2:
        return np.zeros((len(t), 3))
    rel = np.einsum("nji,njk->nik", R[:-1], R[1:])
    w = geometry.log_map_many(rel) / np.diff(t)[:, None]
    return np.vstack([w, w[-1:]])


# -- trajectories -----------------------------------------------------------


@dataclass
class Track:
    """Timestamped positions and velocities (world frame), optionally attitude and std-devs."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    R: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.v = np.asarray(self.v, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.p) == len(self.v)):
            raise ValueError("t, p and v must have the same length")

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_sequence(cls, seq: SequenceLog) -> "Track":
        if seq.truth is None:
            raise ValueError("sequence has no ground truth")
        return cls(seq.truth.t, seq.truth.p, seq.truth.v, seq.truth.R)

    @classmethod
    def from_filter(cls, result) -> "Track":
        return cls(result.t, result.p, result.v, result.R, result.std)


def save_trajectory(track: Track, path, metadata: dict | None = None) -> None:
    """Write ``t, p, v, quaternion`` and the 15 marginal std-devs (NaN if unknown)."""
    n = len(track)
    R = track.R if track.R is not None else np.broadcast_to(np.eye(3), (n, 3, 3))
    quats = np.array([geometry.to_quaternion(r) for r in R])
    std = track.std if track.std is not None else np.full((n, 15), np.nan)
    atomic_write(path, _write_table(metadata or {}, TRAJECTORY_COLUMNS,
                                          [track.t, track.p, track.v, quats, std]))


def load_trajectory(path) -> Track:
    """Read a trajectory CSV, or the ground truth of a sequence CSV."""
    table = _read_table(path)
    if "px" not in table.columns and "gt_px" in table.columns:
        return Track.from_sequence(load_sequence(path))
    t = table.columns.get("t")
    if t is None:
        raise ParseError(f"{path}: missing column 't'")
    _check_time(t, table.lines, path)
    p = _take(table, TRAJECTORY_COLUMNS[1:4], path)
    v = _take(table, TRAJECTORY_COLUMNS[4:7], path)
    q = _take(table, TRAJECTORY_COLUMNS[7:11], path, required=False)
    R = None if q is None else np.array([geometry.from_quaternion(row) for row in q])
    std = _take(table, TRAJ_STD, path, required=False)
    return Track(t, p, v, R, std)
