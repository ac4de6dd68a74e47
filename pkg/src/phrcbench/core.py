"""Shared domain types, observation/future window slicing, and corpus file I/O.

Corpus file layout (decimal text, ``.`` radix, ``\\n`` line endings)::

    #MANIFEST {"version": 1, "dt": ..., "branch": "Robot", "count": N,
               "dim": 3, "seed": ..., "labels": [...]}
    traj,t,x,y,z,vx,vy,vz,fx,fy,fz
    0,0.0,0.1,...

Force columns are left empty on Robot-branch corpora.  Floats are written
with ``repr`` (shortest round-trip form), so write -> read -> write is
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

TIME_TOL = 1e-9

_HEADER_ROW = "traj,t,x,y,z,vx,vy,vz,fx,fy,fz"
_MANIFEST_TAG = "#MANIFEST "
CORPUS_VERSION = 1


class Branch(str, Enum):
    ROBOT = "Robot"
    HUMAN = "Human"


class Label(str, Enum):
    FREE = "ObstacleFree"
    AVOID = "ObstacleAvoid"


class CorpusFormatError(ValueError):
    """Malformed corpus file; ``line`` is the 1-based offending line number."""

    def __init__(self, msg: str, line: Optional[int] = None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


def _vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateSample:
    """Timestamped end-effector state; force is present on Human-branch data only."""

    t: float
    pos: np.ndarray
    vel: np.ndarray
    force: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.isfinite(self.t):
            raise ValueError("sample time must be finite")
        object.__setattr__(self, "pos", _vec3(self.pos, "pos"))
        object.__setattr__(self, "vel", _vec3(self.vel, "vel"))
        if self.force is not None:
            object.__setattr__(self, "force", _vec3(self.force, "force"))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled end-effector trajectory for one branch."""

    branch: Branch
    dt: float
    samples: tuple
    label: Label

    def __post_init__(self):
        object.__setattr__(self, "branch", Branch(self.branch))
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.samples) < 2:
            raise ValueError("trajectory needs at least 2 samples")
        t = np.array([s.t for s in self.samples])
        if np.max(np.abs(np.diff(t) - self.dt)) > TIME_TOL:
            raise ValueError("sample timestamps not uniform at dt")
        has_force = [s.force is not None for s in self.samples]
        if self.branch is Branch.ROBOT and any(has_force):
            raise ValueError("Robot-branch trajectory must not carry force")
        if self.branch is Branch.HUMAN and not all(has_force):
            raise ValueError("Human-branch trajectory must carry force on every sample")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True, eq=False)
class WindowPair:
    """Past observation window ending at T_now plus the future target window."""

    past: tuple
    future: tuple

    def __post_init__(self):
        object.__setattr__(self, "past", tuple(self.past))
        object.__setattr__(self, "future", tuple(self.future))
        if len(self.past) < 2:
            raise ValueError("past window needs at least 2 samples")
        if len(self.future) < 1:
            raise ValueError("future window needs at least 1 sample")
        t = np.array([s.t for s in self.past + self.future])
        steps = np.diff(t)
        if np.max(np.abs(steps - steps[0])) > TIME_TOL:
            raise ValueError("window samples not contiguous at a uniform dt")


@dataclass(frozen=True)
class CorpusManifest:
    version: int
    dt: float
    branch: Branch
    count: int
    dim: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "branch", Branch(self.branch))
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.dim != 3:
            raise ValueError("only 3-dimensional corpora are supported")


def slice_windows(traj: Trajectory, l_obs: int, l_fut: int, stride: int = 1) -> list:
    """Every (past, future) window pair of a trajectory.

    The past window has ``l_obs`` samples and ends at index ``i`` (the current
    time); the future window is the ``l_fut`` samples strictly after ``i``.
    ``i`` starts at ``l_obs - 1`` and advances by ``stride``.  A trajectory too
    short to fit one window yields an empty list.
    """
    if l_obs < 2 or l_fut < 1:
        raise ValueError("need l_obs >= 2 and l_fut >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    samples = traj.samples
    out = []
    for i in range(l_obs - 1, len(samples) - l_fut, stride):
        out.append(WindowPair(samples[i - l_obs + 1 : i + 1], samples[i + 1 : i + 1 + l_fut]))
    return out


def sample_matrix(samples: Sequence[StateSample], with_force: bool) -> np.ndarray:
    """Stack samples into an (L, 6) or (L, 9) float matrix [pos, vel(, force)]."""
    rows = []
    for s in samples:
        if with_force:
            if s.force is None:
                raise ValueError("sample lacks force but with_force was requested")
            rows.append(np.concatenate([s.pos, s.vel, s.force]))
        else:
            rows.append(np.concatenate([s.pos, s.vel]))
    return np.asarray(rows, dtype=np.float64)


def window_arrays(window: WindowPair, branch: Branch):
    """(X, Y) training arrays for one window: X is (L_obs, 6|9), Y is (L_fut, 6)."""
    with_force = Branch(branch) is Branch.HUMAN
    return (
        sample_matrix(window.past, with_force),
        sample_matrix(window.future, with_force=False),
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def write_corpus(path, manifest: CorpusManifest, trajs: Sequence[Trajectory]) -> None:
    """Write a corpus file; inverse of :func:`read_corpus`."""
    if manifest.count != len(trajs):
        raise ValueError(f"manifest.count={manifest.count} but {len(trajs)} trajectories given")
    for k, traj in enumerate(trajs):
        if traj.branch is not manifest.branch:
            raise ValueError(f"trajectory {k} branch {traj.branch} != manifest branch {manifest.branch}")
        if abs(traj.dt - manifest.dt) > TIME_TOL:
            raise ValueError(f"trajectory {k} dt {traj.dt} != manifest dt {manifest.dt}")
    head = {
        "version": manifest.version,
        "dt": manifest.dt,
        "branch": manifest.branch.value,
        "count": manifest.count,
        "dim": manifest.dim,
        "seed": manifest.seed,
        "labels": [t.label.value for t in trajs],
    }
    lines = [_MANIFEST_TAG + json.dumps(head), _HEADER_ROW]
    for k, traj in enumerate(trajs):
        for s in traj.samples:
            cells = [str(k), _fmt(s.t)]
            cells += [_fmt(v) for v in s.pos]
            cells += [_fmt(v) for v in s.vel]
            if s.force is None:
                cells += ["", "", ""]
            else:
                cells += [_fmt(v) for v in s.force]
            lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def read_corpus(path):
    """Read a corpus file; returns ``(manifest, trajectories)``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CorpusFormatError(f"cannot read corpus {path}: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(_MANIFEST_TAG):
        raise CorpusFormatError("missing #MANIFEST header", line=1)
    try:
        head = json.loads(lines[0][len(_MANIFEST_TAG):])
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"bad manifest JSON: {exc}", line=1) from exc
    if head.get("version") != CORPUS_VERSION:
        raise CorpusFormatError(f"unsupported corpus version {head.get('version')}", line=1)
    manifest = CorpusManifest(
        version=head["version"],
        dt=float(head["dt"]),
        branch=Branch(head["branch"]),
        count=int(head["count"]),
        dim=int(head["dim"]),
        seed=int(head["seed"]),
    )
    labels = [Label(v) for v in head.get("labels", [])]
    if len(labels) != manifest.count:
        raise CorpusFormatError("labels array length != count", line=1)
    if len(lines) < 2 or lines[1] != _HEADER_ROW:
        raise CorpusFormatError("missing or wrong CSV header row", line=2)

    with_force = manifest.branch is Branch.HUMAN
    per_traj: list = [[] for _ in range(manifest.count)]
    for lineno, raw in enumerate(lines[2:], start=3):
        cells = raw.split(",")
        if len(cells) != 11:
            raise CorpusFormatError(f"expected 11 cells, got {len(cells)}", line=lineno)
        try:
            idx = int(cells[0])
            nums = [float(c) for c in cells[1:8]]
        except ValueError as exc:
            raise CorpusFormatError(f"non-numeric cell: {exc}", line=lineno) from exc
        if not 0 <= idx < manifest.count:
            raise CorpusFormatError(f"trajectory index {idx} out of range", line=lineno)
        force_cells = cells[8:11]
        if all(c == "" for c in force_cells):
            force = None
        elif all(c != "" for c in force_cells):
            try:
                force = [float(c) for c in force_cells]
            except ValueError as exc:
                raise CorpusFormatError(f"non-numeric force cell: {exc}", line=lineno) from exc
        else:
            raise CorpusFormatError("force columns must be all present or all empty", line=lineno)
        if with_force and force is None:
            raise CorpusFormatError("Human-branch corpus row lacks force", line=lineno)
        if not with_force and force is not None:
            raise CorpusFormatError("Robot-branch corpus row carries force", line=lineno)
        per_traj[idx].append(StateSample(t=nums[0], pos=nums[1:4], vel=nums[4:7], force=force))

    trajs = []
    for k, samples in enumerate(per_traj):
        if not samples:
            raise CorpusFormatError(f"trajectory {k} has no rows")
        trajs.append(Trajectory(branch=manifest.branch, dt=manifest.dt, samples=samples, label=labels[k]))
    return manifest, trajs
