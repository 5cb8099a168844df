"""
Lagrangian floats drifting in the horizontal plane z = z0, and the
observation operator mapping a model trajectory to float positions.
"""
from dataclasses import dataclass, field

import numpy as np

from floatvar.utils.grid import TWO_PI
from floatvar.utils.snapshots import SnapshotException, read_csv, write_csv

OBS_HEADER = ("float_id", "time_index", "x", "y", "noise_sd")
FLOATS_HEADER = ("float_id", "x", "y")


class FloatsException(Exception):
    pass


def wrap_positions(pos):
    pos = np.mod(np.asarray(pos, dtype=float), TWO_PI)
    # mod of a tiny negative number rounds up to 2*pi
    pos[pos >= TWO_PI] = 0.0
    return pos


def wrap_residual(r):
    """Shortest periodic displacement in [-pi, pi], the tie going to +pi."""
    r = np.asarray(r, dtype=float)
    w = r - TWO_PI * np.floor((r + np.pi) / TWO_PI)
    return np.where(w <= -np.pi, w + TWO_PI, w)


@dataclass(eq=False)
class FloatSet:
    FloatsException = FloatsException

    positions: np.ndarray
    z0: float
    ids: np.ndarray = None

    def __post_init__(self):
        self.positions = wrap_positions(np.asarray(self.positions, dtype=float).reshape(-1, 2))
        if self.ids is None:
            self.ids = np.arange(len(self.positions))
        self.ids = np.asarray(self.ids, dtype=int)
        if len(self.ids) != len(self.positions):
            raise FloatsException(f"{len(self.ids)} ids for {len(self.positions)} floats")
        if len(np.unique(self.ids)) != len(self.ids):
            raise FloatsException("float ids must be unique")

    def __len__(self):
        return len(self.positions)

    def check_depth(self, grid):
        if not 0.0 < self.z0 < grid.a:
            raise FloatsException(f"z0={self.z0} must lie strictly inside (0, {grid.a})")

    def with_positions(self, positions):
        return FloatSet(positions, self.z0, self.ids.copy())

    def rows_for(self, float_ids):
        lookup = {fid: row for row, fid in enumerate(self.ids)}
        try:
            return np.array([lookup[int(fid)] for fid in float_ids], dtype=int)
        except KeyError as exc:
            raise FloatsException(f"observation references unknown float id {exc.args[0]}")

    def write_csv(self, path):
        rows = ((fid, x, y) for fid, (x, y) in zip(self.ids, self.positions))
        write_csv(path, FLOATS_HEADER, rows)

    @classmethod
    def read_csv(cls, path, z0):
        try:
            rows = read_csv(path, FLOATS_HEADER)
        except SnapshotException as exc:
            raise FloatsException(str(exc))
        ids = [int(r[0]) for r in rows]
        positions = [[float(r[1]), float(r[2])] for r in rows]
        return cls(np.array(positions).reshape(-1, 2), z0, np.array(ids, dtype=int))


@dataclass
class Stencil:
    """Cell indices and fractional offsets of a batch of positions at depth z0."""
    i0: np.ndarray
    i1: np.ndarray
    j0: np.ndarray
    j1: np.ndarray
    tx: np.ndarray
    ty: np.ndarray
    k0: int
    tz: float


def locate(pos, z0, grid):
    pos = np.asarray(pos, dtype=float).reshape(-1, 2)
    fx = pos[:, 0] / grid.dx
    fy = pos[:, 1] / grid.dy
    cx = np.floor(fx)
    cy = np.floor(fy)
    i0 = cx.astype(int) % grid.nx
    j0 = cy.astype(int) % grid.ny
    fz = z0 / grid.dz
    k0 = min(int(np.floor(fz)), grid.nz - 2)
    return Stencil(
        i0=i0, i1=(i0 + 1) % grid.nx,
        j0=j0, j1=(j0 + 1) % grid.ny,
        tx=fx - cx, ty=fy - cy,
        k0=k0, tz=fz - k0,
    )


def _at_depth(f, st):
    return (1.0 - st.tz) * f[:, :, st.k0] + st.tz * f[:, :, st.k0 + 1]


def _bilinear(f2, st):
    return (
        (1.0 - st.tx) * (1.0 - st.ty) * f2[st.i0, st.j0]
        + st.tx * (1.0 - st.ty) * f2[st.i1, st.j0]
        + (1.0 - st.tx) * st.ty * f2[st.i0, st.j1]
        + st.tx * st.ty * f2[st.i1, st.j1]
    )


def _bilinear_gradient(f2, st, grid):
    f00, f10 = f2[st.i0, st.j0], f2[st.i1, st.j0]
    f01, f11 = f2[st.i0, st.j1], f2[st.i1, st.j1]
    ddx = ((1.0 - st.ty) * (f10 - f00) + st.ty * (f11 - f01)) / grid.dx
    ddy = ((1.0 - st.tx) * (f01 - f00) + st.tx * (f11 - f10)) / grid.dy
    return ddx, ddy


def interp_uv(u, v, pos, z0, grid):
    """
    Velocity (u, v) at float positions: bilinear with periodic wrap in
    (x, y), linear in z. ``pos`` is one (x, y) pair or an (M, 2) array.
    """
    single = np.ndim(pos) == 1
    st = locate(pos, z0, grid)
    out = np.stack([_bilinear(_at_depth(u, st), st), _bilinear(_at_depth(v, st), st)], axis=1)
    return out[0] if single else out


def interp_uv_jacobian(u, v, pos, z0, grid):
    """(M, 2, 2) array J with J[m, c, d] = d U_c / d x_d at float m."""
    st = locate(pos, z0, grid)
    J = np.empty((len(st.i0), 2, 2))
    for c, f in enumerate((u, v)):
        ddx, ddy = _bilinear_gradient(_at_depth(f, st), st, grid)
        J[:, c, 0] = ddx
        J[:, c, 1] = ddy
    return J


def interp_uv_tangent(du, dv, pos, z0, grid, jacobian=None, dpos=None):
    """Tangent of interp_uv w.r.t. the fields and, when given, the positions."""
    out = interp_uv(du, dv, pos, z0, grid).reshape(-1, 2)
    if dpos is not None:
        out = out + np.einsum("mcd,md->mc", jacobian, dpos)
    return out


def interp_uv_transpose(lam, pos, z0, grid, ids=None):
    """
    Transpose of the field part of interp_uv: scatters per-float duals
    ``lam`` (M, 2) onto (u, v) grid fields. Accumulation follows float id
    order.
    """
    lam = np.asarray(lam, dtype=float).reshape(-1, 2)
    st = locate(pos, z0, grid)
    order = np.argsort(ids, kind="stable") if ids is not None else np.arange(len(lam))
    corners = (
        (st.i0, st.j0, (1.0 - st.tx) * (1.0 - st.ty)),
        (st.i1, st.j0, st.tx * (1.0 - st.ty)),
        (st.i0, st.j1, (1.0 - st.tx) * st.ty),
        (st.i1, st.j1, st.tx * st.ty),
    )
    fields = []
    for c in range(2):
        plane = np.zeros((grid.nx, grid.ny))
        for i, j, wgt in corners:
            np.add.at(plane, (i[order], j[order]), wgt[order] * lam[order, c])
        f = np.zeros(grid.shape)
        f[:, :, st.k0] += (1.0 - st.tz) * plane
        f[:, :, st.k0 + 1] += st.tz * plane
        fields.append(f)
    return fields[0], fields[1]


def advect_positions(pos, z0, X_start, X_end, dt):
    """Heun step of d(xi)/dt = U(t, xi, z0); returns (new positions, k1, midpoint guess)."""
    grid = X_start.grid
    k1 = interp_uv(X_start.u, X_start.v, pos, z0, grid)
    guess = pos + dt * k1
    k2 = interp_uv(X_end.u, X_end.v, guess, z0, grid)
    return wrap_positions(pos + 0.5 * dt * (k1 + k2)), k1, guess


def advect_floats(fs, X_start, X_end, dt):
    positions, _, _ = advect_positions(fs.positions, fs.z0, X_start, X_end, dt)
    return fs.with_positions(positions)


def float_track(states, fs0, dt, nsteps=None):
    """Positions (M, 2) at every step of ``states``, starting with fs0's."""
    nsteps = len(states) - 1 if nsteps is None else nsteps
    track = [fs0.positions.copy()]
    pos = fs0.positions
    for n in range(nsteps):
        pos, _, _ = advect_positions(pos, fs0.z0, states[n], states[n + 1], dt)
        track.append(pos)
    return track


def observe(trajectory, fs0, obs_times):
    """Predicted positions {time index: (M, 2)} for every requested time."""
    obs_times = [int(t) for t in obs_times]
    if not obs_times:
        return {}
    if min(obs_times) < 0 or max(obs_times) > trajectory.nsteps:
        raise FloatsException(
            f"observation times {min(obs_times)}..{max(obs_times)} outside trajectory 0..{trajectory.nsteps}"
        )
    track = float_track(trajectory.states, fs0, trajectory.dt, max(obs_times))
    return {t: track[t].copy() for t in obs_times}


def obs_time_indices(nsteps, count):
    """``count`` evenly spaced time indices ending at the window end."""
    if count < 1:
        raise FloatsException(f"need at least one observation time, got {count}")
    return sorted({int(round((i + 1) * nsteps / count)) for i in range(count)})


@dataclass(eq=False)
class ObsSet:
    FloatsException = FloatsException

    float_ids: np.ndarray
    time_indices: np.ndarray
    positions: np.ndarray
    noise_sd: np.ndarray
    deployment: FloatSet = None
    _rows: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.float_ids = np.asarray(self.float_ids, dtype=int).reshape(-1)
        self.time_indices = np.asarray(self.time_indices, dtype=int).reshape(-1)
        self.positions = wrap_positions(np.asarray(self.positions, dtype=float).reshape(-1, 2))
        self.noise_sd = np.asarray(self.noise_sd, dtype=float).reshape(-1)
        count = len(self.float_ids)
        if not (len(self.time_indices) == len(self.positions) == len(self.noise_sd) == count):
            raise FloatsException("observation record columns have different lengths")
        if count and self.time_indices.min() < 0:
            raise FloatsException("observation time indices must be nonnegative")

    @classmethod
    def empty(cls, deployment=None):
        return cls(np.zeros(0), np.zeros(0), np.zeros((0, 2)), np.zeros(0), deployment)

    def __len__(self):
        return len(self.float_ids)

    def times(self):
        return sorted(set(int(t) for t in self.time_indices))

    def check_window(self, nsteps):
        if len(self) and self.time_indices.max() > nsteps:
            raise FloatsException(
                f"observation time {self.time_indices.max()} outside window of {nsteps} steps"
            )

    def records_at(self, t, fs):
        """(rows into fs, observed positions) for time index t."""
        if self._rows is None:
            self._rows = {}
        key = (t, fs.ids.tobytes())
        if key not in self._rows:
            sel = np.nonzero(self.time_indices == t)[0]
            self._rows[key] = (fs.rows_for(self.float_ids[sel]), self.positions[sel])
        return self._rows[key]

    def residuals(self, track, fs):
        """Yields (t, rows, wrapped residual) for every observation time."""
        for t in self.times():
            rows, observed = self.records_at(t, fs)
            yield t, rows, wrap_residual(track[t][rows] - observed)

    def write_csv(self, path):
        rows = (
            (fid, t, x, y, sd)
            for fid, t, (x, y), sd in zip(self.float_ids, self.time_indices, self.positions, self.noise_sd)
        )
        write_csv(path, OBS_HEADER, rows)

    @classmethod
    def read_csv(cls, path, deployment=None):
        try:
            rows = read_csv(path, OBS_HEADER)
        except SnapshotException as exc:
            raise FloatsException(str(exc))
        try:
            return cls(
                [int(r[0]) for r in rows],
                [int(r[1]) for r in rows],
                np.array([[float(r[2]), float(r[3])] for r in rows]).reshape(-1, 2),
                [float(r[4]) for r in rows],
                deployment,
            )
        except (ValueError, IndexError) as exc:
            raise FloatsException(f"{path}: malformed observation record ({exc})")
