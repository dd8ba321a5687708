"""Space-charge-free macroparticle tracking through an axisymmetric fieldmap.

Momenta are carried in units of ``m_e c``. Each particle starts at rest on
the cathode plane once the simulation clock passes its emission time, and
is pushed with fixed-step RK4 until it crosses the exit plane or leaves
the valid part of the map.
"""
import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .iga.fields import FieldmapData, read_fieldmap

E_CHARGE = 1.602176634e-19
M_E = 9.1093837015e-31
C_LIGHT = kernels._kernels_py.C_LIGHT
MC2_EV = M_E * C_LIGHT ** 2 / E_CHARGE
# dp/dt in units of m_e c per second for one volt per metre, electron charge
Q_OVER_MC = -E_CHARGE / (M_E * C_LIGHT)

STAT_NAMES = ("x_rms", "y_rms", "z_rms", "eps_x", "eps_y", "eps_z")


class TrackingError(ValueError):
    pass


@dataclass
class BunchSource:
    rx_rms: float = 0.41e-3
    ry_rms: float = 0.72e-3
    sigma_t: float = 5e-12
    charge: float = 100e-15
    spot: np.ndarray = None      # optional (k, 2) sampled laser-spot positions

    def check(self):
        if self.spot is None and not (self.rx_rms > 0 and self.ry_rms > 0):
            raise TrackingError("RMS radii must be positive")
        if self.sigma_t < 0:
            raise TrackingError("emission-time spread must be non-negative")
        if self.spot is not None:
            spot = np.asarray(self.spot, dtype=float)
            if spot.ndim != 2 or spot.shape[1] != 2 or spot.shape[0] == 0:
                raise TrackingError("spot samples must be a non-empty (k, 2) array")


def load_spot(path):
    """Laser-spot samples from a CSV of ``x,y`` rows in metres."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                continue  # header line
    return np.array(rows, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class Macroparticle:
    position: tuple
    momentum: tuple
    emission_time: float
    alive: bool = True


@dataclass
class Bunch:
    """Structure-of-arrays bunch: positions (N, 3), momenta (N, 3), times (N,)."""
    positions: np.ndarray
    momenta: np.ndarray
    emission_times: np.ndarray
    charge: float = 0.0

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, i):
        return Macroparticle(tuple(self.positions[i]), tuple(self.momenta[i]),
                             float(self.emission_times[i]))

    def state(self):
        return np.ascontiguousarray(np.hstack([self.positions, self.momenta]), dtype=float)


def sample_bunch(source, n_particles, seed=0, z_cathode=0.0):
    """Gaussian elliptical spot (or resampled spot data) with Gaussian emission times."""
    source.check()
    if n_particles < 1:
        raise TrackingError("need at least one particle")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n_particles, 3))
    pos = np.zeros((n_particles, 3))
    if source.spot is None:
        pos[:, 0] = source.rx_rms * g[:, 0]
        pos[:, 1] = source.ry_rms * g[:, 1]
    else:
        spot = np.asarray(source.spot, dtype=float)
        pos[:, :2] = spot[rng.integers(0, spot.shape[0], n_particles)]
    pos[:, 2] = z_cathode
    times = source.sigma_t * g[:, 2]
    return Bunch(pos, np.zeros((n_particles, 3)), times, source.charge)


class FieldMap:
    """Fieldmap with ghost layers for cubic-convolution interpolation.

    The axis ghost column mirrors E_z (even in rho) and negates E_rho (odd);
    the outer ghost layers are quadratic extrapolations. ``overhang`` extra
    rows are extrapolated past the downstream end so that the RK4 stages of
    a particle crossing the last plane stay inside the map.
    """

    def __init__(self, data, overhang=2):
        g = data.grid
        if g.r0 != 0.0:
            raise TrackingError("tracking needs a fieldmap starting on the axis")
        self.data = data
        self.grid = g
        self.dz = (g.z1 - g.z0) / (g.nz - 1)
        self.dr = (g.r1 - g.r0) / (g.nr - 1)
        ez, er, mask = data.ez, data.er, np.asarray(data.mask, dtype=bool)
        if overhang:
            k = np.arange(1, overhang + 1)[:, None]
            ez = np.vstack([ez, self._extend(ez, k)])
            er = np.vstack([er, self._extend(er, k)])
            mask = np.vstack([mask, np.repeat(mask[-1:], overhang, axis=0)])
        self.ez_pad = self._pad(ez, odd=False)
        self.er_pad = self._pad(er, odd=True)
        self.valid = np.ascontiguousarray(mask, dtype=bool)

    @staticmethod
    def _extend(a, k):
        step = a[-1] - a[-2]
        if a.shape[0] < 3:
            return a[-1] + k * step
        return a[-1] + k * step + 0.5 * k * (k + 1) * (step - (a[-2] - a[-3]))

    @staticmethod
    def _pad(a, odd):
        nz, nr = a.shape
        out = np.empty((nz + 2, nr + 2))
        out[1:-1, 1:-1] = a
        out[1:-1, 0] = -a[:, 1] if odd else a[:, 1]
        if nz < 3 or nr < 3:
            out[1:-1, -1] = 2.0 * a[:, -1] - a[:, -2]
            out[0, :] = 2.0 * out[1, :] - out[2, :]
            out[-1, :] = 2.0 * out[-2, :] - out[-3, :]
            return np.ascontiguousarray(out)
        # Keys' end condition keeps the kernel exact for quadratics
        out[1:-1, -1] = 3.0 * a[:, -1] - 3.0 * a[:, -2] + a[:, -3]
        out[0, :] = 3.0 * out[1, :] - 3.0 * out[2, :] + out[3, :]
        out[-1, :] = 3.0 * out[-2, :] - 3.0 * out[-3, :] + out[-4, :]
        return np.ascontiguousarray(out)

    @classmethod
    def load(cls, path):
        return cls(read_fieldmap(path))

    @classmethod
    def uniform(cls, ez, z1, r1, nz=9, nr=5, z0=0.0):
        from .iga.fields import FieldmapGrid
        grid = FieldmapGrid(nz, nr, z0, z1, 0.0, r1)
        return cls(FieldmapData(grid, np.full((nz, nr), float(ez)), np.zeros((nz, nr)),
                                np.ones((nz, nr), dtype=bool)))

    def interp(self, z, rho):
        g = self.grid
        return kernels.interp_field(self.ez_pad, self.er_pad, self.valid, g.z0, self.dz,
                                    self.dr, np.atleast_1d(np.asarray(z, dtype=float)),
                                    np.atleast_1d(np.asarray(rho, dtype=float)))


def field_at(fieldmap, x, y, z):
    """Cartesian field at points; returns ``(Ex, Ey, Ez, ok)``.

    Points outside the grid or in masked cells come back as zeros with
    ``ok`` False. On the axis the transverse field is zero by symmetry.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    rho = np.hypot(x, y)
    ez, er, ok = fieldmap.interp(z, rho)
    safe = np.where(rho > 0.0, rho, 1.0)
    ex = np.where(rho > 0.0, er * x / safe, 0.0)
    ey = np.where(rho > 0.0, er * y / safe, 0.0)
    return ex, ey, ez, ok


@dataclass
class TrackingConfig:
    dt: float = 0.244e-12
    n_planes: int = 64
    exit_z: float = None          # default: downstream end of the fieldmap
    max_time: float = 5e-9        # after the first emission
    fieldmap_nz: int = 241
    fieldmap_nr: int = 21
    seed: int = 0

    def check(self):
        if not self.dt > 0:
            raise TrackingError("time step must be positive")
        if self.n_planes < 2 or self.fieldmap_nz < 2 or self.fieldmap_nr < 2:
            raise TrackingError("plane and grid counts must be at least 2")
        if not self.max_time > 0:
            raise TrackingError("max_time must be positive")

    def refined(self, grid=False):
        """Half the time step; with ``grid`` also twice the fieldmap resolution."""
        nz, nr = self.fieldmap_nz, self.fieldmap_nr
        if grid:
            nz, nr = 2 * nz - 1, 2 * nr - 1
        return TrackingConfig(self.dt / 2, self.n_planes, self.exit_z, self.max_time,
                              nz, nr, self.seed)


@dataclass
class Trajectory:
    planes: np.ndarray
    snapshots: np.ndarray   # (n_planes, N, 7): x, y, z, px, py, pz, t
    status: np.ndarray
    steps: int

    @property
    def lost(self):
        return int(np.sum(self.status != kernels.EXITED))


def track(bunch, fieldmap, config=None):
    """Push every particle with RK4 and record crossings of equally spaced z-planes."""
    cfg = config or TrackingConfig()
    cfg.check()
    g = fieldmap.grid
    z_start = float(np.min(bunch.positions[:, 2]))
    exit_z = g.z1 if cfg.exit_z is None else float(cfg.exit_z)
    if not z_start < exit_z <= g.z1 + 1e-12:
        raise TrackingError("exit plane must lie downstream of the cathode inside the map")
    planes = np.linspace(z_start, exit_z, cfg.n_planes + 1)[1:]
    t_emit = np.ascontiguousarray(bunch.emission_times, dtype=float)
    t_start = float(t_emit.min())
    max_steps = int(math.ceil((float(t_emit.max()) - t_start + cfg.max_time) / cfg.dt))
    state = bunch.state()
    snaps, status, steps = kernels.track_rk4(
        fieldmap.ez_pad, fieldmap.er_pad, fieldmap.valid, g.z0, fieldmap.dz, fieldmap.dr,
        state, t_emit, cfg.dt, t_start, max_steps, planes, Q_OVER_MC)
    status = np.asarray(status).copy()
    # particles still in flight when time ran out never reached the exit
    status[(status == kernels.RUNNING) | (status == kernels.PENDING)] = kernels.LOST
    return Trajectory(planes, np.asarray(snaps), status, int(steps))


def kinetic_energy(p):
    """Kinetic energy in eV for momenta in units of m_e c."""
    p = np.asarray(p, dtype=float)
    p2 = np.sum(p * p, axis=-1)
    # (gamma - 1) written to avoid cancellation at low momentum
    return MC2_EV * p2 / (np.sqrt(1.0 + p2) + 1.0)


def _emittance(u, pu):
    du = u - u.mean()
    dp = pu - pu.mean()
    det = np.mean(du * du) * np.mean(dp * dp) - np.mean(du * dp) ** 2
    return math.sqrt(max(det, 0.0))


@dataclass
class BeamStats:
    """Per-plane RMS sizes and emittances plus the exit energy spread.

    ``z_rms`` is the bunch length reconstructed from arrival times,
    ``-v_z (t - <t>)``. ``eps_z`` is the (z, E_kin) determinant in eV m,
    numerically equal to keV mm. Transverse emittances are normalized, in m rad.
    """
    z: np.ndarray
    x_rms: np.ndarray
    y_rms: np.ndarray
    z_rms: np.ndarray
    eps_x: np.ndarray
    eps_y: np.ndarray
    eps_z: np.ndarray
    counts: np.ndarray
    energy_spread: float
    mean_energy: float
    lost: int = 0

    @property
    def n_planes(self):
        return self.z.size

    def exit_summary(self):
        out = {k: float(getattr(self, k)[-1]) for k in STAT_NAMES}
        out.update(z=float(self.z[-1]), energy_spread_ev=self.energy_spread,
                   mean_energy_ev=self.mean_energy, lost=self.lost,
                   particles=int(self.counts[-1]))
        return out


def plane_stats(snap):
    """Statistics of one plane from an (N, 7) snapshot array (finite rows only)."""
    snap = np.asarray(snap, dtype=float)
    snap = snap[np.all(np.isfinite(snap), axis=1)]
    if snap.shape[0] < 2:
        raise TrackingError("a plane needs at least two particles for statistics")
    x, y = snap[:, 0], snap[:, 1]
    px, py, pz = snap[:, 3], snap[:, 4], snap[:, 5]
    t = snap[:, 6]
    gamma = np.sqrt(1.0 + px * px + py * py + pz * pz)
    vz = C_LIGHT * pz / gamma
    dz = -vz * (t - t.mean())
    ek = kinetic_energy(snap[:, 3:6])
    return {
        "x_rms": float(np.std(x)), "y_rms": float(np.std(y)), "z_rms": float(np.std(dz)),
        "eps_x": _emittance(x, px), "eps_y": _emittance(y, py), "eps_z": _emittance(dz, ek),
        "count": snap.shape[0], "energy_spread": float(np.std(ek)),
        "mean_energy": float(np.mean(ek)),
    }


def beam_stats(traj):
    rows = [plane_stats(traj.snapshots[k]) for k in range(traj.planes.size)]
    cols = {k: np.array([r[k] for r in rows]) for k in STAT_NAMES}
    return BeamStats(traj.planes.copy(), counts=np.array([r["count"] for r in rows]),
                     energy_spread=rows[-1]["energy_spread"],
                     mean_energy=rows[-1]["mean_energy"], lost=traj.lost, **cols)


@dataclass
class Convergence:
    delta: dict
    excluded: dict = field(default_factory=dict)

    def max(self):
        return max(self.delta.values())


def self_convergence(stats, ref):
    """Largest relative deviation per statistic over the planes.

    Planes where the reference value is zero are skipped and listed in
    ``excluded``.
    """
    if stats.n_planes != ref.n_planes:
        raise TrackingError("statistics have different plane counts")
    delta, excluded = {}, {}
    for name in STAT_NAMES:
        a = getattr(stats, name)
        b = getattr(ref, name)
        keep = b != 0.0
        excluded[name] = [int(i) for i in np.nonzero(~keep)[0]]
        delta[name] = float(np.max(np.abs(a[keep] - b[keep]) / np.abs(b[keep]))) \
            if keep.any() else 0.0
    return Convergence(delta, excluded)


def write_stats_csv(path, stats, comment=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(("z",) + STAT_NAMES) + "\n")
        for k in range(stats.n_planes):
            vals = [stats.z[k]] + [getattr(stats, n)[k] for n in STAT_NAMES]
            fh.write(",".join("%.10g" % v for v in vals) + "\n")


def write_summary(path, stats, extra=None):
    doc = {"exit": stats.exit_summary()}
    doc.update(extra or {})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc


def config_dict(cfg):
    return asdict(cfg)
