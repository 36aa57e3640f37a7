"""Physical observables from phase-space ensembles.

Ensemble averages of symmetrically-ordered field moments estimate operator
expectation values after the half-quantum corrections

    <adag_k a_l> = <conj(alpha_k) alpha_l> - delta_{kl}/2,
    <adag^2 a^2> = <|alpha|^4> - 2 <|alpha|^2> + 1/2.

Accumulators keep per-trajectory partial sums so that (i) merging partial
accumulations is exact, and (ii) standard errors treat trajectories — not the
correlated time samples inside one trajectory — as the independent units.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateGridError,
    EmptyAccumulatorError,
    GridMismatchError,
    VanishingPopulationError,
)


def _se(values: np.ndarray) -> float:
    """Standard error over per-trajectory estimates."""
    values = values[np.isfinite(values)]
    if values.size < 2:
        return np.nan
    return float(values.std(ddof=1) / np.sqrt(values.size))


class MomentAccumulator:
    """Running per-site moments with per-trajectory resolution.

    Samples are added one time-slice at a time via :meth:`add`; all
    trajectories in the slice must correspond row-by-row to ``traj_ids``.
    Cross-site second moments ``conj(alpha_k) alpha_l`` are accumulated for
    the configured pairs (defaults to none).
    """

    def __init__(self, n_sites: int, traj_ids, m_max: int = 3, cross_pairs=()):
        self.n_sites = int(n_sites)
        self.traj_ids = np.asarray(traj_ids, dtype=np.int64)
        self.m_max = int(m_max)
        self.cross_pairs = [(int(k), int(l)) for k, l in cross_pairs]
        n = self.traj_ids.size
        self.count = np.zeros(n, dtype=np.int64)
        self.sum_abs2 = np.zeros((n, n_sites))
        self.sum_abs4 = np.zeros((n, n_sites))
        self.sum_re = np.zeros((n, n_sites))
        self.sum_im = np.zeros((n, n_sites))
        self.sum_im2 = np.zeros((n, n_sites))
        self.sum_phase = np.zeros((self.m_max, n, n_sites), dtype=np.complex128)
        self.sum_cross = np.zeros((len(self.cross_pairs), n), dtype=np.complex128)

    @property
    def n_samples(self) -> int:
        return int(self.count.sum())

    def add(self, fields: np.ndarray) -> None:
        """Accumulate one time sample for every trajectory (rows = traj_ids)."""
        if fields.shape != (self.traj_ids.size, self.n_sites):
            raise ValueError(f"fields shape {fields.shape} does not match accumulator")
        a2 = fields.real**2 + fields.imag**2
        self.count += 1
        self.sum_abs2 += a2
        self.sum_abs4 += a2 * a2
        self.sum_re += fields.real
        self.sum_im += fields.imag
        self.sum_im2 += fields.imag**2
        # e^{i m phi} accumulated by repeated multiplication of the unit field
        mag = np.sqrt(a2)
        unit = np.where(mag > 0, fields / np.where(mag > 0, mag, 1.0), 1.0 + 0j)
        phase = unit.copy()
        for m in range(self.m_max):
            self.sum_phase[m] += phase
            if m + 1 < self.m_max:
                phase = phase * unit
        for idx, (k, l) in enumerate(self.cross_pairs):
            self.sum_cross[idx] += np.conj(fields[:, k]) * fields[:, l]

    # -- merging ----------------------------------------------------------
    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        """Combine two accumulations (same config; disjoint or equal samples).

        Equal ``traj_ids`` merge by summing per-trajectory blocks (time
        split); disjoint id sets concatenate (trajectory split).
        """
        if (
            other.n_sites != self.n_sites
            or other.m_max != self.m_max
            or other.cross_pairs != self.cross_pairs
        ):
            raise ValueError("accumulators configured differently")
        out = MomentAccumulator(self.n_sites, self.traj_ids, self.m_max, self.cross_pairs)
        if np.array_equal(self.traj_ids, other.traj_ids):
            for name in ("count", "sum_abs2", "sum_abs4", "sum_re", "sum_im",
                         "sum_im2", "sum_phase", "sum_cross"):
                setattr(out, name, getattr(self, name) + getattr(other, name))
            return out
        if np.intersect1d(self.traj_ids, other.traj_ids).size:
            raise ValueError("overlapping trajectory ids with unequal id sets")
        order = np.argsort(np.concatenate([self.traj_ids, other.traj_ids]), kind="stable")
        out.traj_ids = np.concatenate([self.traj_ids, other.traj_ids])[order]
        for name in ("count", "sum_abs2", "sum_abs4", "sum_re", "sum_im", "sum_im2"):
            setattr(out, name, np.concatenate([getattr(self, name), getattr(other, name)])[order])
        out.sum_phase = np.concatenate([self.sum_phase, other.sum_phase], axis=1)[:, order]
        out.sum_cross = np.concatenate([self.sum_cross, other.sum_cross], axis=1)[:, order]
        return out

    # -- derived quantities -------------------------------------------------
    def _check(self, min_count=1):
        if self.n_samples < min_count:
            raise EmptyAccumulatorError(f"need >= {min_count} samples")

    def _mean(self, sums: np.ndarray) -> np.ndarray:
        return sums.sum(axis=0) / self.n_samples

    def _per_traj(self, sums: np.ndarray) -> np.ndarray:
        return sums / self.count[:, None]

    def photon_number(self, site: int, with_se: bool = False):
        """Weyl-corrected occupation <adag a> at ``site`` (not clamped)."""
        self._check()
        value = float(self._mean(self.sum_abs2)[site] - 0.5)
        if not with_se:
            return value
        per = self._per_traj(self.sum_abs2)[:, site] - 0.5
        return value, _se(per)

    def photon_fluctuations(self, site: int, with_se: bool = False):
        """delta n = <adag^2 a^2> - <adag a>^2 at ``site``."""
        self._check(2)
        m2 = self._mean(self.sum_abs2)[site]
        m4 = self._mean(self.sum_abs4)[site]
        value = float((m4 - 2 * m2 + 0.5) - (m2 - 0.5) ** 2)
        if not with_se:
            return value
        m2t = self._per_traj(self.sum_abs2)[:, site]
        m4t = self._per_traj(self.sum_abs4)[:, site]
        per = (m4t - 2 * m2t + 0.5) - (m2t - 0.5) ** 2
        return value, _se(per)

    def g2(self, site: int) -> float:
        """Second-order coherence; meaningful only for n well above zero."""
        n = self.photon_number(site)
        if n <= 0:
            return np.nan
        return 1.0 + self.photon_fluctuations(site) / n**2

    def circular_moment(self, site: int, order: int, with_se: bool = False):
        """C^(m) = |<e^{i m phi}>| in [0, 1]."""
        self._check()
        if not 1 <= order <= self.m_max:
            raise ValueError(f"order {order} outside accumulated range 1..{self.m_max}")
        z = self.sum_phase[order - 1, :, site].sum() / self.n_samples
        value = float(min(abs(z), 1.0))
        if not with_se:
            return value
        # spread of per-trajectory means projected on the mean direction
        zt = self._per_traj(self.sum_phase[order - 1])[:, site]
        direction = z / abs(z) if abs(z) > 0 else 1.0
        return value, _se((zt * np.conj(direction)).real)

    def circular_variance(self, site: int, order: int) -> float:
        """1 - C^(m); 0 for a phase-locked state, 1 for uniform phases."""
        return 1.0 - self.circular_moment(site, order)

    def first_order_coherence(self, pair_index_or_sites, with_se: bool = False):
        """g1 between a configured pair; normalised by Weyl-corrected numbers."""
        self._check()
        if isinstance(pair_index_or_sites, tuple):
            idx = self.cross_pairs.index(tuple(pair_index_or_sites))
        else:
            idx = int(pair_index_or_sites)
        k, l = self.cross_pairs[idx]
        cross = self.sum_cross[idx].sum() / self.n_samples
        if k == l:
            cross -= 0.5
        nk = self.photon_number(k)
        nl = self.photon_number(l)
        if nk <= 0 or nl <= 0:
            raise VanishingPopulationError(
                f"sites ({k}, {l}) have non-positive corrected populations"
            )
        value = complex(cross / np.sqrt(nk * nl))
        if not with_se:
            return value
        per = np.abs(self._per_traj(self.sum_cross)[idx] - (0.5 if k == l else 0.0))
        per = per / np.sqrt(nk * nl)
        return value, _se(per)

    def momentum_second_moment(self, site: int, subtract_mean: bool = False) -> float:
        """<p^2> with p = sqrt(2) Im(alpha); raw moment unless subtract_mean."""
        self._check(2)
        p2 = 2.0 * self._mean(self.sum_im2)[site]
        if subtract_mean:
            p2 -= 2.0 * self._mean(self.sum_im)[site] ** 2
        return float(p2)

    def equipartition_temperature(self, site: int, delta: float) -> float:
        """T = |Delta| <p^2>, the local equipartition estimate."""
        return abs(delta) * self.momentum_second_moment(site)


# ---------------------------------------------------------------------------
# Wigner histograms
# ---------------------------------------------------------------------------

@dataclass
class WignerHistogram:
    """Normalised 2D histogram over (Re alpha, Im alpha).

    ``counts`` are kept raw so histograms merge exactly; ``density()``
    returns weights with sum(weights) * cell_area == 1.
    """

    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray
    total_samples: int = 0
    n_outside: int = 0

    @property
    def cell_area(self) -> float:
        return float((self.x_edges[1] - self.x_edges[0]) * (self.y_edges[1] - self.y_edges[0]))

    @property
    def bins(self) -> tuple[int, int]:
        return self.counts.shape

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            0.5 * (self.x_edges[:-1] + self.x_edges[1:]),
            0.5 * (self.y_edges[:-1] + self.y_edges[1:]),
        )

    def density(self) -> np.ndarray:
        if self.total_samples == 0:
            raise EmptyAccumulatorError("histogram holds no samples")
        inside = self.total_samples - self.n_outside
        return self.counts / (inside * self.cell_area)

    def coverage(self) -> float:
        if self.total_samples == 0:
            return 0.0
        return 1.0 - self.n_outside / self.total_samples

    def add(self, samples: np.ndarray) -> None:
        samples = np.asarray(samples).ravel()
        h, _, _ = np.histogram2d(
            samples.real, samples.imag, bins=(self.x_edges, self.y_edges)
        )
        self.counts += h.astype(np.int64)
        self.total_samples += samples.size
        self.n_outside += samples.size - int(h.sum())

    def merge(self, other: "WignerHistogram") -> "WignerHistogram":
        if not (
            np.array_equal(self.x_edges, other.x_edges)
            and np.array_equal(self.y_edges, other.y_edges)
        ):
            raise GridMismatchError("histogram grids differ")
        return WignerHistogram(
            self.x_edges,
            self.y_edges,
            self.counts + other.counts,
            self.total_samples + other.total_samples,
            self.n_outside + other.n_outside,
        )

    def second_moment(self) -> float:
        """<|alpha|^2> of the binned distribution."""
        xc, yc = self.centers()
        r2 = xc[:, None] ** 2 + yc[None, :] ** 2
        w = self.density()
        return float(np.sum(w * r2) * self.cell_area)

    def circular_moment(self, order: int) -> float:
        xc, yc = self.centers()
        z = xc[:, None] + 1j * yc[None, :]
        phase = np.exp(1j * order * np.angle(z))
        w = self.density()
        return float(abs(np.sum(w * phase) * self.cell_area))

    def radial_profile(self, n_bins: int | None = None):
        """Azimuthal average: returns (r_centers, mean density, ring areas)."""
        xc, yc = self.centers()
        r = np.sqrt(xc[:, None] ** 2 + yc[None, :] ** 2).ravel()
        w = self.density().ravel()
        r_max = r.max()
        if n_bins is None:
            n_bins = max(self.counts.shape) // 2
        edges = np.linspace(0.0, r_max + 1e-12, n_bins + 1)
        which = np.digitize(r, edges) - 1
        prof = np.zeros(n_bins)
        for b in range(n_bins):
            mask = which == b
            if mask.any():
                prof[b] = w[mask].mean()
        centers = 0.5 * (edges[:-1] + edges[1:])
        ring_area = np.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
        return centers, prof, ring_area


def auto_grid(samples: np.ndarray, bins: int = 201, n_sigma: float = 4.0):
    """Grid spanning mean +- n_sigma sample standard deviations per axis."""
    samples = np.asarray(samples).ravel()
    if samples.size == 0:
        raise DegenerateGridError("cannot build a grid from zero samples")
    sx = max(float(samples.real.std()), 1e-6)
    sy = max(float(samples.imag.std()), 1e-6)
    cx, cy = float(samples.real.mean()), float(samples.imag.mean())
    x_edges = np.linspace(cx - n_sigma * sx, cx + n_sigma * sx, bins + 1)
    y_edges = np.linspace(cy - n_sigma * sy, cy + n_sigma * sy, bins + 1)
    return x_edges, y_edges


def wigner_histogram(samples: np.ndarray, grid=None, bins: int = 201) -> WignerHistogram:
    """Histogram phase-space samples into a local Wigner-function estimate.

    If ``grid=(x_edges, y_edges)`` covers less than 99% of the samples the
    grid is re-derived from the samples (auto-expand).
    """
    samples = np.asarray(samples).ravel()
    if samples.size == 0:
        raise DegenerateGridError("no samples")
    if grid is None:
        grid = auto_grid(samples, bins=bins)
    x_edges, y_edges = (np.asarray(grid[0], dtype=float), np.asarray(grid[1], dtype=float))
    if x_edges.size < 2 or y_edges.size < 2:
        raise DegenerateGridError("grid must have at least one cell per axis")
    hist = WignerHistogram(
        x_edges, y_edges, np.zeros((x_edges.size - 1, y_edges.size - 1), dtype=np.int64)
    )
    hist.add(samples)
    if hist.coverage() < 0.99:
        return wigner_histogram(samples, grid=auto_grid(samples, bins=bins))
    return hist


def momentum_histogram(samples: np.ndarray, bins: int = 101):
    """Histogram of p = sqrt(2) Im(alpha); returns (centers, density)."""
    p = np.sqrt(2.0) * np.asarray(samples).ravel().imag
    counts, edges = np.histogram(p, bins=bins, density=True)
    return 0.5 * (edges[:-1] + edges[1:]), counts


# ---------------------------------------------------------------------------
# CSV emitters
# ---------------------------------------------------------------------------

def write_site_table(path, acc: MomentAccumulator, delta: float, g2_threshold: float = 0.1):
    """Per-site observable table; energies in gamma, times in 1/gamma."""
    header = ["site", "n", "n_se", "dn", "dn_se"]
    for m in range(1, acc.m_max + 1):
        header += [f"C{m}", f"dphi{m}"]
    header += ["g1_abs", "p2", "T_eq", "g2"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        pair_for_site = {l: i for i, (k, l) in enumerate(acc.cross_pairs)}
        for site in range(acc.n_sites):
            n, n_se = acc.photon_number(site, with_se=True)
            dn, dn_se = acc.photon_fluctuations(site, with_se=True)
            row = [site + 1, f"{n:.8g}", f"{n_se:.3g}", f"{dn:.8g}", f"{dn_se:.3g}"]
            for m in range(1, acc.m_max + 1):
                c = acc.circular_moment(site, m)
                row += [f"{c:.8g}", f"{1.0 - c:.8g}"]
            if site in pair_for_site:
                try:
                    g1 = abs(acc.first_order_coherence(pair_for_site[site]))
                except VanishingPopulationError:
                    g1 = np.nan
                row.append(f"{g1:.8g}")
            else:
                row.append("")
            p2 = acc.momentum_second_moment(site)
            row += [f"{p2:.8g}", f"{abs(delta) * p2:.8g}"]
            g2 = acc.g2(site) if n > g2_threshold else np.nan
            row.append(f"{g2:.8g}" if np.isfinite(g2) else "")
            writer.writerow(row)


def write_wigner(path_prefix, hist: WignerHistogram, meta: dict | None = None):
    """Dense CSV grid of densities plus a JSON sidecar with the grid spec."""
    np.savetxt(f"{path_prefix}.csv", hist.density(), delimiter=",")
    spec = {
        "x_min": float(hist.x_edges[0]),
        "x_max": float(hist.x_edges[-1]),
        "y_min": float(hist.y_edges[0]),
        "y_max": float(hist.y_edges[-1]),
        "bins_x": hist.bins[0],
        "bins_y": hist.bins[1],
        "total_samples": hist.total_samples,
        "coverage": hist.coverage(),
    }
    spec.update(meta or {})
    with open(f"{path_prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(spec, fh, indent=1)
