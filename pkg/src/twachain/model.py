"""Physical and numerical parameters, validation, and initial conditions.

All energies are expressed in units of the single-photon loss rate ``gamma``
and times in units of ``1/gamma``.  The default convention ``gamma = 1``,
``U = 0.1`` can be overridden per configuration.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace
from typing import Optional, Sequence

import numpy as np
import yaml

from .errors import ConfigError
from .rng import TrajectoryStreams

DEFAULT_GAMMA = 1.0
DEFAULT_U = 0.1
DEFAULT_DT = 5e-3
DEFAULT_RING_RADIUS = 10.0


@dataclass(frozen=True)
class ChainParams:
    """Chain Hamiltonian and dissipation parameters.

    Attributes
    ----------
    L : number of sites
    n : photon order of the boundary drive
    delta : drive-cavity detuning
    U : Kerr interaction strength
    J : nearest-neighbour hopping
    zeta : drive amplitude
    gamma : boundary single-photon loss rate (energy unit)
    """

    L: int
    n: int
    delta: float
    J: float
    zeta: float
    U: float = DEFAULT_U
    gamma: float = DEFAULT_GAMMA

    def dissipative_sites(self) -> tuple[int, ...]:
        # first and last site; a single-site chain has one loss channel
        return (0,) if self.L == 1 else (0, self.L - 1)


@dataclass(frozen=True)
class InitialCondition:
    """Initial phase-space sampling policy.

    ``vacuum``
        alpha ~ complex Gaussian, variance 1/2 (1/4 per quadrature).
    ``ring``
        alpha = r e^{i theta} + vacuum noise.  By default theta is one
        uniform draw per trajectory shared by all sites (``phase_mode =
        "trajectory"``); ``"site"`` draws an independent angle per site.
    ``explicit``
        all trajectories start from the given field vector, with no added
        noise (used by the classical runs).
    """

    kind: str = "vacuum"
    ring_radius: float = DEFAULT_RING_RADIUS
    phase_mode: str = "trajectory"
    explicit_fields: Optional[np.ndarray] = None

    KINDS = ("vacuum", "ring", "explicit")


@dataclass(frozen=True)
class IntegrationControls:
    """Fixed-step integration and averaging controls."""

    dt: float = DEFAULT_DT
    t_transient: float = 100.0
    t_window: float = 200.0
    n_traj: int = 128
    master_seed: int = 0
    sample_spacing: float = 1.0


@dataclass(frozen=True)
class ValidatedConfig:
    """Immutable, fully-defaulted configuration; safe to share across workers."""

    params: ChainParams
    initial: InitialCondition
    controls: IntegrationControls
    extras: dict = field(default_factory=dict)

    def with_seed(self, master_seed: int) -> "ValidatedConfig":
        return replace(self, controls=replace(self.controls, master_seed=int(master_seed)))


def validate(
    params: ChainParams,
    initial: InitialCondition | None = None,
    controls: IntegrationControls | None = None,
    extras: dict | None = None,
) -> ValidatedConfig:
    """Check all invariants and return an immutable configuration.

    Raises
    ------
    ConfigError
        listing every violation found.
    """
    initial = initial or InitialCondition()
    controls = controls or IntegrationControls()
    violations = []
    if params.L < 1:
        violations.append(f"NonPositive(L): L={params.L}")
    if params.n < 1:
        violations.append(f"NonPositive(n): n={params.n}")
    if params.gamma <= 0:
        violations.append(f"NonPositive(gamma): gamma={params.gamma}")
    if params.U < 0:
        violations.append(f"NegativeKerr(U): U={params.U}")
    if params.zeta < 0:
        violations.append(f"NegativeAmplitude(zeta): zeta={params.zeta}")
    if initial.kind not in InitialCondition.KINDS:
        violations.append(f"UnknownInitialKind: {initial.kind!r}")
    if initial.kind == "ring":
        if initial.ring_radius <= 0:
            violations.append(f"NonPositive(ring_radius): {initial.ring_radius}")
        if initial.phase_mode not in ("trajectory", "site"):
            violations.append(f"UnknownPhaseMode: {initial.phase_mode!r}")
    if initial.kind == "explicit":
        if initial.explicit_fields is None:
            violations.append("ExplicitFieldsMissing")
        else:
            fields = np.asarray(initial.explicit_fields)
            if fields.shape != (params.L,):
                violations.append(
                    "ExplicitFieldsLengthMismatch: "
                    f"got {fields.shape}, expected ({params.L},)"
                )
    if controls.dt <= 0:
        violations.append(f"NonPositive(dt): dt={controls.dt}")
    if controls.t_window < 0:
        violations.append(f"Negative(t_window): {controls.t_window}")
    if controls.t_transient < 0:
        violations.append(f"Negative(t_transient): {controls.t_transient}")
    if controls.n_traj < 1:
        violations.append(f"NonPositive(n_traj): {controls.n_traj}")
    if controls.sample_spacing < controls.dt:
        violations.append(
            f"SampleSpacingBelowStep: {controls.sample_spacing} < dt={controls.dt}"
        )
    if violations:
        raise ConfigError(violations)
    return ValidatedConfig(
        params=params, initial=initial, controls=controls, extras=dict(extras or {})
    )


def sample_initial(config: ValidatedConfig, streams: TrajectoryStreams) -> np.ndarray:
    """Draw the initial ensemble, shape ``(n_traj, L)`` complex.

    Each trajectory consumes draws only from its own stream, so the sample is
    independent of how the ensemble is partitioned.
    """
    L = config.params.L
    n_traj = config.controls.n_traj
    ic = config.initial
    fields = np.empty((n_traj, L), dtype=np.complex128)
    if ic.kind == "explicit":
        fields[:] = np.asarray(ic.explicit_fields, dtype=np.complex128)[None, :]
        return fields
    for i in range(n_traj):
        g = streams[i]
        noise = (g.standard_normal(L) + 1j * g.standard_normal(L)) * 0.5
        if ic.kind == "vacuum":
            fields[i] = noise
        else:  # ring
            if ic.phase_mode == "trajectory":
                theta = g.uniform(-np.pi, np.pi)
            else:
                theta = g.uniform(-np.pi, np.pi, size=L)
            fields[i] = ic.ring_radius * np.exp(1j * theta) + noise
    return fields


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

def _chain_from_dict(d: dict) -> ChainParams:
    known = {"L", "n", "delta", "U", "J", "zeta", "gamma"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError([f"UnknownKey(chain.{k})" for k in sorted(unknown)])
    try:
        return ChainParams(
            L=int(d["L"]),
            n=int(d.get("n", 1)),
            delta=float(d["delta"]),
            J=float(d["J"]),
            zeta=float(d["zeta"]),
            U=float(d.get("U", DEFAULT_U)),
            gamma=float(d.get("gamma", DEFAULT_GAMMA)),
        )
    except KeyError as err:
        raise ConfigError([f"MissingKey(chain.{err.args[0]})"]) from err


def _initial_from_dict(d: dict) -> InitialCondition:
    fields = d.get("explicit_fields")
    if fields is not None:
        arr = np.asarray(fields, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ConfigError(["ExplicitFieldsFormat: expected list of [re, im] pairs"])
        fields = arr[:, 0] + 1j * arr[:, 1]
    return InitialCondition(
        kind=str(d.get("kind", "vacuum")),
        ring_radius=float(d.get("ring_radius", DEFAULT_RING_RADIUS)),
        phase_mode=str(d.get("phase_mode", "trajectory")),
        explicit_fields=fields,
    )


def _controls_from_dict(d: dict) -> IntegrationControls:
    return IntegrationControls(
        dt=float(d.get("dt", DEFAULT_DT)),
        t_transient=float(d.get("t_transient", 100.0)),
        t_window=float(d.get("t_window", 200.0)),
        n_traj=int(d.get("n_traj", 128)),
        master_seed=int(d.get("master_seed", 0)),
        sample_spacing=float(d.get("sample_spacing", 1.0)),
    )


def config_from_dict(doc: dict) -> ValidatedConfig:
    """Build and validate a configuration from a parsed mapping."""
    if not isinstance(doc, dict) or "chain" not in doc:
        raise ConfigError(["MissingSection(chain)"])
    params = _chain_from_dict(doc["chain"])
    initial = _initial_from_dict(doc.get("initial", {}))
    controls = _controls_from_dict(doc.get("integration", {}))
    extras = {
        k: v
        for k, v in doc.items()
        if k not in ("chain", "initial", "integration")
    }
    # ring initial conditions are the documented default for n >= 3, where the
    # vacuum is semiclassically stable and never activates on useful timescales
    if params.n >= 3 and "initial" not in doc:
        initial = InitialCondition(kind="ring")
    return validate(params, initial, controls, extras)


def load_config(path) -> ValidatedConfig:
    """Load a YAML configuration file (units of gamma throughout)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as err:
            raise ConfigError([f"YamlParse: {err}"]) from err
    return config_from_dict(doc or {})


def config_to_dict(config: ValidatedConfig) -> dict:
    """Fully resolved configuration as a plain mapping (defaults expanded)."""
    chain = asdict(config.params)
    initial = {
        "kind": config.initial.kind,
        "ring_radius": config.initial.ring_radius,
        "phase_mode": config.initial.phase_mode,
    }
    if config.initial.explicit_fields is not None:
        arr = np.asarray(config.initial.explicit_fields)
        initial["explicit_fields"] = [[float(z.real), float(z.imag)] for z in arr]
    doc = {
        "chain": chain,
        "initial": initial,
        "integration": asdict(config.controls),
    }
    doc.update(config.extras)
    return doc


def save_config(config: ValidatedConfig, path) -> None:
    """Write the resolved configuration; re-running it reproduces outputs."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# twachain resolved configuration\n")
        fh.write("# units: energies in gamma, times in 1/gamma\n")
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=False)
