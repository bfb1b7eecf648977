"""One forward-simulation contract over the four engines.

Every engine advances a state from t0 to t1 under rates c with a given
random stream. The compiled :func:`propagate_kernel` dispatches on an
integer code so that the particle filter can call any engine without
leaving compiled code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _common as cm
from .cle import CleConfig, cle_advance, hybrid_sde_advance, simulate_cle, simulate_hybrid_sde
from .gillespie import SsaConfig, simulate_gillespie, ssa_advance
from .lna_hybrid import HybridConfig, hybrid_lna_advance, simulate_hybrid_lna
from .model import ReactionNetwork, Trajectory
from .ode import OK, StiffnessError
from .rng import as_generator

GILLESPIE, CLE, HYBRID_LNA, HYBRID_SDE = 0, 1, 2, 3
ENGINE_CODES = {"gillespie": GILLESPIE, "cle": CLE, "hybrid-lna": HYBRID_LNA,
                "hybrid-sde": HYBRID_SDE}
TRUNCATED_STATUS = -1


@njit(cache=True, nogil=True)
def propagate_kernel(code, x, t0, t1, c, A, rtype, ridx, hp, opts, cp, max_events, rng,
                     counters):
    """Advance x in place over [t0, t1]; returns OK or a failure status."""
    if t1 <= t0:
        return OK
    if code == GILLESPIE:
        ssa_advance(x, t0, t1, c, A, rtype, ridx, rng, False, max_events, counters)
        if counters[cm.TRUNCATED] != 0:
            return TRUNCATED_STATUS
        return OK
    if code == CLE:
        cle_advance(x, t0, t1, c, A, rtype, ridx, cp[0], rng, False, counters)
        return OK
    if code == HYBRID_LNA:
        status, _t, _x, _n = hybrid_lna_advance(x, t0, t1, c, A, rtype, ridx, hp, opts, rng,
                                                False, counters)
        return status
    hybrid_sde_advance(x, t0, t1, c, A, rtype, ridx, hp, cp, rng, False, counters)
    return OK


@dataclass(frozen=True)
class Engine:
    """A named engine with its configuration.

    ``propagate(network, x, t0, t1, c, rng)`` is the forward-simulation
    contract used by inference; ``simulate`` produces a recorded path.
    """

    name: str = "gillespie"
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    cle: CleConfig = field(default_factory=CleConfig)
    max_events: int = 10**8

    def __post_init__(self):
        if self.name not in ENGINE_CODES:
            raise ValueError(f"unknown engine {self.name!r}; expected one of "
                             f"{', '.join(ENGINE_CODES)}")

    @property
    def code(self) -> int:
        return ENGINE_CODES[self.name]

    def kernel_args(self, k: int):
        """(code, hp, opts, cp, max_events) for :func:`propagate_kernel`."""
        hcfg = self.hybrid  # the SDE hybrid reads only the classification thresholds
        return (self.code, hcfg.kernel_params(k), hcfg.ode.as_array(),
                self.cle.kernel_params(), int(self.max_events))

    def propagate(self, network: ReactionNetwork, x, t0: float, t1: float, c, rng,
                  counters=None) -> np.ndarray:
        """State at t1 given state x at t0 (x is not modified)."""
        xn = np.array(x, dtype=np.float64)
        A, rtype, ridx = network.kernel_arrays()
        code, hp, opts, cp, me = self.kernel_args(network.n_species)
        cnt = cm.new_counters() if counters is None else counters
        status = propagate_kernel(code, xn, float(t0), float(t1), network.rates(c), A, rtype,
                                  ridx, hp, opts, cp, me, as_generator(rng), cnt)
        if status == TRUNCATED_STATUS:
            raise RuntimeError(f"event limit {me} reached before t = {t1}")
        if status != OK:
            raise StiffnessError("LNA integration failed", t=float(t0), state=np.array(x))
        return xn

    def simulate(self, network: ReactionNetwork, c, x0, t_end: float, rng) -> Trajectory:
        if self.code == GILLESPIE:
            return simulate_gillespie(network, c, x0, SsaConfig(t_end, max_events=self.max_events),
                                      rng)
        if self.code == CLE:
            return simulate_cle(network, c, x0, t_end, self.cle.dt_euler, rng)
        if self.code == HYBRID_LNA:
            return simulate_hybrid_lna(network, c, x0, t_end, self.hybrid, rng)
        return simulate_hybrid_sde(network, c, x0, t_end, self.cle, self.hybrid, rng)
