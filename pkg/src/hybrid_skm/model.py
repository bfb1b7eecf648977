"""Reaction networks, system states and mass-action hazards.

A network is stored as reactant/product stoichiometry matrices plus a
compact encoding of each reaction's reactants that the compiled kernels
use to evaluate hazards without touching Python objects:

    ORDER0  no reactants                 h = c
    ORDER1  one molecule of idx[0]       h = c x[idx0]
    ORDER2  idx[0] + idx[1], distinct     h = c x[idx0] x[idx1]
    DIMER   two molecules of idx[0]      h = c x(x-1)/2, clamped at 0
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numba import njit

ORDER0, ORDER1, ORDER2, DIMER = 0, 1, 2, 3


class NetworkError(ValueError):
    """Invalid reaction network definition."""


@dataclass(frozen=True)
class ReactionNetwork:
    species_names: tuple[str, ...]
    reactants: np.ndarray  # u, r x k
    products: np.ndarray  # v, r x k
    rate_constants: np.ndarray  # c, length r
    reaction_names: tuple[str, ...] = ()
    rtype: np.ndarray = field(init=False, repr=False, compare=False)
    ridx: np.ndarray = field(init=False, repr=False, compare=False)
    net_effect: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        u = np.asarray(self.reactants, dtype=np.int64)
        v = np.asarray(self.products, dtype=np.int64)
        c = np.asarray(self.rate_constants, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise NetworkError("reactant and product matrices must both be r x k")
        r, k = u.shape
        if r < 1 or k < 1:
            raise NetworkError("a network needs at least one species and one reaction")
        if len(self.species_names) != k:
            raise NetworkError(f"{len(self.species_names)} species names for {k} columns")
        if c.shape != (r,):
            raise NetworkError(f"expected {r} rate constants, got shape {c.shape}")
        if np.any(u < 0) or np.any(v < 0):
            raise NetworkError("stoichiometric coefficients must be nonnegative")
        if not np.all(c > 0):
            raise NetworkError("rate constants must be strictly positive")
        names = tuple(self.reaction_names) or tuple(f"R{i + 1}" for i in range(r))
        if len(names) != r:
            raise NetworkError("one name per reaction required")

        rtype = np.zeros(r, dtype=np.int64)
        ridx = np.full((r, 2), -1, dtype=np.int64)
        for i in range(r):
            order = int(u[i].sum())
            if order > 2:
                raise NetworkError(
                    f"reaction {names[i]} has order {order}; at most two reactant "
                    "molecules are supported"
                )
            species = [j for j in range(k) for _ in range(u[i, j])]
            if order == 0:
                rtype[i] = ORDER0
            elif order == 1:
                rtype[i] = ORDER1
                ridx[i, 0] = species[0]
            elif species[0] == species[1]:
                rtype[i] = DIMER
                ridx[i, 0] = species[0]
            else:
                rtype[i] = ORDER2
                ridx[i] = species

        for name, value in (("reactants", u), ("products", v), ("rate_constants", c)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        a = v - u
        a.setflags(write=False)
        object.__setattr__(self, "net_effect", a)
        object.__setattr__(self, "reaction_names", names)
        object.__setattr__(self, "species_names", tuple(self.species_names))
        object.__setattr__(self, "rtype", rtype)
        object.__setattr__(self, "ridx", ridx)

    @property
    def n_species(self) -> int:
        return self.reactants.shape[1]

    @property
    def n_reactions(self) -> int:
        return self.reactants.shape[0]

    @property
    def orders(self) -> np.ndarray:
        return self.reactants.sum(axis=1)

    def with_rates(self, c) -> "ReactionNetwork":
        return ReactionNetwork(self.species_names, self.reactants, self.products,
                               np.asarray(c, dtype=float), self.reaction_names)

    def rates(self, c=None) -> np.ndarray:
        """Rate vector to use for a call: ``c`` if given, else the stored one."""
        if c is None:
            return self.rate_constants
        c = np.asarray(c, dtype=np.float64)
        if c.shape != (self.n_reactions,):
            raise NetworkError(f"expected {self.n_reactions} rate constants")
        return c

    def kernel_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(A as float64, rtype, ridx): the tuple passed to compiled kernels."""
        return (np.ascontiguousarray(self.net_effect, dtype=np.float64), self.rtype, self.ridx)


@dataclass(frozen=True)
class SystemState:
    t: float
    x: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        if np.any(x < 0):
            raise ValueError("species amounts must be nonnegative")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))


@dataclass
class Trajectory:
    """Time-ordered states of one sample path plus run metadata."""

    times: np.ndarray
    states: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] != self.times.shape[0]:
            raise ValueError("states must be (n, k) with one row per time")
        if self.times.size == 0 or self.times[0] != 0.0:
            raise ValueError("trajectory must start with a record at t = 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size

    def __iter__(self) -> Iterator[SystemState]:
        for t, x in zip(self.times, self.states):
            yield SystemState(t, x)

    @property
    def final(self) -> SystemState:
        return SystemState(self.times[-1], self.states[-1])


# -- compiled hazard kernels -------------------------------------------------

# Helpers take scalars: xa = x[ridx[i, 0]], xb = x[ridx[i, 1]] (an index of -1
# reads an arbitrary entry that the reaction type ignores). Passing arrays into
# inlined helpers costs a reference-count round trip per call.

@njit(cache=True, inline="always")
def _hazard_one(ci, rt, xa, xb):
    if rt == ORDER0:
        return ci
    if rt == ORDER1:
        return ci * xa if xa > 0.0 else 0.0
    if rt == ORDER2:
        if xa <= 0.0 or xb <= 0.0:
            return 0.0
        return ci * xa * xb
    if xa < 1.0:
        return 0.0
    return ci * xa * (xa - 1.0) * 0.5


@njit(cache=True)
def _hazards(x, c, rtype, ridx, out):
    total = 0.0
    for i in range(c.size):
        h = _hazard_one(c[i], rtype[i], x[ridx[i, 0]], x[ridx[i, 1]])
        out[i] = h
        total += h
    return total


@njit(cache=True, inline="always")
def _hazard_d(ci, rt, xa, xb):
    """Hazard with its partials wrt xa and xb (same clamping as _hazard_grad)."""
    if rt == ORDER0:
        return ci, 0.0, 0.0
    if rt == ORDER1:
        return (ci * xa if xa > 0.0 else 0.0), ci, 0.0
    if rt == ORDER2:
        a = max(xa, 0.0)
        b = max(xb, 0.0)
        return ci * a * b, ci * b, ci * a
    if xa < 1.0:
        return 0.0, 0.0, 0.0
    return ci * xa * (xa - 1.0) * 0.5, ci * (xa - 0.5), 0.0


@njit(cache=True, inline="always")
def _hazard_grad(x, c, rtype, ridx, out):
    """out[i, j] = d h_i / d x_j, zero where the hazard is clamped."""
    out[:, :] = 0.0
    for i in range(c.size):
        rt = rtype[i]
        i0 = ridx[i, 0]
        if rt == ORDER1:
            out[i, i0] = c[i]
        elif rt == ORDER2:
            i1 = ridx[i, 1]
            out[i, i0] += c[i] * max(x[i1], 0.0)
            out[i, i1] += c[i] * max(x[i0], 0.0)
        elif rt == DIMER:
            if x[i0] >= 1.0:
                out[i, i0] = c[i] * (x[i0] - 0.5)


# -- public operations -------------------------------------------------------

def _as_x(state) -> np.ndarray:
    x = state.x if isinstance(state, SystemState) else np.asarray(state, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def hazards(network: ReactionNetwork, state, c=None) -> np.ndarray:
    """Vector of all reaction hazards at ``state``."""
    x = _as_x(state)
    out = np.empty(network.n_reactions)
    _hazards(x, network.rates(c), network.rtype, network.ridx, out)
    return out


def hazard(network: ReactionNetwork, state, reaction_index: int, c=None) -> float:
    """Mass-action hazard of one reaction.

    Real-valued amounts use the continuous extension of the binomial
    coefficient; the dimerisation term x(x-1)/2 is clamped at zero for x < 1.
    """
    x = _as_x(state)
    cc = network.rates(c)
    i = reaction_index
    i0, i1 = network.ridx[i]
    return float(_hazard_one(cc[i], network.rtype[i], x[i0], x[i1]))


def total_hazard(network: ReactionNetwork, state, c=None) -> float:
    return float(hazards(network, state, c).sum())


def apply_reaction(state, network: ReactionNetwork, reaction_index: int,
                   counters: dict | None = None) -> SystemState:
    """Fire one reaction: add its net-effect row, clamping tiny negatives to 0."""
    if isinstance(state, SystemState):
        t, x = state.t, state.x
    else:
        t, x = 0.0, np.asarray(state, dtype=np.float64)
    new = x + network.net_effect[reaction_index]
    if np.any(new < 0):
        new = np.maximum(new, 0.0)
        if counters is not None:
            counters["clamped"] = counters.get("clamped", 0) + 1
    return SystemState(t, new)


def autoregulatory(sc: float = 1.0) -> ReactionNetwork:
    """Two-species autoregulatory network with c = (2, sc, 1/50, 1, 1/(50 sc))."""
    if sc <= 0:
        raise ValueError("sc must be positive")
    u = np.array([[0, 0], [0, 0], [1, 0], [0, 1], [1, 1]])
    v = np.array([[1, 0], [0, 1], [0, 0], [0, 0], [0, 2]])
    c = np.array([2.0, sc, 1 / 50, 1.0, 1 / (50 * sc)])
    return ReactionNetwork(("X1", "X2"), u, v, c, ("R1", "R2", "R3", "R4", "R5"))


def equilibrium_mre(sc: float) -> np.ndarray:
    """Fixed point of the rate equations of :func:`autoregulatory`."""
    if not sc > 0:
        raise ValueError("sc must be positive")
    root = math.sqrt(1.0 + sc * sc)
    return np.array([50.0 * (1.0 + sc - root), 1.0 + root])


def make_network(species: Sequence[str], reactions: Sequence[tuple[dict, dict, float]],
                 names: Sequence[str] = ()) -> ReactionNetwork:
    """Build a network from ``(reactants, products, rate)`` with dict stoichiometry."""
    idx = {s: j for j, s in enumerate(species)}
    r, k = len(reactions), len(species)
    u = np.zeros((r, k), dtype=np.int64)
    v = np.zeros((r, k), dtype=np.int64)
    c = np.empty(r)
    for i, (lhs, rhs, rate) in enumerate(reactions):
        for s, n in lhs.items():
            u[i, idx[s]] += n
        for s, n in rhs.items():
            v[i, idx[s]] += n
        c[i] = rate
    return ReactionNetwork(tuple(species), u, v, c, tuple(names))
