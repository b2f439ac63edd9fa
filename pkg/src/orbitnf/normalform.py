"""Degree-by-degree conjugation of an orbit cocycle to its normal form.

At homogeneous degree n the conjugacy equation along the orbit reads

    S_n(k) + H_n(k+1) o A_k  =  A_k o H_n(k) + P_n(k)

with A_k the linear parts, S_n(k) the degree-n source assembled from lower
degrees, H_n the new conjugator terms, and P_n the terms the normal form is
allowed to keep.  P_n lives in the sub-resonance (admissible) slots; the
non-admissible part of H_n is determined uniquely by the twisted transfer
fixed point

    H(k) = Q(k) + Phi_k(H(k+1)),    Phi_k(R) = A_k^{-1} o R o A_k,

summed as a transported series.  In coefficient coordinates Phi_k is the
two-sided matrix action c -> mask * (Ainv_k @ c @ subst_k) where subst_k is
the monomial substitution matrix of A_k and mask keeps non-admissible slots.
The series is truncated once a power of the one-period transfer certifies a
contraction, which bounds the dropped tail.

A finite-window variant solves the same equations backward from a zero
terminal condition; it accepts flag-preserving (block-triangular) linear
parts and applies the admissible-slot projection after every transport,
which is exactly the quotient by the sub-resonance directions.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cocycle import LyapunovFrame, OrbitCocycle, lyapunov_frames, monodromy_spectrum
from .grading import Spectrum, SubResStructure, contraction_factor
from .polymap import (
    GradedSpace,
    PolyMap,
    _poly_mul,
    _poly_pow,
    compose_truncated,
    lyapunov_opnorm,
    project_subresonance,
)

MAX_SERIES_CERT_POWER = 64

LiftPolicy = Callable[[int, int], "PolyMap | None"]


class SeriesBudgetError(RuntimeError):
    """Transported series did not settle within the term budget."""


class SeriesStagnationError(RuntimeError):
    """No certified contraction for the transported series.

    Usually means epsilon is inconsistent with the spectral gap at this
    degree, or the cocycle data does not match the declared spectrum.
    """


def _monomials(dim: int, degree: int) -> tuple[tuple[int, ...], ...]:
    def rec(prefix, remaining):
        if len(prefix) == dim - 1:
            yield prefix + (remaining,)
            return
        for p in range(remaining + 1):
            yield from rec(prefix + (p,), remaining - p)

    return tuple(sorted(rec((), degree)))


def twisted_transfer(pmap: PolyMap, linear: np.ndarray, inverse: np.ndarray | None = None,
                     max_degree: int | None = None) -> PolyMap:
    """Exact polynomial form of Phi(R) = A^{-1} o R o A."""
    A = np.asarray(linear, dtype=float)
    Ainv = np.linalg.inv(A) if inverse is None else np.asarray(inverse, dtype=float)
    deg = pmap.degree if max_degree is None else max_degree
    outer = PolyMap.from_linear(Ainv, pmap.target, pmap.target, 1)
    inner = PolyMap.from_linear(A, pmap.source, pmap.source, 1)
    return compose_truncated(outer, compose_truncated(pmap, inner, deg), deg)


class _DegreeOperator:
    """Coefficient-space form of the degree-n transfer along the orbit.

    Coefficients of a homogeneous degree-n map sit in an (m, n_mono) array;
    column order is the sorted monomial list.  mask is True on slots whose
    type is non-admissible, so mask * c is the projection that drops the
    sub-resonance directions.
    """

    def __init__(self, space: GradedSpace, structure: SubResStructure, n: int,
                 linears: Sequence[np.ndarray]):
        self.space = space
        self.n = n
        self.monos = _monomials(space.dim, n)
        self.mono_index = {a: j for j, a in enumerate(self.monos)}
        admissible = structure.admissible(n)
        mask = np.ones((space.dim, len(self.monos)), dtype=bool)
        for i in range(space.dim):
            bi = space.block_of_coord[i]
            for j, alpha in enumerate(self.monos):
                if (bi, space.block_degrees(alpha)) in admissible:
                    mask[i, j] = False
        self.mask = mask
        self.linears = [np.asarray(A, dtype=float) for A in linears]
        self.ainvs = [np.linalg.inv(A) for A in self.linears]
        self.substs = [self._subst(A) for A in self.linears]

    def _subst(self, A: np.ndarray) -> np.ndarray:
        """subst[a, b] = coefficient of t^beta_b in (A t)^alpha_a."""
        dim = self.space.dim
        forms = []
        for j in range(dim):
            form = {}
            for l in range(dim):
                if A[j, l] != 0.0:
                    key = tuple(1 if idx == l else 0 for idx in range(dim))
                    form[key] = float(A[j, l])
            forms.append(form)
        pow_caches = [dict() for _ in range(dim)]
        subst = np.zeros((len(self.monos), len(self.monos)))
        one = {(0,) * dim: 1.0}
        for a, alpha in enumerate(self.monos):
            acc = one
            for j, p in enumerate(alpha):
                if p == 0:
                    continue
                acc = _poly_mul(acc, _poly_pow(forms[j], p, self.n, pow_caches[j]), self.n)
            for beta, c in acc.items():
                subst[a, self.mono_index[beta]] = c
        return subst

    def vec(self, pmap: PolyMap) -> np.ndarray:
        c = np.zeros((self.space.dim, len(self.monos)))
        for (i, alpha), v in pmap.coeffs.items():
            c[i, self.mono_index[alpha]] = v
        return c

    def polymap(self, c: np.ndarray) -> PolyMap:
        coeffs = {}
        for i in range(self.space.dim):
            for j, alpha in enumerate(self.monos):
                if c[i, j] != 0.0:
                    coeffs[(i, alpha)] = float(c[i, j])
        return PolyMap(self.space, self.space, self.n,
                       np.zeros(self.space.dim), coeffs)

    def apply(self, k: int, c: np.ndarray) -> np.ndarray:
        """Masked transfer of a coefficient array through step k."""
        return self.mask * (self.ainvs[k] @ c @ self.substs[k])

    def source(self, k: int, s_vec: np.ndarray) -> np.ndarray:
        """Masked twisted source Q(k) = proj_N(Ainv_k o proj_N(S))."""
        return self.mask * (self.ainvs[k] @ (self.mask * s_vec))

    def phi_matrix(self, k: int) -> np.ndarray:
        """Dense matrix of apply(k, .) on row-major flattened coefficients."""
        M = np.kron(self.ainvs[k], self.substs[k].T)
        return self.mask.ravel()[:, None] * M


def _series_certificate(op: _DegreeOperator, period: int) -> tuple[int, float]:
    """Smallest power-of-two q with every q-period transfer norm below one."""
    phis = [op.phi_matrix(k) for k in range(period)]
    psis = []
    for p in range(period):
        P = np.eye(phis[0].shape[0])
        for j in range(period):
            P = P @ phis[(p + j) % period]
        psis.append(P)
    q = 1
    while q <= MAX_SERIES_CERT_POWER:
        rho = 0.0
        for P in psis:
            s = np.linalg.norm(P, ord=2)
            rho = max(rho, float(s) if np.isfinite(s) else np.inf)
        if rho < 1.0:
            return q, rho
        psis = [P @ P for P in psis]
        q *= 2
    raise SeriesStagnationError(
        "transported series has no certified contraction up to "
        f"{MAX_SERIES_CERT_POWER} periods; epsilon and spectrum are inconsistent "
        "with this cocycle"
    )


def _run_series(op: _DegreeOperator, q_vecs: list[np.ndarray], series_tol: float,
                max_terms: int, period: int) -> tuple[list[np.ndarray], dict]:
    info = {
        "short_circuit": False,
        "series_terms": 0,
        "certificate_q": None,
        "certificate_rho": None,
        "tail_bound": 0.0,
        "measured_period_ratio": None,
    }
    if all(not np.any(q) for q in q_vecs):
        info["short_circuit"] = True
        return [np.zeros_like(q) for q in q_vecs], info

    q_cert, rho = _series_certificate(op, period)
    info["certificate_q"] = q_cert
    info["certificate_rho"] = rho
    chunk_len = q_cert * period

    H = [np.zeros_like(q) for q in q_vecs]
    terms = [q.copy() for q in q_vecs]
    chunk = [0.0] * period
    prev_chunk = None
    n_terms = 0
    steps_in_chunk = 0
    while True:
        for k in range(period):
            H[k] += terms[k]
            chunk[k] += float(np.linalg.norm(terms[k]))
        n_terms += 1
        steps_in_chunk += 1
        if steps_in_chunk == chunk_len:
            tail = max(chunk) * rho / (1.0 - rho)
            scale = max(1.0, max(float(np.linalg.norm(h)) for h in H))
            if tail <= series_tol * scale:
                info["series_terms"] = n_terms
                info["tail_bound"] = tail
                if prev_chunk is not None:
                    ratios = [c / p for c, p in zip(chunk, prev_chunk) if p > 0.0]
                    if ratios:
                        info["measured_period_ratio"] = max(ratios) ** (1.0 / q_cert)
                return H, info
            prev_chunk = chunk
            chunk = [0.0] * period
            steps_in_chunk = 0
        if n_terms > max_terms:
            raise SeriesBudgetError(
                f"series for degree {op.n} did not settle within {max_terms} terms"
            )
        terms = [op.apply(k, terms[(k + 1) % period]) for k in range(period)]


@dataclass(eq=False)
class SolverContext:
    """Everything the degree loop needs, validated once.

    The periodic solver requires a grading-adapted cocycle: the coordinate
    blocks are the splitting, so the linear parts must be block diagonal and
    their block sizes must match the spectrum multiplicities.
    """

    cocycle: OrbitCocycle
    spectrum: Spectrum
    structure: SubResStructure
    frames: tuple[LyapunovFrame, ...]
    order: int
    series_tol: float = 1e-13
    max_series_terms: int = 10_000
    lift_policy: LiftPolicy | None = None
    require_adapted: bool = True

    def __post_init__(self):
        if not self.cocycle.periodic:
            raise ValueError("the periodic solver needs a periodic cocycle")
        if self.order < max(1, self.structure.degree_bound):
            raise ValueError(
                f"order {self.order} is below the degree bound {self.structure.degree_bound}"
            )
        if self.spectrum.multiplicities != self.cocycle.space.block_dims:
            raise ValueError(
                "spectrum multiplicities do not match the coordinate grading"
            )
        if len(self.frames) != self.cocycle.period:
            raise ValueError("need one frame per orbit point")
        if self.order >= 2:
            contraction_factor(self.spectrum, self.order)
        if self.require_adapted:
            space = self.cocycle.space
            for k in range(self.cocycle.period):
                A = self.cocycle.linear(k)
                off = A.copy()
                for i in range(1, space.n_blocks + 1):
                    sl = space.block_slice(i)
                    off[sl, sl] = 0.0
                if np.max(np.abs(off)) > 1e-12 * max(1.0, float(np.max(np.abs(A)))):
                    raise ValueError(
                        f"fiber map {k} is not grading-adapted "
                        "(linear part has off-block entries)"
                    )
        self._operators: dict[int, _DegreeOperator] = {}
        self._linears = [self.cocycle.linear(k) for k in range(self.cocycle.period)]

    @classmethod
    def prepare(cls, cocycle: OrbitCocycle, epsilon: float, order: int, *,
                resonance_tol: float = 1e-9, cluster_tol: float = 1e-6,
                tail_tol: float = 1e-12, series_tol: float = 1e-13,
                max_series_terms: int = 10_000,
                lift_policy: LiftPolicy | None = None) -> "SolverContext":
        """Extract spectrum and frames from the cocycle, then build a context."""
        spectrum, bases = monodromy_spectrum(cocycle, epsilon, resonance_tol, cluster_tol)
        frames = lyapunov_frames(cocycle, spectrum, bases, tail_tol)
        structure = SubResStructure.from_spectrum(spectrum)
        return cls(cocycle, spectrum, structure, frames, order,
                   series_tol=series_tol, max_series_terms=max_series_terms,
                   lift_policy=lift_policy)

    def operator(self, n: int) -> _DegreeOperator:
        if n not in self._operators:
            self._operators[n] = _DegreeOperator(
                self.cocycle.space, self.structure, n, self._linears
            )
        return self._operators[n]


def _degree_source(ctx: SolverContext, n: int, h_maps: list[PolyMap],
                   p_maps: list[PolyMap]) -> list[PolyMap]:
    K = ctx.cocycle.period
    out = []
    for k in range(K):
        F_k = ctx.cocycle.map_at(k)
        lhs = compose_truncated(h_maps[(k + 1) % K], F_k, n).homogeneous_part(n)
        rhs = compose_truncated(p_maps[k], h_maps[k], n).homogeneous_part(n)
        out.append(lhs - rhs)
    return out


def assemble_Q(ctx: SolverContext, n: int, h_maps: list[PolyMap],
               p_maps: list[PolyMap]) -> tuple[list[PolyMap], list[PolyMap]]:
    """Degree-n sources S(k) and their masked twisted versions Q(k)."""
    s_list = _degree_source(ctx, n, h_maps, p_maps)
    op = ctx.operator(n)
    q_list = [op.polymap(op.source(k, op.vec(s))) for k, s in enumerate(s_list)]
    return s_list, q_list


def apply_lift(ctx: SolverContext, n: int, Hn: list[PolyMap]) -> list[PolyMap]:
    """Add the admissible part of the lift policy to the degree-n conjugator."""
    if ctx.lift_policy is None or n > ctx.structure.degree_bound:
        return Hn
    out = list(Hn)
    for k in range(ctx.cocycle.period):
        lift = ctx.lift_policy(k, n)
        if lift is None:
            continue
        lift_n = lift.homogeneous_part(n)
        s_part, _ = project_subresonance(lift_n, ctx.structure)
        if s_part.coeffs:
            out[k] = out[k] + s_part
    return out


def finalize_degree(ctx: SolverContext, n: int, s_list: list[PolyMap],
                    Hn: list[PolyMap]) -> tuple[list[PolyMap], float, float]:
    """Normal form terms implied by a degree-n conjugator, plus residues.

    Returns (P_n, admissible violation, defect): below the degree bound the
    non-admissible residue of the defining formula is the violation; above it
    the whole formula value is a defect since P_n is forced to vanish.
    """
    K = ctx.cocycle.period
    space = ctx.cocycle.space
    d = ctx.structure.degree_bound
    Pn = []
    violation = 0.0
    defect = 0.0
    for k in range(K):
        A_map = PolyMap.from_linear(ctx._linears[k], space, space, 1)
        term = s_list[k] + compose_truncated(Hn[(k + 1) % K], A_map, n) \
            - compose_truncated(A_map, Hn[k], n)
        if n <= d:
            s_part, n_part = project_subresonance(term, ctx.structure)
            Pn.append(s_part)
            violation = max(violation, n_part.coeff_max())
        else:
            Pn.append(PolyMap.zero(space, space, n))
            defect = max(defect, term.coeff_max())
    return Pn, violation, defect


def solve_homogeneous_degree(ctx: SolverContext, n: int, h_maps: list[PolyMap],
                             p_maps: list[PolyMap]
                             ) -> tuple[list[PolyMap], list[PolyMap], dict]:
    """One degree of the normal form: new H_n, P_n and series diagnostics."""
    K = ctx.cocycle.period
    d = ctx.structure.degree_bound
    op = ctx.operator(n)

    s_list = _degree_source(ctx, n, h_maps, p_maps)
    s_vecs = [op.vec(s) for s in s_list]
    q_vecs = [op.source(k, sv) for k, sv in enumerate(s_vecs)]
    h_vecs, info = _run_series(op, q_vecs, ctx.series_tol, ctx.max_series_terms, K)
    Hn = apply_lift(ctx, n, [op.polymap(v) for v in h_vecs])

    diag = dict(info)
    diag["degree"] = n
    diag["source_norm"] = max((s.coeff_l2() for s in s_list), default=0.0)
    diag["solution_norm"] = max((h.coeff_l2() for h in Hn), default=0.0)
    diag["contraction_factor"] = contraction_factor(ctx.spectrum, n) if n >= 2 else None

    Pn, violation, defect = finalize_degree(ctx, n, s_list, Hn)
    diag["admissible_violation"] = violation if n <= d else None
    diag["defect"] = defect if n > d else None

    lyap = 0.0
    for k in range(K):
        if Hn[k].coeffs:
            lyap = max(lyap, lyapunov_opnorm(Hn[k], ctx.frames[k], ctx.frames[k],
                                             samples=512, refine=2, seed=0))
    diag["lyapunov_norm"] = lyap
    return Hn, Pn, diag


@dataclass(eq=False)
class NormalFormResult:
    """Conjugator and normal form at every orbit point, plus solve telemetry."""

    conjugator: tuple[PolyMap, ...]
    normal_form: tuple[PolyMap, ...]
    spectrum: Spectrum
    structure: SubResStructure
    order: int
    diagnostics: dict

    @property
    def period(self) -> int:
        return len(self.conjugator)

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "spectrum": self.spectrum.to_dict(),
            "structure": self.structure.to_dict(),
            "conjugator": [pm.to_dict() for pm in self.conjugator],
            "normal_form": [pm.to_dict() for pm in self.normal_form],
            "diagnostics": self.diagnostics,
        }


def solve_normal_form(ctx: SolverContext) -> NormalFormResult:
    """Run the degree loop 2..order and assemble the result."""
    K = ctx.cocycle.period
    space = ctx.cocycle.space
    d = ctx.structure.degree_bound
    h_maps = [PolyMap.identity(space, ctx.order) for _ in range(K)]
    p_maps = [PolyMap.from_linear(ctx._linears[k], space, space, 1) for k in range(K)]

    degree_diags = []
    for n in range(2, ctx.order + 1):
        Hn, Pn, diag = solve_homogeneous_degree(ctx, n, h_maps, p_maps)
        for k in range(K):
            if Hn[k].coeffs:
                h_maps[k] = h_maps[k] + Hn[k]
            if n <= d and Pn[k].coeffs:
                p_maps[k] = p_maps[k] + Pn[k]
        degree_diags.append(diag)

    diagnostics = {
        "order": ctx.order,
        "period": K,
        "degree_bound": d,
        "spectral_gap": ctx.structure.spectral_gap,
        "epsilon": ctx.spectrum.epsilon,
        "degrees": degree_diags,
    }
    return NormalFormResult(
        conjugator=tuple(h_maps),
        normal_form=tuple(p_maps),
        spectrum=ctx.spectrum,
        structure=ctx.structure,
        order=ctx.order,
        diagnostics=diagnostics,
    )


def _flag_preserving_check(space: GradedSpace, A: np.ndarray, tol: float = 1e-10) -> bool:
    scale = max(1.0, float(np.max(np.abs(A))))
    for i in range(space.dim):
        for j in range(space.dim):
            if space.block_of_coord[i] > space.block_of_coord[j]:
                if abs(A[i, j]) > tol * scale:
                    return False
    return True


def solve_window(fiber_maps: Sequence[PolyMap], structure: SubResStructure,
                 order: int, *, growth_guard: float = 1e9
                 ) -> tuple[list[PolyMap], list[PolyMap], dict]:
    """Normal form along a finite orbit window, zero terminal condition.

    Accepts flag-preserving linear parts (block triangular against the
    grading).  Every transport is followed by the projection that drops
    admissible slots, which solves the conjugacy equation in the quotient by
    the sub-resonance directions; the dropped part is exactly what the
    degree-n normal form term absorbs.  Reliable near the window start; the
    terminal truncation error decays at the per-degree contraction rate.
    """
    fiber_maps = list(fiber_maps)
    if not fiber_maps:
        raise ValueError("window needs at least one fiber map")
    space = fiber_maps[0].source
    W = len(fiber_maps)
    linears = []
    for k, pm in enumerate(fiber_maps):
        if pm.source != space or pm.target != space:
            raise ValueError(f"window map {k} is not over a common space")
        if np.max(np.abs(pm.constant)) > 0.0:
            raise ValueError(f"window map {k} does not fix the origin")
        A = pm.linear_matrix()
        if not _flag_preserving_check(space, A):
            raise ValueError(
                f"window map {k} has a below-flag linear entry; the projected "
                "sweep is only valid for flag-preserving cocycles"
            )
        linears.append(A)

    d = structure.degree_bound
    h = [PolyMap.identity(space, order) for _ in range(W + 1)]
    p = [PolyMap.from_linear(A, space, space, 1) for A in linears]
    per_degree = []
    for n in range(2, order + 1):
        op = _DegreeOperator(space, structure, n, linears)
        s_vecs = []
        for k in range(W):
            lhs = compose_truncated(h[k + 1], fiber_maps[k], n).homogeneous_part(n)
            rhs = compose_truncated(p[k], h[k], n).homogeneous_part(n)
            s_vecs.append(op.vec(lhs - rhs))
        q_vecs = [op.source(k, sv) for k, sv in enumerate(s_vecs)]
        q_scale = max(1.0, max(float(np.linalg.norm(q)) for q in q_vecs))

        R = [None] * (W + 1)
        R[W] = np.zeros_like(q_vecs[0])
        max_norm = 0.0
        for k in range(W - 1, -1, -1):
            R[k] = q_vecs[k] + op.apply(k, R[k + 1])
            nrm = float(np.linalg.norm(R[k]))
            max_norm = max(max_norm, nrm)
            if nrm > growth_guard * q_scale:
                raise SeriesStagnationError(
                    f"window sweep diverged at degree {n}, step {k}"
                )
        Hn = [op.polymap(R[k]) for k in range(W + 1)]
        for k in range(W):
            A_map = PolyMap.from_linear(linears[k], space, space, 1)
            term = op.polymap(s_vecs[k]) + compose_truncated(Hn[k + 1], A_map, n) \
                - compose_truncated(A_map, Hn[k], n)
            if n <= d:
                s_part, _ = project_subresonance(term, structure)
                if s_part.coeffs:
                    p[k] = p[k] + s_part
            if Hn[k].coeffs:
                h[k] = h[k] + Hn[k]
        per_degree.append({"degree": n, "max_sweep_norm": max_norm})
    return h, p, {"window": W, "per_degree": per_degree}
