"""Covariance matrix adaptation evolution strategy (CMA-ES).

A full-covariance (mu/mu_w, lambda)-CMA-ES with cumulative step-size
adaptation and a rank-one + active rank-mu covariance update: the worse half
of each population gets negative recombination weights in the covariance
update (never in the mean update), bounded so that the covariance stays
positive definite. Default hyperparameters are the standard published ones.

Everything after sampling depends on the candidates only through their
ranks and through the sampled steps ``y = (x - m) / sigma``, which are kept
from :meth:`CMAES.ask`. As a consequence the search is exactly invariant
under strictly increasing transforms of the objective, and its internal
state (step size, covariance, paths) is exactly invariant under translation.

Example
-------
>>> import numpy as np
>>> cfg = CmaesConfig(dim=4, sigma0=1.0, mean0=np.full(4, 3.0), max_evals=5000, seed=1)
>>> x, f, hist = minimize(lambda v: float(v @ v), cfg)
>>> f < 1e-9
True
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, TextIO

import numpy as np

from .errors import DegenerateCovariance, LengthMismatch, NonFiniteFitness

__all__ = ["CmaesConfig", "CMAES", "minimize", "jacobi_eigh"]


# -- symmetric eigendecomposition ------------------------------------------------

def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings of 0..m-1 (m even) so that every pair meets once per sweep."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        half = m // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


_ROUNDS_CACHE: dict[int, list] = {}


def jacobi_eigh(a: np.ndarray, basis: Optional[np.ndarray] = None, max_sweeps: int = 50):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Disjoint index pairs are rotated simultaneously (round-robin ordering),
    so each round is a handful of vectorized row/column updates.

    Parameters
    ----------
    a : (n, n) symmetric array
    basis : optional (n, n) orthogonal array
        Warm start. The rotations are run on ``basis.T @ a @ basis``, which
        is nearly diagonal when ``a`` changed little since ``basis`` was
        computed.
    max_sweeps : int

    Returns
    -------
    eigenvalues : (n,) array, ascending
    eigenvectors : (n, n) array, columns are eigenvectors
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if basis is not None:
        a = basis.T @ a @ basis
    m = n + (n % 2)
    work = np.zeros((m, m))
    work[:n, :n] = (a + a.T) / 2.0
    vecs = np.eye(m)
    if m not in _ROUNDS_CACHE:
        _ROUNDS_CACHE[m] = _round_robin(m)
    rounds = _ROUNDS_CACHE[m]
    if not np.any(work):
        vals = np.zeros(n)
        out = np.eye(n) if basis is None else basis.copy()
        return vals, out
    eps = np.finfo(float).eps

    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            apq = work[p, q]
            app, aqq = work[p, p], work[q, q]
            # entries below round-off relative to the diagonal are left alone
            active = np.abs(apq) > eps * 0.5 * (np.abs(app) + np.abs(aqq))
            active &= apq != 0.0
            if not active.any():
                continue
            rotated = True
            safe = np.where(active, apq, 1.0)
            theta = (aqq - app) / (2.0 * safe)
            t = np.where(theta == 0.0, 1.0, np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0)))
            c = 1.0 / np.hypot(t, 1.0)
            s = np.where(active, t * c, 0.0)
            c = np.where(active, c, 1.0)

            cp, cq = work[:, p], work[:, q]
            work[:, p], work[:, q] = c * cp - s * cq, s * cp + c * cq
            rp, rq = work[p, :], work[q, :]
            work[p, :], work[q, :] = c[:, None] * rp - s[:, None] * rq, s[:, None] * rp + c[:, None] * rq
            vp, vq = vecs[:, p], vecs[:, q]
            vecs[:, p], vecs[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break

    vals = np.diag(work)[:n].copy()
    vecs = vecs[:n, :n]
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    if basis is not None:
        vecs = basis @ vecs
    return vals, vecs


# -- configuration and state -----------------------------------------------------

def default_population(dim: int) -> int:
    return 4 + int(math.floor(3.0 * math.log(dim)))


@dataclass
class CmaesConfig:
    """Run parameters.

    ``f_tol`` stops a run once both the spread of the current generation's
    fitnesses and the spread of recent best values fall below it.
    ``f_target`` (optional) stops as soon as the best value reaches it, and
    ``x_tol`` stops when the largest sampling standard deviation does.
    """

    dim: int
    sigma0: float = 1.0
    mean0: Optional[np.ndarray] = None
    population: Optional[int] = None
    max_evals: int = 10_000
    f_tol: float = 1e-12
    seed: int = 0
    f_target: Optional[float] = None
    x_tol: float = 1e-12

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.population is None:
            self.population = default_population(self.dim)
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be > 0")
        if self.mean0 is None:
            self.mean0 = np.zeros(self.dim)
        self.mean0 = np.asarray(self.mean0, dtype=np.float64).copy()
        if self.mean0.shape != (self.dim,):
            raise ValueError(f"mean0 must have shape ({self.dim},)")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class _Sample:
    candidates: np.ndarray
    steps: np.ndarray  # y = B D n, so candidates = mean + sigma * steps


class CMAES:
    """Ask/tell interface.

    Attributes ``mean``, ``sigma``, ``C``, ``p_sigma``, ``p_c``, ``B`` and
    ``D`` (square roots of the eigenvalues of ``C``) form the search state;
    ``best_x``/``best_f`` track the best point evaluated so far.
    """

    def __init__(self, config: CmaesConfig):
        self.config = config
        n = config.dim
        lam = config.population
        self.dim, self.lam = n, lam
        self.mu = lam // 2
        raw = math.log((lam + 1) / 2.0) - np.log(np.arange(1, lam + 1))
        pos, neg = raw[: self.mu], raw[self.mu:]
        self.weights = pos / pos.sum()
        self.mu_eff = 1.0 / np.sum(self.weights**2)
        mu_eff_neg = neg.sum() ** 2 / np.sum(neg**2) if np.any(neg) else 0.0

        self.c_sigma = (self.mu_eff + 2.0) / (n + self.mu_eff + 5.0)
        self.d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((self.mu_eff - 1.0) / (n + 1.0)) - 1.0) + self.c_sigma
        self.c_c = (4.0 + self.mu_eff / n) / (n + 4.0 + 2.0 * self.mu_eff / n)
        self.c_1 = 2.0 / ((n + 1.3) ** 2 + self.mu_eff)
        self.c_mu = min(
            1.0 - self.c_1,
            2.0 * (self.mu_eff - 2.0 + 1.0 / self.mu_eff) / ((n + 2.0) ** 2 + self.mu_eff),
        )
        # negative weights, capped so that C stays positive definite
        scale = min(
            1.0 + self.c_1 / self.c_mu,
            1.0 + 2.0 * mu_eff_neg / (self.mu_eff + 2.0),
            (1.0 - self.c_1 - self.c_mu) / (n * self.c_mu),
        )
        neg_sum = -neg.sum()
        self.neg_weights = scale * neg / neg_sum if neg_sum > 0 else np.zeros_like(neg)
        self.chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))

        self.mean = config.mean0.copy()
        self.sigma = float(config.sigma0)
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.p_sigma = np.zeros(n)
        self.p_c = np.zeros(n)
        self.generation = 0
        self.evals = 0
        self.best_x: Optional[np.ndarray] = None
        self.best_f = math.inf
        self._eigen_evals = 0
        self._eigen_updates = 0
        self._last: Optional[_Sample] = None

    # ask/tell -------------------------------------------------------------------

    def _check_degenerate(self):
        dmax = float(np.max(self.D))
        if not (np.all(np.isfinite(self.D)) and math.isfinite(self.sigma)):
            raise DegenerateCovariance("non-finite step size or covariance")
        if np.min(self.D) ** 2 < 1e-14 * dmax**2:
            raise DegenerateCovariance(
                f"covariance condition number exceeds 1e14 at generation {self.generation}"
            )
        if self.sigma * dmax < 1e-280:
            raise DegenerateCovariance(f"step size collapsed to {self.sigma:.3g}")

    def ask(self) -> np.ndarray:
        """Sample ``population`` candidates as rows of an array.

        The random stream is derived from ``(seed, generation)``, so asking
        twice before telling returns the same candidates.
        """
        self._check_degenerate()
        rng = np.random.default_rng([self.config.seed, self.generation])
        z = rng.standard_normal((self.lam, self.dim))
        steps = (z * self.D) @ self.B.T
        cands = self.mean + self.sigma * steps
        self._last = _Sample(cands.copy(), steps)
        return cands

    def tell(self, candidates, fitnesses) -> None:
        cands = np.asarray(candidates, dtype=np.float64)
        fit = np.asarray(fitnesses, dtype=np.float64).ravel()
        if cands.shape != (self.lam, self.dim) or fit.shape != (self.lam,):
            raise LengthMismatch(
                f"expected {self.lam} candidates of dim {self.dim} and {self.lam} fitnesses"
            )
        if np.any(np.isnan(fit)) or np.any(fit == -np.inf):
            raise NonFiniteFitness("fitness values must be finite or +inf")

        if self._last is not None and np.array_equal(cands, self._last.candidates):
            steps = self._last.steps
        else:
            steps = (cands - self.mean) / self.sigma

        self.evals += self.lam
        order = np.argsort(fit, kind="stable")
        if fit[order[0]] < self.best_f:
            self.best_f = float(fit[order[0]])
            self.best_x = cands[order[0]].copy()

        n = self.dim
        sel = steps[order[: self.mu]]
        y_w = self.weights @ sel
        self.mean = self.mean + self.sigma * y_w

        inv_sqrt_c = (self.B / self.D) @ self.B.T
        self.p_sigma = (1.0 - self.c_sigma) * self.p_sigma + math.sqrt(
            self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff
        ) * (inv_sqrt_c @ y_w)
        ps_norm = float(np.linalg.norm(self.p_sigma))
        h_sigma = ps_norm / math.sqrt(
            1.0 - (1.0 - self.c_sigma) ** (2 * (self.generation + 1))
        ) < (1.4 + 2.0 / (n + 1.0)) * self.chi_n
        self.p_c = (1.0 - self.c_c) * self.p_c
        if h_sigma:
            self.p_c += math.sqrt(self.c_c * (2.0 - self.c_c) * self.mu_eff) * y_w

        delta_h = (1.0 - float(h_sigma)) * self.c_c * (2.0 - self.c_c)
        rank_mu = (sel.T * self.weights) @ sel
        worse = steps[order[self.mu:]]
        if np.any(self.neg_weights):
            # rescale bad steps to length sqrt(n) in the C^{-1/2} metric
            mahal = np.sum((worse @ self.B / self.D) ** 2, axis=1)
            w_neg = self.neg_weights * n / np.maximum(mahal, 1e-300)
            rank_mu += (worse.T * w_neg) @ worse
        w_total = 1.0 + float(self.neg_weights.sum())
        self.C = (
            (1.0 + self.c_1 * delta_h - self.c_1 - self.c_mu * w_total) * self.C
            + self.c_1 * np.outer(self.p_c, self.p_c)
            + self.c_mu * rank_mu
        )
        self.C = (self.C + self.C.T) / 2.0

        self.sigma *= math.exp((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0))
        self.generation += 1
        self._last = None

        if self.evals - self._eigen_evals > self.lam / (self.c_1 + self.c_mu) / n / 10.0:
            self._update_eigen()

    def _update_eigen(self):
        self._eigen_evals = self.evals
        warm = self.B if self._eigen_updates % 50 else None
        vals, vecs = jacobi_eigh(self.C, basis=warm)
        self._eigen_updates += 1
        if vals[0] <= 0.0 or not np.all(np.isfinite(vals)):
            raise DegenerateCovariance(f"covariance lost positive definiteness: min eig {vals[0]:.3g}")
        self.B = vecs
        self.D = np.sqrt(vals)

    # stopping -------------------------------------------------------------------

    @property
    def max_std(self) -> float:
        return self.sigma * float(np.sqrt(np.max(np.diag(self.C))))


def minimize(
    f: Callable[[np.ndarray], float],
    config: CmaesConfig,
    vectorized: bool = False,
    trace: Optional[TextIO] = None,
):
    """Minimize ``f`` with CMA-ES.

    Parameters
    ----------
    f : callable
        Objective. Receives one candidate vector, or the whole population as
        rows of an array when ``vectorized`` is true (and then returns one
        value per row). ``+inf`` rejects a candidate.
    config : CmaesConfig
    vectorized : bool
    trace : file-like, optional
        Receives CSV lines ``generation,evals,sigma,f_best``.

    Returns
    -------
    x_best, f_best, history
        ``history[g]`` is the best value seen up to generation ``g``.
    """
    es = CMAES(config)
    if config.max_evals < es.lam:
        raise ValueError(f"max_evals={config.max_evals} is below the population size {es.lam}")
    history: list[float] = []
    window = 10 + int(math.ceil(30.0 * es.dim / es.lam))
    gen_bests: list[float] = []
    if trace is not None:
        trace.write("generation,evals,sigma,f_best\n")

    while es.evals + es.lam <= config.max_evals:
        cands = es.ask()
        if vectorized:
            fit = np.asarray(f(cands), dtype=np.float64).ravel()
        else:
            fit = np.array([f(c) for c in cands], dtype=np.float64)
        es.tell(cands, fit)
        history.append(es.best_f)
        gen_bests.append(float(np.min(fit)))
        if trace is not None:
            trace.write(f"{es.generation},{es.evals},{es.sigma!r},{es.best_f!r}\n")

        if config.f_target is not None and es.best_f <= config.f_target:
            break
        spread = float(np.max(fit) - np.min(fit))
        recent = gen_bests[-window:]
        if (
            len(gen_bests) >= window
            and spread < config.f_tol
            and max(recent) - min(recent) < config.f_tol
        ):
            break
        if es.max_std < config.x_tol:
            break
    return es.best_x, es.best_f, history
