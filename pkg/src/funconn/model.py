"""Time-varying edge probabilities driven by windowed pair scores.

Each window moves a pair's edge probability up (positive score), down
(non-positive score) or leaves it to decay (no information). The four
dynamics parameters are fitted by projected gradient descent on the error
of predicting the sign of the next score from the current probability.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._io import fmt_float, read_kv
from .scoring import PairStatus, ScoreTable, Status, grouping_bin
from .validation import check_interval, check_score_tables

logger = logging.getLogger(__name__)

PARAM_NAMES = ("alpha", "beta", "d", "k")


@dataclass(frozen=True)
class ModelParams:
    alpha: float = 0.1
    beta: float = 0.1
    d: float = 0.999
    k: float = 0.9
    th: float = 0.5
    p0: float = 0.5

    def __post_init__(self):
        check_interval("alpha", self.alpha, 0, math.inf)
        check_interval("beta", self.beta, 0, math.inf)
        check_interval("d", self.d, 0, 1)
        check_interval("k", self.k, 0, 1)
        check_interval("th", self.th, 0, 1, open_lo=True, open_hi=True)
        check_interval("p0", self.p0, 0, 1)
        for name in ("alpha", "beta", "d", "k", "th", "p0"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.d, self.k])

    def with_vector(self, v) -> "ModelParams":
        return replace(self, **dict(zip(PARAM_NAMES, map(float, v))))

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for k, v in asdict(self).items():
                fh.write(f"{k}={fmt_float(v)}\n")

    @classmethod
    def read(cls, path) -> "ModelParams":
        kv = read_kv(path)
        unknown = set(kv) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in kv.items()})


@dataclass(frozen=True)
class FitConfig:
    """``convergence_tol`` is relative to the error at the initial point."""

    learning_rate: float = 0.01
    max_iterations: int = 500
    convergence_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        check_interval("learning_rate", self.learning_rate, 0, math.inf, open_lo=True)
        check_interval("convergence_tol", self.convergence_tol, 0, math.inf, open_lo=True)
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class ProbabilitySeries:
    pair: tuple[str, str]
    p: np.ndarray


@dataclass(frozen=True, eq=False)
class TopologySnapshot:
    window: int
    nodes: tuple[str, ...]
    edges: np.ndarray
    edge_threshold: float

    @property
    def edge_set(self) -> set[tuple[str, str]]:
        return {(self.nodes[a], self.nodes[b]) for a, b in self.edges.tolist()}

    def write(self, dest) -> None:
        dest.write(f"# window={self.window} edge_threshold={fmt_float(self.edge_threshold)}\n")
        dest.write("node_a,node_b\n")
        for lo in range(0, len(self.edges), 100_000):
            chunk = self.edges[lo:lo + 100_000].tolist()
            dest.writelines(f"{self.nodes[a]},{self.nodes[b]}\n" for a, b in chunk)


# -- scalar dynamics ---------------------------------------------------------

def h(s: float, alpha: float, beta: float) -> float:
    """Evidence strength ``alpha + beta * ln(1 + s)`` clipped to ``[0, 1]``."""
    if not s > 0:
        raise ValueError("h is defined for positive scores only")
    return min(1.0, max(0.0, alpha + beta * math.log1p(s)))


def update_probability(p: float, entry: PairStatus, params: ModelParams,
                       decay_on_silence: bool = True) -> float:
    if entry.status == Status.POSITIVE:
        hv = h(entry.score, params.alpha, params.beta)
        # p + h(1 - p) == 1 - (1 - p)(1 - h), written so rounding never drops below p
        return params.d * (p + hv * (1.0 - p))
    if entry.status == Status.NON_POSITIVE:
        return params.d * params.k * p
    return params.d * p if decay_on_silence else p


def evolve(statuses, params: ModelParams, decay_on_silence: bool = True,
           pair: tuple[str, str] = ("", "")) -> ProbabilitySeries:
    """Probability trajectory ``p[0] = p0``, ``p[t] = update(p[t-1], statuses[t-1])``."""
    p = [params.p0]
    for entry in statuses:
        p.append(update_probability(p[-1], entry, params, decay_on_silence))
    return ProbabilitySeries(pair, np.array(p))


# -- compact per-pair history ------------------------------------------------

class PairHistory:
    """All informative pair-windows of a run, indexed for fast forward passes.

    Pairs that co-occur in at least one window are tracked explicitly as
    entries ``(window, pair, status, score)``. Every other pair is
    non-positive whenever both nodes are active, so its trajectory depends
    only on the window index and how many co-active windows preceded it;
    those pair-windows are kept as counts per ``(window, prior co-active)``.
    """

    def __init__(self, tables):
        tables = check_score_tables(tables)
        self.nodes = tables[0].nodes
        N = len(self.nodes)
        W = self.n_windows = len(tables)

        rows = np.concatenate([t.active for t in tables]) if W else np.empty(0, np.int64)
        cols = np.repeat(np.arange(W), [t.active.size for t in tables])
        vals = np.concatenate([t.counts for t in tables])
        self.counts = sp.csr_matrix((vals, (rows, cols)), shape=(N, W), dtype=np.int64)
        self.activity = (self.counts > 0).astype(np.int32).tocsr()

        keys = [t.pairs[:, 0] * N + t.pairs[:, 1] for t in tables]
        self.keys = np.unique(np.concatenate(keys)) if keys else np.empty(0, np.int64)
        P = self.keys.size
        self.pairs = np.column_stack((self.keys // N, self.keys % N))

        # co-active windows of every tracked pair
        both = self.activity[self.pairs[:, 0]].multiply(self.activity[self.pairs[:, 1]]).tocoo()
        order = np.lexsort((both.row, both.col))
        e_pair = both.row[order].astype(np.int64)
        e_win = both.col[order].astype(np.int64)
        self.starts = np.searchsorted(e_win, np.arange(W + 1))

        score = np.empty(e_pair.size)
        explicit = np.zeros(e_pair.size, dtype=bool)
        for w, t in enumerate(tables):
            lo, hi = self.starts[w], self.starts[w + 1]
            if hi == lo:
                continue
            sub = e_pair[lo:hi]
            if t.pairs.shape[0]:
                tp = np.searchsorted(self.keys, keys[w])
                pos = lo + np.searchsorted(sub, tp)
                score[pos] = t.scores
                explicit[pos] = True
            rest = np.flatnonzero(~explicit[lo:hi]) + lo
            if rest.size:
                a, b = self.pairs[e_pair[rest], 0], self.pairs[e_pair[rest], 1]
                bins = grouping_bin(_lookup(t, a), _lookup(t, b))
                lut = np.zeros(max(t.zero_scores) + 1)
                for kb, v in t.zero_scores.items():
                    lut[kb] = v
                score[rest] = lut[bins]
        code = np.where(score > 0, int(Status.POSITIVE), int(Status.NON_POSITIVE)).astype(np.int8)
        prior = _running_count(e_pair, P)
        # within a window: non-positive entries first, so both kinds are slices
        order = np.lexsort((e_pair, code, e_win))
        self.e_pair, self.e_score, self.e_code = e_pair[order], score[order], code[order]
        self.e_prior, e_win = prior[order], e_win[order]
        self.mids = np.searchsorted(e_win * 3 + self.e_code,
                                    np.arange(W) * 3 + int(Status.POSITIVE))
        self.e_h = np.log1p(np.where(self.e_score > 0, self.e_score, 0.0))
        self._implicit_histogram(e_win)

    @property
    def n_pairs(self) -> int:
        return int(self.keys.size)

    @property
    def n_terms(self) -> int:
        """Number of informative pair-windows (explicit entries plus implicit counts)."""
        return int(self.e_pair.size + self.imp_count.sum())

    def _implicit_histogram(self, e_win):
        W = self.n_windows
        act = self.activity.tocsc()
        hist: dict[tuple[int, int], int] = {}
        for w in range(W):
            S = act[:, w].indices
            if S.size < 2:
                continue
            prior = act[S, :w]
            G = (prior @ prior.T).toarray() if w else np.zeros((S.size, S.size), np.int64)
            iu = np.triu_indices(S.size, k=1)
            for m, c in enumerate(np.bincount(G[iu]).tolist()):
                if c:
                    hist[(w, m)] = hist.get((w, m), 0) + c
        # remove the explicitly tracked pair-windows
        if e_win.size:
            wm, c = np.unique(np.column_stack((e_win, self.e_prior)), axis=0, return_counts=True)
            for (w, m), n in zip(wm.tolist(), c.tolist()):
                hist[(w, m)] -= n
        items = sorted((k, v) for k, v in hist.items() if v)
        self.imp_w = np.array([k[0] for k, _ in items], dtype=np.int64)
        self.imp_m = np.array([k[1] for k, _ in items], dtype=np.int64)
        self.imp_count = np.array([v for _, v in items], dtype=np.int64)

    def coactive_counts(self, upto: int) -> np.ndarray:
        """Dense ``N x N`` count of windows ``< upto`` where both nodes were active."""
        a = self.activity[:, :upto]
        return (a @ a.T).toarray()


def _lookup(table: ScoreTable, nodes: np.ndarray) -> np.ndarray:
    k = np.searchsorted(table.active, nodes)
    return table.counts[k]


def _running_count(keys: np.ndarray, n: int) -> np.ndarray:
    """For each position, how many earlier positions hold the same key."""
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    first = np.searchsorted(sk, sk)
    out = np.empty(keys.size, dtype=np.int64)
    out[order] = np.arange(keys.size) - first
    return out


def _power_grad(base: float, e: np.ndarray) -> np.ndarray:
    """``e * base**(e - 1)`` with the ``e == 0`` terms set to 0."""
    return np.where(e > 0, e * np.power(base, np.maximum(e - 1, 0)), 0.0)


def _forward(hist: PairHistory, params: ModelParams, decay_on_silence=True, grad=True,
             on_window=None):
    """Single pass over windows returning ``(E, dE/d(alpha, beta, d, k))``.

    ``on_window(w, p, last)`` is called after each window with the state of
    the tracked pairs (probability after their last informative window).
    """
    a, b, d, k = params.alpha, params.beta, params.d, params.k
    th, p0 = params.th, params.p0
    P = hist.n_pairs
    p = np.full(P, p0)
    g = np.zeros((4, P)) if grad else None
    last = np.full(P, -1, dtype=np.int64)
    E = 0.0
    G = np.zeros(4)
    for w in range(hist.n_windows):
        lo, mid, hi = hist.starts[w], hist.mids[w], hist.starts[w + 1]
        if hi > lo:
            idx = hist.e_pair[lo:hi]
            pp = p[idx]
            if grad:
                gp = g[:, idx]
            if decay_on_silence:
                gap = w - last[idx] - 1
                if gap.any():
                    fac = np.power(d, gap)
                    if grad:
                        gp *= fac
                        gp[2] += _power_grad(d, gap) * pp
                    pp *= fac
            n = mid - lo
            pn, pq = pp[:n], pp[n:]
            miss_neg = pn >= th
            miss_pos = pq < th
            E += float(np.sum(pn[miss_neg] - th)) + float(np.sum(th - pq[miss_pos]))

            hs = hist.e_h[mid:hi]
            v = a + b * hs
            hv = np.clip(v, 0.0, 1.0)
            inner = pq + hv * (1.0 - pq)
            if grad:
                G += gp[:, :n][:, miss_neg].sum(axis=1) - gp[:, n:][:, miss_pos].sum(axis=1)
                gn = gp[:, :n] * (d * k)
                gn[2] += k * pn
                gn[3] += d * pn
                slope = (1.0 - pq) * ((v >= 0.0) & (v <= 1.0))
                gq = gp[:, n:] * (d * (1.0 - hv))
                gq[0] += d * slope
                gq[1] += d * slope * hs
                gq[2] += inner
                g[:, idx[:n]] = gn
                g[:, idx[n:]] = gq
            p[idx[:n]] = (d * k) * pn
            p[idx[n:]] = d * inner
            last[idx] = w
        if on_window is not None:
            on_window(w, p, last)

    if hist.imp_w.size:
        w_, m_, c_ = hist.imp_w, hist.imp_m, hist.imp_count
        if decay_on_silence:
            pp = p0 * np.power(d, w_) * np.power(k, m_)
            dd = p0 * _power_grad(d, w_) * np.power(k, m_)
            dk = p0 * np.power(d, w_) * _power_grad(k, m_)
        else:
            pp = p0 * np.power(d * k, m_)
            dd = p0 * _power_grad(d, m_) * np.power(k, m_)
            dk = p0 * np.power(d, m_) * _power_grad(k, m_)
        miss = pp >= th
        E += float(np.sum(c_[miss] * (pp[miss] - th)))
        if grad:
            G[2] += float(np.sum(c_[miss] * dd[miss]))
            G[3] += float(np.sum(c_[miss] * dk[miss]))
    return E, G


def _as_history(tables) -> PairHistory:
    return tables if isinstance(tables, PairHistory) else PairHistory(tables)


def classification_error(tables, params: ModelParams, decay_on_silence: bool = True) -> float:
    """Summed cost of mispredicting the sign of each informative score."""
    return _forward(_as_history(tables), params, decay_on_silence, grad=False)[0]


def error_gradient(tables, params: ModelParams, decay_on_silence: bool = True) -> np.ndarray:
    """Gradient of the error w.r.t. ``(alpha, beta, d, k)``.

    Misclassification indicators and the clip regions of ``h`` are frozen
    at ``params``; inside a clip region ``h`` has zero slope.
    """
    return _forward(_as_history(tables), params, decay_on_silence, grad=True)[1]


@dataclass
class FitResult:
    params: ModelParams
    error: float
    initial_error: float
    n_iter: int
    errors: list


_UPPER = np.array([np.inf, np.inf, 1.0, 1.0])


def fit(tables, config: FitConfig = FitConfig(), init: ModelParams = ModelParams(),
        decay_on_silence: bool = True) -> FitResult:
    """Projected gradient descent over ``(alpha, beta, d, k)``; ``th``, ``p0`` stay fixed.

    The step is ``learning_rate`` times the gradient of the mean error per
    informative pair-window. Stops after ``max_iterations`` or once the
    error changes by less than ``convergence_tol * E(init)``; returns the
    best parameters seen.
    """
    hist = _as_history(tables)
    if hist.n_terms == 0:
        raise ValueError("no informative pair-windows: nothing to fit")
    scale = 1.0 / hist.n_terms
    x = init.vector()
    E, G = _forward(hist, init, decay_on_silence)
    E0 = E
    tol = config.convergence_tol * max(E0, np.finfo(float).tiny)
    best_x, best_E = x.copy(), E
    errors = [E]
    n_iter = 0
    for n_iter in range(1, config.max_iterations + 1):
        x = np.clip(x - config.learning_rate * scale * G, 0.0, _UPPER)
        E_new, G = _forward(hist, init.with_vector(x), decay_on_silence)
        errors.append(E_new)
        if E_new < best_E:
            best_x, best_E = x.copy(), E_new
        done = abs(E_new - E) < tol
        E = E_new
        if done:
            break
    logger.debug("fit: E %.6g -> %.6g in %d iterations", E0, best_E, n_iter)
    return FitResult(init.with_vector(best_x), best_E, E0, n_iter, errors)


# -- probabilities and topologies -------------------------------------------

class EdgeProbabilities:
    """Edge probabilities of every node pair after each window."""

    def __init__(self, history: PairHistory, params: ModelParams, decay_on_silence=True):
        self.history = history
        self.params = params
        self.decay_on_silence = decay_on_silence
        self._snapshots: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def nodes(self):
        return self.history.nodes

    @property
    def n_windows(self) -> int:
        return self.history.n_windows

    def _capture(self, windows):
        wanted = set(int(w) for w in windows) - set(self._snapshots)
        if not wanted:
            return
        for w in wanted:
            if not 0 <= w < self.n_windows:
                raise IndexError(f"window {w} out of range [0, {self.n_windows})")

        def grab(w, p, last):
            if w in wanted:
                self._snapshots[w] = (p.copy(), last.copy())

        _forward(self.history, self.params, self.decay_on_silence, grad=False, on_window=grab)

    def tracked(self, w: int) -> np.ndarray:
        """Probabilities of the tracked (co-occurring) pairs after window ``w``."""
        self._capture([w])
        p, last = self._snapshots[w]
        if self.decay_on_silence:
            return p * np.power(self.params.d, w - last)
        return p.copy()

    def untracked_bound(self, w: int) -> float:
        """Upper bound on the probability of any untracked pair after window ``w``."""
        return self.params.p0 * (self.params.d ** (w + 1) if self.decay_on_silence else 1.0)

    def dense(self, w: int) -> np.ndarray:
        """Full symmetric ``N x N`` probability matrix after window ``w`` (diagonal 0)."""
        N = len(self.nodes)
        m = self.history.coactive_counts(w + 1).astype(np.float64)
        pr = self.params
        if self.decay_on_silence:
            M = pr.p0 * pr.d ** (w + 1) * np.power(pr.k, m)
        else:
            M = pr.p0 * np.power(pr.d * pr.k, m)
        pairs = self.history.pairs
        val = self.tracked(w)
        M[pairs[:, 0], pairs[:, 1]] = val
        M[pairs[:, 1], pairs[:, 0]] = val
        M[np.arange(N), np.arange(N)] = 0.0
        return M

    def series(self, a: str, b: str) -> ProbabilitySeries:
        index = {n: i for i, n in enumerate(self.nodes)}
        i, j = sorted((index[a], index[b]))
        self._capture(range(self.n_windows))
        p = [self.dense(w)[i, j] for w in range(self.n_windows)]
        return ProbabilitySeries((self.nodes[i], self.nodes[j]), np.array([self.params.p0] + p))

    def write_csv(self, dest, mode: str = "all") -> None:
        """CSV ``window,node_a,node_b,p``.

        ``mode='all'`` writes every pair after every window; ``'informative'``
        writes tracked pairs only at windows where they were informative.
        """
        nodes = self.nodes
        dest.write("window,node_a,node_b,p\n")
        self._capture(range(self.n_windows))
        if mode == "all":
            iu = np.triu_indices(len(nodes), k=1)
            names_a = [nodes[i] for i in iu[0]]
            names_b = [nodes[j] for j in iu[1]]
            for w in range(self.n_windows):
                vals = self.dense(w)[iu]
                dest.writelines(f"{w},{x},{y},{fmt_float(v)}\n"
                                for x, y, v in zip(names_a, names_b, vals.tolist()))
        elif mode == "informative":
            h = self.history
            for w in range(self.n_windows):
                idx = h.e_pair[h.starts[w]:h.starts[w + 1]]
                vals = self.tracked(w)[idx]
                dest.writelines(
                    f"{w},{nodes[h.pairs[i, 0]]},{nodes[h.pairs[i, 1]]},{fmt_float(v)}\n"
                    for i, v in zip(idx.tolist(), vals.tolist()))
        else:
            raise ValueError(f"unknown mode {mode!r}")


def _dense_edges(probs: EdgeProbabilities, w: int, edge_threshold: float,
                 block: int = 1024) -> np.ndarray:
    """Thresholded upper triangle of the full matrix, built a row block at a time."""
    h, pr = probs.history, probs.params
    N = len(probs.nodes)
    act = h.activity[:, :w + 1].tocsr()
    actT = act.T.tocsc()
    pairs, val = h.pairs, probs.tracked(w)
    out = []
    for r0 in range(0, N, block):
        r1 = min(N, r0 + block)
        m = (act[r0:r1] @ actT).toarray().astype(np.float64)
        if probs.decay_on_silence:
            M = pr.p0 * pr.d ** (w + 1) * np.power(pr.k, m)
        else:
            M = pr.p0 * np.power(pr.d * pr.k, m)
        lo, hi = np.searchsorted(pairs[:, 0], [r0, r1])
        M[pairs[lo:hi, 0] - r0, pairs[lo:hi, 1]] = val[lo:hi]
        keep = M >= edge_threshold
        keep &= np.arange(N)[None, :] > np.arange(r0, r1)[:, None]
        ia, ib = np.nonzero(keep)
        out.append(np.column_stack((ia + r0, ib)))
        del M, m, keep
    return np.concatenate(out) if out else np.empty((0, 2), np.int64)


def infer_topology(probs: EdgeProbabilities, w: int, edge_threshold: float) -> TopologySnapshot:
    """Edges are the pairs whose probability after window ``w`` is ``>= edge_threshold``."""
    edge_threshold = check_interval("edge_threshold", edge_threshold, 0, 1,
                                    open_lo=True, open_hi=True)
    if probs.untracked_bound(w) >= edge_threshold:
        edges = _dense_edges(probs, w, edge_threshold)
    else:
        val = probs.tracked(w)
        edges = probs.history.pairs[val >= edge_threshold]
    return TopologySnapshot(w, probs.nodes, edges.astype(np.int64).reshape(-1, 2), edge_threshold)


class EdgeProbabilityModel(BaseEstimator):
    """Estimator wrapper: ``fit`` on score tables, ``transform`` to probabilities.

    With ``fit_dynamics=False`` the given parameters are used as is.
    """

    def __init__(self, alpha=0.1, beta=0.1, d=0.999, k=0.9, th=0.5, p0=0.5,
                 decay_on_silence=True, learning_rate=0.01, max_iter=500, tol=1e-8,
                 fit_dynamics=True, random_state=0):
        self.alpha = alpha
        self.beta = beta
        self.d = d
        self.k = k
        self.th = th
        self.p0 = p0
        self.decay_on_silence = decay_on_silence
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.tol = tol
        self.fit_dynamics = fit_dynamics
        self.random_state = random_state

    def _init_params(self) -> ModelParams:
        return ModelParams(self.alpha, self.beta, self.d, self.k, self.th, self.p0)

    def fit(self, X, y=None):
        hist = _as_history(X)
        init = self._init_params()
        if self.fit_dynamics:
            cfg = FitConfig(self.learning_rate, self.max_iter, self.tol, self.random_state)
            res = fit(hist, cfg, init, self.decay_on_silence)
            self.params_, self.error_, self.n_iter_ = res.params, res.error, res.n_iter
            self.errors_ = res.errors
        else:
            self.params_ = init
            self.error_ = classification_error(hist, init, self.decay_on_silence)
            self.n_iter_ = 0
            self.errors_ = [self.error_]
        self.history_ = hist
        return self

    def transform(self, X) -> EdgeProbabilities:
        check_is_fitted(self, "params_")
        hist = self.history_ if X is self.history_ else _as_history(X)
        return EdgeProbabilities(hist, self.params_, self.decay_on_silence)

    def fit_transform(self, X, y=None) -> EdgeProbabilities:
        self.fit(X)
        return EdgeProbabilities(self.history_, self.params_, self.decay_on_silence)

    def predict(self, X, window: int = -1, edge_threshold: float = 0.5) -> TopologySnapshot:
        probs = self.transform(X)
        w = window % probs.n_windows
        return infer_topology(probs, w, edge_threshold)
