"""Attention-weight statistics: per-frame collection, 1-D GMM fits, histograms."""
import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DataError, ModelError, NumericError, ParameterError
from .model import AcousticModel, utterance_log_posteriors

VAR_FLOOR = 1e-6


class WeightSample(NamedTuple):
    utt_id: str
    frame: int
    lang: str
    w_en: float
    w_hi: float


def collect_weights(model, corpus):
    """One :class:`WeightSample` per frame of every utterance, in corpus order."""
    if not isinstance(model, AcousticModel) or model.kind != "sha":
        raise ModelError("attention weights need an SHA model")
    out = []
    for u in corpus:
        _, w = utterance_log_posteriors(model, u.frames, mode="sha")
        for t in range(u.num_frames):
            out.append(WeightSample(u.id, t, u.tags[t], float(w[t, 0]), float(w[t, 1])))
    return out


def weights_by_language(samples):
    """``{"en": w_en over en frames, "hi": w_hi over hi frames}`` as arrays."""
    return {
        "en": np.array([s.w_en for s in samples if s.lang == "en"]),
        "hi": np.array([s.w_hi for s in samples if s.lang == "hi"]),
    }


@dataclass
class GmmFit:
    k: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    iterations: int
    history: list = field(default_factory=list)  # log-likelihood per iteration, chosen restart
    restart_histories: list = field(default_factory=list)

    @property
    def dominant(self):
        return int(np.argmax(self.weights))

    @property
    def dominant_mean(self):
        return float(self.means[self.dominant])


def _kmeanspp(x_sorted, k, rng):
    """k-means++ seeding by inverse-CDF draws on sorted data.

    Drawing through the cumulative weight of sorted samples makes the result
    invariant to duplicating every sample.
    """
    n = len(x_sorted)
    centers = [x_sorted[min(int(rng.random() * n), n - 1)]]
    for _ in range(1, k):
        d2 = np.min((x_sorted[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        u = rng.random()
        if total <= 0:
            centers.append(x_sorted[min(int(u * n), n - 1)])
            continue
        cdf = np.cumsum(d2) / total
        centers.append(x_sorted[min(int(np.searchsorted(cdf, u, side="right")), n - 1)])
    return np.asarray(centers, dtype=np.float64)


def _em(x, mu, var_floor, tol, max_iter):
    n, k = len(x), len(mu)
    w = np.full(k, 1.0 / k)
    var = np.full(k, max(float(x.var()), var_floor))
    history = []
    for it in range(max_iter):
        resp, ll = kernels.gmm_estep(x, w, mu, var)
        if history and ll < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            raise NumericError(f"EM log-likelihood decreased: {history[-1]!r} -> {ll!r}")
        history.append(ll)
        # stop before updating so the returned parameters own the last entry
        if it == max_iter - 1 or (len(history) > 1 and abs(history[-1] - history[-2]) < tol):
            break
        nk = resp.sum(axis=0)
        live = nk > 1e-12
        w = nk / n
        mu = np.where(live, (resp * x[:, None]).sum(axis=0) / np.where(live, nk, 1.0), mu)
        d2 = (x[:, None] - mu[None, :]) ** 2
        var = np.where(live, (resp * d2).sum(axis=0) / np.where(live, nk, 1.0), var)
        var = np.maximum(var, var_floor)
    return w, mu, var, history


def fit_gmm_1d(samples, k=2, seed=0, tol=1e-8, max_iter=500, restarts=5, var_floor=VAR_FLOOR):
    """Maximum-likelihood 1-D Gaussian mixture by EM; best of ``restarts`` seedings."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if k < 1 or restarts < 1 or max_iter < 1:
        raise ParameterError("k, restarts and max_iter must be >= 1")
    if len(x) < k:
        raise DataError(f"need at least {k} samples, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise DataError("samples must be finite")
    xs = np.sort(x)
    rng = np.random.default_rng(seed)
    best = None
    histories = []
    for _ in range(restarts):
        mu0 = _kmeanspp(xs, k, rng)
        w, mu, var, hist = _em(xs, mu0, var_floor, tol, max_iter)
        histories.append(hist)
        if best is None or hist[-1] > best[3][-1]:
            best = (w, mu, var, hist)
    w, mu, var, hist = best
    order = np.argsort(mu, kind="stable")
    return GmmFit(k, w[order], mu[order], var[order], hist[-1], len(hist), hist, histories)


def histogram_counts(samples, bins):
    """Counts over ``[0, 1]`` split into ``bins`` right-open bins, the last one closed."""
    if bins < 1:
        raise ParameterError("bins must be >= 1")
    x = np.asarray(samples, dtype=np.float64).ravel()
    if np.any((x < 0) | (x > 1)):
        raise DataError("samples must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.minimum(np.floor(x * bins).astype(np.int64), bins - 1)
    return edges, np.bincount(idx, minlength=bins)


def export_histogram(samples, bins, path):
    edges, counts = histogram_counts(samples, bins)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for i, c in enumerate(counts):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])
    return counts


def write_fits(fits, path):
    """CSV ``subset,component,weight,mean,variance,log_likelihood,iterations``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subset", "component", "weight", "mean", "variance", "log_likelihood", "iterations"])
        for name, fit in fits.items():
            for j in range(fit.k):
                w.writerow([name, j, repr(float(fit.weights[j])), repr(float(fit.means[j])),
                            repr(float(fit.variances[j])), repr(fit.log_likelihood), fit.iterations])


def lid_summary(samples, k=2, seed=0, restarts=5):
    """Mean weight of the true language plus a GMM fit per language subset."""
    out = {}
    for lang, vals in weights_by_language(samples).items():
        if len(vals) < k:
            continue
        fit = fit_gmm_1d(vals, k=k, seed=seed, restarts=restarts)
        out[lang] = {"mean": float(vals.mean()), "frames": len(vals), "fit": fit}
    return out
