"""Analytic toy distributions used as oracles.

Pixels are i.i.d. under these priors, so every multivariate quantity
factorizes and 1-D numerical integration gives ground truth for the
n-pixel case. Two priors are used:

* two_delta: P(X=40) = P(X=200) = 1/2 (the discrete two-delta prior);
  the Gaussian-smoothed density p_bar and its posterior mean are
  available in closed form.
* gmm: a two-component Gaussian mixture, which keeps -log p_bar and the
  optimal DAE R*(y) = y + sigma^2 d/dy log p_bar(y) smooth and exactly
  computable, as needed for descent-direction trials.

Everything here is an independent test oracle: no code from the package
under test is used for the math.
"""

from __future__ import annotations

import numpy as np

TWO_DELTA_VALUES = (40.0, 200.0)


def two_delta_sample(shape, rng: np.random.Generator) -> np.ndarray:
    choice = rng.integers(0, 2, size=shape)
    return np.where(choice == 0, TWO_DELTA_VALUES[0], TWO_DELTA_VALUES[1]).astype(float)


def two_delta_posterior_mean(y: np.ndarray, sigma: float) -> np.ndarray:
    """E[x | y] for x uniform on {40, 200}, y = x + N(0, sigma^2).

    Posterior weights are the two Gaussian likelihoods; all pixels are
    independent so the formula applies elementwise.
    """
    a, b = TWO_DELTA_VALUES
    # log-likelihood difference, computed stably
    la = -((y - a) ** 2) / (2 * sigma**2)
    lb = -((y - b) ** 2) / (2 * sigma**2)
    m = np.maximum(la, lb)
    wa = np.exp(la - m)
    wb = np.exp(lb - m)
    return (a * wa + b * wb) / (wa + wb)


def two_delta_posterior_mean_integrated(y_values: np.ndarray, sigma: float,
                                        grid_points: int = 20001) -> np.ndarray:
    """E[x | y] by brute-force numerical integration over the prior.

    The prior is discrete, so 'integration' is the two-term sum — but to
    keep this an independent oracle the posterior is built from the
    Bayes integral E[x|y] = sum_x x p(y|x) P(x) / sum_x p(y|x) P(x)
    evaluated with an explicit quadrature of the Gaussian likelihood
    normalization (verifying the likelihoods really are densities).
    """
    y_values = np.asarray(y_values, dtype=float)
    sigma2 = sigma**2
    # quadrature check that the Gaussian kernel used is normalized
    t = np.linspace(-12 * sigma, 12 * sigma, grid_points)
    kernel = np.exp(-(t**2) / (2 * sigma2))
    norm = np.trapezoid(kernel, t)
    assert abs(norm - np.sqrt(2 * np.pi * sigma2)) < 1e-6 * norm
    num = np.zeros_like(y_values)
    den = np.zeros_like(y_values)
    for x in TWO_DELTA_VALUES:
        lik = np.exp(-((y_values - x) ** 2) / (2 * sigma2)) / norm
        num += x * lik * 0.5
        den += lik * 0.5
    return num / den


class GmmPrior:
    """Scalar two-component Gaussian mixture prior, pixelwise i.i.d.

    p(x) = w0 N(x; mu0, s0^2) + w1 N(x; mu1, s1^2). The smoothed density
    p_bar = p * N(0, sigma_r^2) is again a mixture with inflated
    variances, so -log p_bar, its derivative, and the optimal DAE are
    closed-form.
    """

    def __init__(self, means=(40.0, 200.0), stds=(18.0, 18.0), weights=(0.5, 0.5),
                 sigma_r: float = 20.0):
        self.means = np.asarray(means, dtype=float)
        self.stds = np.asarray(stds, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        assert abs(self.weights.sum() - 1.0) < 1e-12
        self.sigma_r = float(sigma_r)

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=shape, p=self.weights)
        return self.means[comp] + self.stds[comp] * rng.normal(size=shape)

    def _mix_logpdf(self, x: np.ndarray, extra_var: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        comps = []
        for w, mu, s in zip(self.weights, self.means, self.stds):
            var = s**2 + extra_var
            comps.append(np.log(w) - 0.5 * np.log(2 * np.pi * var)
                         - (x - mu) ** 2 / (2 * var))
        stacked = np.stack(comps)
        m = stacked.max(axis=0)
        return m + np.log(np.exp(stacked - m).sum(axis=0))

    def log_pbar(self, x: np.ndarray) -> np.ndarray:
        """log of the sigma_r-smoothed density, summed over pixels."""
        return self._mix_logpdf(x, self.sigma_r**2)

    def grad_log_pbar(self, x: np.ndarray) -> np.ndarray:
        """d/dx log p_bar(x), elementwise (responsibility-weighted pulls)."""
        x = np.asarray(x, dtype=float)
        logs = []
        pulls = []
        for w, mu, s in zip(self.weights, self.means, self.stds):
            var = s**2 + self.sigma_r**2
            logs.append(np.log(w) - 0.5 * np.log(2 * np.pi * var)
                        - (x - mu) ** 2 / (2 * var))
            pulls.append((mu - x) / var)
        stacked = np.stack(logs)
        m = stacked.max(axis=0)
        resp = np.exp(stacked - m)
        resp /= resp.sum(axis=0)
        return (resp * np.stack(pulls)).sum(axis=0)

    def optimal_dae(self, y: np.ndarray) -> np.ndarray:
        """R*(y) = y + sigma_r^2 * d/dy log p_bar(y) (the smoothed-posterior mean)."""
        return np.asarray(y, dtype=float) + self.sigma_r**2 * self.grad_log_pbar(y)

    def optimal_dae_integrated(self, y_values: np.ndarray, span: float = 10.0,
                               grid_points: int = 8001) -> np.ndarray:
        """E[x | y] under the smoothing noise, by direct quadrature.

        Independent cross-check of optimal_dae: integrates
        x p(x) N(y - x; 0, sigma_r^2) over a wide grid.
        """
        y_values = np.asarray(y_values, dtype=float)
        lo = self.means.min() - span * (self.stds.max() + self.sigma_r)
        hi = self.means.max() + span * (self.stds.max() + self.sigma_r)
        x = np.linspace(lo, hi, grid_points)
        px = np.exp(self._mix_logpdf(x, 0.0))
        out = np.empty_like(y_values)
        flat = y_values.ravel()
        res = np.empty_like(flat)
        for i, y in enumerate(flat):
            lik = np.exp(-((y - x) ** 2) / (2 * self.sigma_r**2))
            num = np.trapezoid(x * px * lik, x)
            den = np.trapezoid(px * lik, x)
            res[i] = num / den
        return res.reshape(y_values.shape)

    def f_objective(self, x: np.ndarray, v: np.ndarray, rho: float) -> float:
        """f(x, v) = -log p_bar(x) + rho/2 ||x - v||^2 (summed over pixels)."""
        return float(-np.sum(self.log_pbar(x)) + 0.5 * rho * np.sum((x - v) ** 2))
