"""Independent test oracles: finite differences and brute-force matching."""
from itertools import permutations

import numpy as np

from drumscribe.nn.network import training_loss


def sampled_network_fd_check(cfg, params, state, spec, onsets, vels, drop_seed, grads,
                             samples_per_tensor=8, h=1e-5, index_seed=0, zero_floor=1e-8):
    """Compare analytic grads against central differences on sampled components.

    Returns {tensor name: relative L2 error over the sampled components}.
    The loss is re-evaluated with a fresh rng from ``drop_seed`` each time so
    every evaluation sees identical dropout masks. Groups whose gradient is
    identically zero (conv biases are absorbed by train-mode batch norm) only
    carry floating-point noise on both sides; below ``zero_floor`` the error
    is reported as 0 rather than as 0/0.
    """
    def scalar():
        return training_loss(cfg, params, state, spec, onsets, vels,
                             rng=np.random.default_rng(drop_seed), train=True)

    idx_rng = np.random.default_rng(index_seed)
    errors = {}
    for name in sorted(params):
        tensor = params[name]
        flat = tensor.reshape(-1)
        k = min(samples_per_tensor, flat.size)
        picks = idx_rng.choice(flat.size, size=k, replace=False)
        analytic = grads[name].reshape(-1)[picks].astype(np.float64)
        numeric = np.zeros(k)
        for j, p in enumerate(picks):
            orig = flat[p]
            step = h * max(1.0, abs(float(orig)))
            flat[p] = orig + step
            hi = scalar()
            flat[p] = orig - step
            lo = scalar()
            flat[p] = orig
            numeric[j] = (hi - lo) / (2 * step)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        if denom < zero_floor:
            errors[name] = 0.0
        else:
            errors[name] = float(np.linalg.norm(analytic - numeric) / denom)
    return errors


def brute_force_max_matching(ref_times, est_times, tol):
    """Maximum one-to-one matching size by exhaustive search (small inputs).

    Tries every injective assignment of the smaller side into the larger; the
    bound of ~8 events per side keeps this tractable.
    """
    ref_times = list(ref_times)
    est_times = list(est_times)
    if len(ref_times) > len(est_times):
        ref_times, est_times = est_times, ref_times
    n, m = len(ref_times), len(est_times)
    if n == 0:
        return 0
    best = 0
    for perm in permutations(range(m), n):
        size = sum(1 for i, j in enumerate(perm) if abs(ref_times[i] - est_times[j]) <= tol)
        best = max(best, size)
        if best == n:
            break
    return best
