"""
From a privacy budget to a noise level
======================================

Each client message is clipped to norm tau, so swapping one training sample
moves it by at most 2 tau. The total (epsilon, delta) budget is split over T
rounds and every round gets the classic Gaussian mechanism.
"""
import math

from byzdp.privacy import composed_budget, per_step_budget, sigma_for_budget, sigma_heuristic

tau, eps, delta = 1.0, 1.0, 1e-5

print(f"{'T':>7} {'sigma':>12} {'heuristic':>10} {'eps/step':>10} {'recomposed eps':>15}")
for T in (10, 100, 1000, 10000):
    sigma = sigma_for_budget(tau, eps, delta, T)
    eps_step, _ = per_step_budget(eps, delta, T)
    eps_total, delta_total = composed_budget(tau, eps, delta, T)
    print(f"{T:>7} {sigma:>12.1f} {sigma_heuristic(tau, eps, delta, T):>10.1f} {eps_step:>10.2e} {eps_total:>15.4f}")

# Quadrupling the horizon roughly doubles the noise, as the sqrt(T) factor says.
ratio = sigma_for_budget(tau, eps, delta, 4000) / sigma_for_budget(tau, eps, delta, 1000)
print("sigma(4000) / sigma(1000) =", round(ratio, 4), " vs 2 =", 2.0)
print("noise grows linearly in tau:", sigma_for_budget(2 * tau, eps, delta, 100) / sigma_for_budget(tau, eps, delta, 100))
print("the recomposed delta is twice delta:", math.isclose(composed_budget(tau, eps, delta, 100)[1], 2 * delta))
