# Forward noising and the closed-form posterior of a linear DDPM schedule.
import numpy as np

from cfdiff.schedule import build_schedule, estimate_x0, forward_noise, posterior_params

s = build_schedule(T=200, beta_start=5e-4, beta_end=0.1)
print("T =", s.T, " alpha_bar[T] =", s.alpha_bar[-1])

x0 = np.linspace(-1, 1, 5)
eps = np.random.default_rng(0).standard_normal(5)
for t in (1, 50, 100, 200):
    xt = forward_noise(s, x0, t, eps)
    mean, var = posterior_params(s, x0, xt, t)
    print(f"t={t:3d}  x_t={np.round(xt, 3)}  posterior var={var:.5f}")

# knowing the noise recovers the clean signal exactly (up to rounding)
xt = forward_noise(s, x0, 150, eps)
print("recovered x0:", np.round(estimate_x0(s, xt, eps, 150), 6))
