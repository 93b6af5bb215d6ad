"""
One planning step
=================

A single solve of the game-based planner. The follower's best-response law is
computed first by a backward Riccati pass. It is then embedded in the
planner's equality constraints, so the QP optimises the EV input while the CV
reacts in closed loop.
"""

# %%
# The CV is 20 m ahead in the left lane, both vehicles at 18 m/s.
import matplotlib.pyplot as plt
import numpy as np

from aacc.dynamics import SystemState
from aacc.gmpc import EvObjective, GmpcConfig, plan
from aacc.style import AGGRESSIVE_STYLE, CONSERVATIVE_STYLE, CvDesired

x0 = SystemState(delta_x=20.0, v_ev=18.0, v_cv=18.0, y_cv=3.5, psi_cv=0.0)
cfg = GmpcConfig(horizon=10, cv_desired=CvDesired(25.0, 18.0, 0.0))

# %%
# The EV wants to close the gap against a conservative CV and to keep 25 m
# against an aggressive one.
t = np.arange(cfg.horizon) * cfg.dt
fig, ax = plt.subplots(figsize=(6, 3.5))
for name, beta in (("conservative", CONSERVATIVE_STYLE), ("aggressive", AGGRESSIVE_STYLE)):
    res = plan(x0, beta, EvObjective.for_style(beta), cfg)
    print(f"{name}: first EV accel {res.first_accel:+.2f} m/s^2, solve {res.solve_time * 1e3:.1f} ms")
    ax.step(t, res.u_ev_seq, where="post", label=f"EV plan vs {name}")
    ax.plot(t, res.u_cv_pred[:, 0], ls="--", label=f"predicted CV accel ({name})")
ax.set_xlabel("time [s]")
ax.set_ylabel("acceleration [m/s²]")
ax.legend(fontsize=8)
fig.tight_layout()
plt.show()
