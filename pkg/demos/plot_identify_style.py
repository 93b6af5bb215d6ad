"""
Identifying a driving style online
==================================

A competing vehicle driven by a known quadratic cost is simulated next to the
ego vehicle. The online identifier watches its trajectory and recovers the
cost weights. This is the round trip the identifier is tested on.
"""

# %%
# Two reference styles. The second longitudinal weight separates them: above
# one the driver cares about speed more than about the gap.
import matplotlib.pyplot as plt
import numpy as np

from aacc.simulator import Scenario, run
from aacc.style import AGGRESSIVE_STYLE, CONSERVATIVE_STYLE

styles = {"aggressive": AGGRESSIVE_STYLE, "conservative": CONSERVATIVE_STYLE}

# %%
# Run each style with the LQR harness driver for ten seconds and read the
# identifier's estimate history from the log.
fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
for ax, (name, beta) in zip(axes, styles.items()):
    log = run(Scenario(cv_driver="lqr", cv_beta=beta, t_max=10.0))
    b = log.beta
    for i, true in zip((2, 3), beta.beta_long[1:]):
        ax.plot(b["t"], b[f"beta{i}"], label=f"beta{i} estimate")
        ax.axhline(true, ls="--", lw=0.8, color="k")
    k = np.flatnonzero(b["converged"])
    if k.size:
        est = [b[f"beta{i}"][k[-1]] for i in (1, 2, 3)]
        print(f"{name}: true {beta.beta_long}, estimate {np.round(est, 5).tolist()}")
    ax.set_title(name)
    ax.set_xlabel("time [s]")
    ax.legend(fontsize=8)
fig.tight_layout()

# %%
# Dashed lines are the true weights. The estimate locks on once the
# accumulated information matrix has full rank.
plt.show()
