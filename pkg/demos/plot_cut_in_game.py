"""
Protecting the right of way against a cut-in
=============================================

The ego vehicle (EV) cruises behind a preceding vehicle while a competing
vehicle (CV) in the adjacent lane tries to merge into the gap. The game-based
planner predicts how the CV reacts to each EV plan and picks the plan that is
best for the EV. The result is compared with a plain ACC that only reacts once
the CV has crossed the lane line.
"""

# %%
# A conservative CV gives way when the EV closes the gap. An aggressive CV
# pushes in regardless, so the EV yields to it. Here the planner is handed the
# true style; ``style_source="ioc"`` identifies it online instead.
import matplotlib.pyplot as plt

from aacc.simulator import Scenario, compute_metrics, run

cases = [("conservative", "declared"), ("aggressive", "ioc")]

# %%
# Simulate both controllers for each CV style at a 20 m initial gap.
fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
for ax, (style, source) in zip(axes, cases):
    for ctl in ("baseline", "aacc"):
        log = run(Scenario(cv_style=style, initial_gap=20.0, controller=ctl, style_source=source))
        ev = log.vehicle(log.ev_id)
        m = compute_metrics(log)
        ax.plot(ev["t"], ev["v"], label=f"{ctl}: avg {m.avg_speed_ev:.2f} m/s, TTH {m.tth:.2f}")
    ax.set_title(f"{style} CV")
    ax.set_xlabel("time [s]")
    ax.legend(fontsize=8)
axes[0].set_ylabel("EV speed [m/s]")
fig.tight_layout()

# %%
# Against the conservative CV the EV briefly accelerates and keeps its speed.
# Against the aggressive CV it slows early, so the time spent at short
# headway (TTH) drops.
plt.show()
