"""Replicate one grid cell until the confidence interval is tight.

A plan is a grid of (k, sigma, rho) cells times policies.  Each policy is
re-run with fresh seeds until the 95% interval on its mean sojourn time is
within 5% of the mean.  SRPT is run alongside on the same seeds, which makes
the ratio interval much narrower than either MST on its own.

A few seconds.  The equivalent command line is

    estsched run --policy SEH,SEPT,GITTINS --k 1 --sigma 0.5 --rho 0.8
"""
from estsched.experiments import ExperimentPlan, run_plan

plan = ExperimentPlan(policies=["SEH", "SEPT", "GITTINS"], k_values=[1.0],
                      sigma_values=[0.5], rho_values=[0.8])
result = run_plan(plan)
for row in result.rows:
    print(f"{row.policy:8} runs={row.n_runs:4d}  MST={row.mst:.3f} "
          f"ratio={row.mst_ratio_vs_srpt:.3f} +/- {row.mst_ratio_ci_half_width:.3f}")
print(f"wall time {result.wall_time:.1f}s")
