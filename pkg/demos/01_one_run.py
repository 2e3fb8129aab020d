"""A single simulated run, policy by policy.

Ten thousand jobs with heavy-tailed Weibull sizes (shape 0.25) arrive at
load 0.9.  Each job's size is known only through a log-normal estimate.
Every policy sees the same arrivals, sizes and estimates because the
random streams are derived from the seed alone.

    python demos/01_one_run.py
"""
from estsched import WorkloadSpec, get_policy, run_simulation

workload = WorkloadSpec.synthetic(k=0.25, sigma=0.5, rho=0.9)
seed = 11

srpt = run_simulation(workload, get_policy("SRPT"), 10_000, seed)
print(f"{'policy':8} {'MST':>9} {'vs SRPT':>8} {'slowdown':>9}")
for name in ("SRPT", "SERPT", "SEPT", "SEH", "GITTINS", "LAS", "FCFS"):
    r = run_simulation(workload, get_policy(name, workload.error_model), 10_000, seed)
    print(f"{name:8} {r.mst:9.3f} {r.mst / srpt.mst:8.3f} {r.mean_slowdown:9.3f}")

# One run is noisy with sizes this skewed; demos/03 replicates properly.
# Note how SERPT falls apart: a job whose estimate ran out gets an infinite
# score and blocks everything until it finishes.  Weibull(0.25) also draws
# some absurdly small jobs, so one blocked tiny job sends mean slowdown
# through the roof under SERPT and FCFS.
