"""How each estimate-based policy ranks a job as it gets served.

For a job estimated at 20 units, print its score against attained service.
SERPT's score explodes at the estimate and SEH freezes at 2/20.  The Gittins
index keeps climbing, but more and more slowly: a job that outlives its
estimate is probably bigger than it looked, so extra service buys less.

The same table comes out of ``estsched score --policy GITTINS --s-hat 20``.
"""
import numpy as np

from estsched import ErrorModel, get_policy

s_hat = 20.0
model = ErrorModel(sigma=0.5)
names = ("SEPT", "SERPT", "SEH", "GITTINS")
policies = [get_policy(n, model) for n in names]

print("attained " + " ".join(f"{n:>9}" for n in names))
for a in np.linspace(0.0, 60.0, 13):
    cells = [p.score(a, np.nan, s_hat) for p in policies]
    print(f"{a:8.1f} " + " ".join(f"{c:9.4f}" for c in cells))
