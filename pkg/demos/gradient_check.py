"""Finite-difference check of every differentiable op and of the full models."""

from pagtn.gradcheck import TOL, run_suite

results = run_suite(seed=0)
for r in results:
    print(f"{r.name:32s} {r.max_rel_err:.2e}  {'ok' if r.ok else 'FAIL'}")
worst = max(r.max_rel_err for r in results)
print(f"{len(results)} cases, worst relative error {worst:.2e} (tolerance {TOL:.0e})")
