"""
Markov-blanket covariates for Weibull AFT models
================================================

A discovered graph names, for each outcome, the few variables that directly
precede it.  Using those as survival covariates instead of a broad clinical
set should fit about as well with fewer parameters, which BIC rewards.  The
script also shows how an AFT coefficient reads as a time ratio and how the
same fit looks on the proportional-hazards scale.

Usage:
    python demos/survival_feature_selection.py [--n-patients 1000] [--seed 1]
"""
import argparse

import numpy as np

from trialcausal.discovery import markov_blanket, run_pcmci
from trialcausal.panel import to_survival
from trialcausal.survival import (
    aft_to_ph,
    compare_feature_sets,
    comparison_to_csv,
    cox_table,
    fit_cox,
    fit_weibull_aft,
    time_ratio,
)
from trialcausal.synth import builtin_topcat_like, generate

parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
parser.add_argument("--n-patients", type=int, default=1000)
parser.add_argument("--seed", type=int, default=1)
args = parser.parse_args()

spec = builtin_topcat_like(n_patients=args.n_patients)
panel, _ = generate(spec, args.seed)
graph = run_pcmci(panel, spec.knowledge())
outcomes = panel.outcomes()

# %% covariate sets
mb = {o: sorted(markov_blanket(graph, o)) for o in outcomes}
broad = [s.name for s in spec.variables if s.kind != "outcome" and s.name != "treatment"]
for o in outcomes:
    print(f"{o:<12} blanket: {', '.join(mb[o]) or '(none)'}")
print(f"broad set: {len(broad)} covariates")

# %% BIC comparison
comp = compare_feature_sets(panel, outcomes, mb, broad)
print()
print(comparison_to_csv([comp]))
print(f"total BIC {comp.total_mb:.1f} with blankets vs {comp.total_orig:.1f} with the broad set")

# %% reading one model
o = "death"
feats = ["treatment"] + [f for f in mb[o] if f != "treatment"]
recs, _ = to_survival(panel, o, feats)
fit = fit_weibull_aft(recs, names=feats)
coef, p = fit.coef("treatment")
print(f"\n{o}: treatment coefficient {coef:+.3f} (p={p:.2g}); "
      f"expected survival time changes by {100 * time_ratio(coef):+.1f}% under treatment")
ph = aft_to_ph(fit)
cox = fit_cox(recs, names=feats)
print("hazard-scale coefficients, Weibull vs Cox:")
for name, b_w, b_c in zip(feats, ph.beta, cox.log_hr):
    print(f"  {name:<12} {b_w:+.3f}  {b_c:+.3f}")
print(f"Weibull shape {ph.gamma:.2f} (1 would be a constant hazard)")

# %% unadjusted hazard ratios
print("\nunadjusted treatment hazard ratios")
for row in cox_table(panel, outcomes):
    if row["hazard_ratio"] is None:
        print(f"  {row['outcome']:<12} not estimable: {row['note']}")
        continue
    print(f"  {row['outcome']:<12} {row['hazard_ratio']:.2f} "
          f"[{row['ci_low']:.2f}, {row['ci_high']:.2f}] p={row['p_value']:.2g} "
          f"({row['events']}/{row['n']} events)")
print("mean follow-up", np.round(panel.observed_periods.mean() * panel.bin_months, 1), "months")
