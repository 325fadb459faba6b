"""Monte Carlo estimate of the resonant-set measure.

Enumerates the difference vectors that each normalization step exposes to
small divisors, screens an ensemble of random potentials against the
quantitative thresholds, and compares the empirical resonant fraction with
the analytic eps^(alpha/2) envelope.
"""

from latticebnf import NormFrame
from latticebnf.resonance import (
    enumerate_multiindices,
    estimate_resonant_measure,
    nonresonance_threshold,
)

frame = NormFrame(j0=0, N=16, r=3.0, alpha=0.009, epsilon=1e-3)
window = (-14, 14)

for s in (1, 2, 3):
    ks = enumerate_multiindices(frame, s, window)
    thrs = [nonresonance_threshold(k, frame) for k in ks]
    print(f"step {s}: {len(ks)} difference vectors, "
          f"thresholds in [{min(thrs):.2e}, {max(thrs):.2e}]")

report = estimate_resonant_measure(
    frame, M=3, samples=4000, master_seed=2, window=window,
    eps1=9.5e-4, eps2=5e-5, nf_probe=2,
)

print(f"\nresonant fraction: {report.resonant_fraction:.4f} "
      f"(95% CI {report.ci95[0]:.4f}..{report.ci95[1]:.4f})")
print("per-step fractions:", [f"{f:.4f}" for f in report.per_step_fractions])
print(f"analytic envelope eps^(alpha/2) = {frame.epsilon**(frame.alpha/2):.4f}")
print(f"worst margin among passing samples: {report.worst_margin:.2f}")

# the frequency-modulation probe runs the normal form on passing samples;
# the modulation is second order in eps and far below every threshold
print("max |v_s - v_1| per step (probe):",
      [f"{w:.2e}" for w in report.max_modulation])
