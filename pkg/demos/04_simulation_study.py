"""A reduced run of the coverage / ISE study with the two-stage baselines.

The full study (replicates=20 or 100) is driven by `condspec study`; this demo
runs 3 replicates at reduced chain length so it finishes in a few minutes and
prints the Tables-style report rows.
"""

import condspec as cs
from condspec.simstudy import Ma2Config, run_study

report = run_study(
    replicates=3,
    study=Ma2Config(n_subjects=25, n_time=300, seed=1234),
    model=cs.ModelConfig(iterations=800, burn_in=300, n_j=10, n_h=5, seed=0),
    threads=2,
)

print(f"replicates: {report.replicates}, failed: {report.failed}")
print(f"seconds/iteration: {report.seconds_per_iteration[0]:.3f} "
      f"(sd {report.seconds_per_iteration[1]:.3f})")
print()
header = f"{'measure':<10}{'estimator':<18}{'ISE mean':>12}{'ISE sd':>12}{'cover':>8}"
print(header)
print("-" * len(header))
for measure, estimator, ise_mean, ise_sd, scale, cov_mean, cov_sd in report.rows():
    cov = f"{cov_mean:.3f}" if cov_mean != "" else ""
    print(f"{measure:<10}{estimator:<18}{ise_mean:>12.3f}{ise_sd:>12.3f}{cov:>8}"
          f"   (x{int(scale)})")
