"""Band-collapsed curves with credible intervals on the MA(2) benchmark.

Reproduces the style of the simulation-study band figures: HF power, LF/HF
ratio and HF coherence as functions of the outcome, with pointwise 95%
intervals and the closed-form truths, plus the HF-coherence u-derivative.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

import condspec as cs
from condspec.simstudy import Ma2Config, generate_ma2, true_band_measures
from condspec.summaries import band_coherence_derivative, band_measures

data = generate_ma2(Ma2Config(n_subjects=25, n_time=300, seed=42))
config = cs.ModelConfig(iterations=1500, burn_in=500, n_j=10, n_h=5, seed=9)
draws = cs.run_chain(data, config)

us = np.linspace(0, 1, 101)
curves = band_measures(draws, us=us)
truth = true_band_measures(300, us)

fig, axes = plt.subplots(2, 2, figsize=(10, 7))
panels = [(("hf", 1), "hf_1", "HF power, channel 1"),
          (("lfhf", 2), "lfhf_2", "LF/HF ratio, channel 2"),
          (("cohhf", 1, 2), "cohhf_12", "HF squared coherence 1-2")]
for ax, (key, name, title) in zip(axes.ravel(), panels):
    curve = curves[key]
    ax.plot(us, truth[name], "k-", label="truth")
    ax.plot(us, curve.mean, "r--", label="posterior mean")
    ax.fill_between(us, curve.lower95, curve.upper95, color="b", alpha=0.15,
                    label="95% interval")
    ax.set_title(title)
    ax.set_xlabel("u")
    ax.legend(fontsize=8)

deriv = band_coherence_derivative(draws, 1, 2, us=us)
rho = 0.6 + 0.25 * np.cos(np.pi * us)
truth_deriv = 2 * rho * (-0.25 * np.pi * np.sin(np.pi * us))
ax = axes[1, 1]
ax.plot(us, truth_deriv, "k-", label="truth")
ax.plot(us, deriv.mean, "r--", label="posterior mean")
ax.fill_between(us, deriv.lower95, deriv.upper95, color="b", alpha=0.15)
ax.set_title("d/du HF coherence 1-2")
ax.set_xlabel("u")
ax.legend(fontsize=8)

fig.tight_layout()
fig.savefig("demo03_bands.png", dpi=120)
print("wrote demo03_bands.png")
print("derivative negative over the interior:",
      bool(np.all(deriv.mean[20:80] < 0)))
