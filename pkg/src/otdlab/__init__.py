"""otdlab: a desk-scale lab for transport-regularized score distillation.

Pure numpy/scipy. Modules:

- nn_core: float64 tape autodiff, MLPs, Adam, JSON checkpoints
- ot_core: log-domain entropic transport, exact assignment oracle, sample grads
- gen_model: mixture targets, noising, few-step generator, conditioning units
- objectives: score-matching, transport, and relative adversarial losses
- trainer: alternating training loop, evaluation, diagnostics
- plots: deterministic SVG charts (training curves, sample scatters)
- cli: command-line front end (sinkhorn/gradcheck/distill/eval/ablate/plot)
"""

__version__ = "0.1.0"
