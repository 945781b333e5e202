"""adaptlqr: a laboratory for robust adaptive LQR control.

Subpackages and modules:

- linsys: system types, Riccati/Lyapunov solvers, rollouts, decay bounds
- sysid: least-squares identification and confidence-set machinery
- conic: dense conic programming (equalities, nonneg, SOC, PSD) via ADMM
- sls: FIR system-level synthesis, controller realization, constrained variant
- baselines: OFU (projected gradient), Thompson sampling, nominal control
- adaptive: epoch loops, exploration schedules, regret accounting
- validation: numerical checks of the supporting lemma-level identities
- harness: experiment presets, multi-trial runner, CSV emission, CLI
"""

__version__ = "0.1.0"
