"""Finite-difference verification of every hand-written backward pass.

Run: python demos/gradient_check.py

Each layer is checked on random float64 instances with central differences.
The second table doubles the BiLSTM gradient on purpose: the checker has to
catch it, otherwise a passing table would mean nothing.
"""

from lidsnet import gradcheck

print(gradcheck.format_table(gradcheck.run_checks(instances=5, seed=0)))
print()
print("with a deliberate fault in the BiLSTM backward pass:")
print(gradcheck.format_table(gradcheck.run_checks(instances=2, seed=0, fault="bilstm",
                                                  layers=["bilstm", "dense"])))
