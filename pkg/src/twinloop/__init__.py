"""Closed-loop adaptive digital twin runtime.

Detects dynamic events in simulated industrial sensor streams with a
temporal neural model, distills the model into confidence-scored symbolic
rules for interpretable inference, and adapts corrective control actions
with policy-gradient reinforcement learning.
"""

__version__ = "0.1.0"
