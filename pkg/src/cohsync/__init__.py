"""Coherent output synchronization toolkit for linear multi-agent networks.

Subpackages are organized by pipeline stage: linear-algebra kernels
(`linalg`), network topology (`graphs`), agent-model analysis (`agents`),
the two adaptive protocol designs (`noncollab`, `collab`), fixed-step
simulation (`simulate`), theory self-checks (`verification`), and the
experiment CLI (`cli`).
"""

__version__ = "0.1.0"
