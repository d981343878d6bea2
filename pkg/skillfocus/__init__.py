"""
skillfocus

Skill-focused policy optimization for hierarchical skill-selector/command policies,
with a deterministic 2-D ball-dribbling simulator and a box-adaptive curriculum.
"""

__version__ = "1.0.0"
