"""Task-and-motion planning for a robot working alongside a human.

Timeline-based Pareto plan synthesis, multi-goal grid motion planning and a
discrete-event simulator with replanning.
"""

__version__ = "0.1.0"
