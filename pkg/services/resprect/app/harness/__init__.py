"""
Experiment harness: checkpoints, run logs, reports and the run driver
"""
