"""
Sliding mode learning control simulator: fuzzy inference, controller laws,
plants, the closed-loop runner, diagnostics and the command bodies.
"""
