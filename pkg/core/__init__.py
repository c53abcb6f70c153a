"""
Numerical core: RBF kernel calculus, scenario model, GDA simulation engines,
closed-form spectrum of the local linearization and the brute-force Jacobian oracle.
"""
