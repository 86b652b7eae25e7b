"""Recovery of linear regressors observed only through their maximum."""
