"""Experiments: umbrella sampling + WHAM, posterior diagnostics, and the task runners."""


def __getattr__(name: str):
    """Lazy load modules on first use (keeps `import posterior_lab.pipeline` cheap)."""
    if name in ("run_umbrella", "wham", "ground_truth_profile", "compare_methods", "profile_rmse"):
        from posterior_lab.pipeline import umbrella

        return getattr(umbrella, name)
    if name in ("posterior_necessary_conditions", "wt_curve", "term_ratio_curve", "ks_normal_test"):
        from posterior_lab.pipeline import diagnostics

        return getattr(diagnostics, name)
    if name in ("run_task", "RunResult"):
        from posterior_lab.pipeline import tasks

        return getattr(tasks, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = [
    "run_umbrella",
    "wham",
    "ground_truth_profile",
    "compare_methods",
    "profile_rmse",
    "posterior_necessary_conditions",
    "wt_curve",
    "term_ratio_curve",
    "ks_normal_test",
    "run_task",
    "RunResult",
]
