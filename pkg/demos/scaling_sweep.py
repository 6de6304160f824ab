"""
Per-iteration cost as the horizon grows
========================================

Times warm-started receding-horizon solves on random tracking problems and
reports the mean time per ADMM iteration for each horizon length.
"""

from riccati_admm.bench import BenchConfig, memory_model, run_sweep, summarize

config = BenchConfig(axis="horizon", values=[10, 20, 40], n=10, m=4, trials=5, steps=20)
records = run_sweep(config)

base = None
for (n, m, N), s in sorted(summarize(records).items()):
    base = base or s["mean_us"]
    mem = memory_model(n, m, N, config.ladder_size)
    print(f"N={N:3d}: {s['mean_us']:7.1f} us/iter (x{s['mean_us'] / base:.2f})  "
          f"workspace {mem['workspace_bytes']} B  cache {mem['cache_bytes']} B")
