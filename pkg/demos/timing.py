"""
Timing the front-end check and the back-end
============================================

The front-end checks one frame against the stored graph during tracking;
the back-end rebuilds and checks a graph at every keyframe.
"""

from dynseg.bench import bench_csv, run_bench

rows = run_bench(sizes_frontend=(250, 500, 1000), sizes_backend=(1000, 2000, 4000), runs=5)
print(bench_csv(rows))
small, large = rows["backend_1000"][1], rows["backend_4000"][1]
print(f"back-end time grows x{large / small:.2f} for x4 more points")
