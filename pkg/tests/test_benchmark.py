import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "benchmarks"))

import bench_kernels  # noqa: E402


def test_benchmark_runs(capsys):
    results = bench_kernels.main(["--repeat", "2"])
    assert "python" in results and "actor forward+backward" in results["python"]
    assert "speedup" in capsys.readouterr().out
