#include <benchmark/benchmark.h>

// libbenchmark_main.a on this toolchain ships LTO bytecode from another GCC
// release, so the entry point lives here.
BENCHMARK_MAIN();
