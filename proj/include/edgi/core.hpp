#pragma once

#include <cblas.h>

#include <cmath>
#include <cstdint>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

extern "C" void openblas_set_num_threads(int);

namespace edgi {

using Dim = std::int64_t;
using Shape = std::vector<Dim>;

inline Dim numel(const Shape& shape) {
    Dim n = 1;
    for (Dim d : shape) n *= d;
    return n;
}

inline std::vector<Dim> row_major_strides(const Shape& shape) {
    std::vector<Dim> strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        strides[i] = strides[i + 1] * shape[i + 1];
    return strides;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core with Box-Muller normals; no dependence on
// libstdc++ distribution internals so frozen test values stay portable.
// ---------------------------------------------------------------------------

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller (one uniform pair per draw).
    double normal() {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

  private:
    std::uint64_t state_;
};

// Stable derivation of independent seed streams from a master seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t seed_stream(std::uint64_t master, std::uint64_t tag0,
                                 std::uint64_t tag1 = 0, std::uint64_t tag2 = 0) {
    return mix_seed(mix_seed(mix_seed(master, tag0), tag1), tag2);
}

// ---------------------------------------------------------------------------
// GEMM wrapper. BLAS is pinned to one thread; parallelism lives at the
// sample/episode level where it stays deterministic.
// ---------------------------------------------------------------------------

inline void ensure_single_thread_blas() {
    static std::once_flag flag;
    std::call_once(flag, [] { openblas_set_num_threads(1); });
}

inline void gemm(bool trans_a, bool trans_b, Dim m, Dim n, Dim k, float alpha, const float* a,
                 Dim lda, const float* b, Dim ldb, float beta, float* c, Dim ldc) {
    ensure_single_thread_blas();
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, Dim m, Dim n, Dim k, double alpha, const double* a,
                 Dim lda, const double* b, Dim ldb, double beta, double* c, Dim ldc) {
    ensure_single_thread_blas();
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

// ---------------------------------------------------------------------------
// Deterministic work partitioning: results never depend on the worker count
// because each job index is processed independently.
// ---------------------------------------------------------------------------

template <class Fn>
void parallel_for(Dim n_jobs, int n_workers, Fn&& fn) {
    if (n_workers <= 1 || n_jobs <= 1) {
        for (Dim i = 0; i < n_jobs; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    std::mutex mu;
    Dim next = 0;
    auto worker = [&] {
        for (;;) {
            Dim i;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= n_jobs) return;
                i = next++;
            }
            fn(i);
        }
    };
    int count = static_cast<int>(std::min<Dim>(n_workers, n_jobs));
    threads.reserve(count);
    for (int w = 0; w < count; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
}

}  // namespace edgi
