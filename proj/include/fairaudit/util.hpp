#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fairaudit {

/// Runs fn(i) for i in [0, n). With workers > 1 the range is split into
/// contiguous chunks, one thread per chunk; fn must only write to
/// index-disjoint state. The first exception thrown by any worker is
/// rethrown on the calling thread.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

/// Resolves a worker-count request: 0 means "use FAIRAUDIT_WORKERS or 1".
int resolve_workers(int requested);

/// Writes content to path via a temp file + rename so readers never see a
/// partial file. Parent directories are created if missing.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// Formats v with 6 significant digits ("%.6g"); -0 is normalized to 0.
std::string format_g6(double v);

/// Rounds v to the value format_g6 would print (stable table/json agreement).
double round_g6(double v);

/// Linear-interpolation percentile of an already sorted sample, p in [0,100].
double percentile_sorted(std::span<const double> sorted, double p);

/// Deterministic 64-bit stream id for (seed, tag); used to give every
/// speaker / stratum its own RNG substream independent of scheduling.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

/// mt19937_64 with explicit, platform-independent samplers (the standard
/// pins the engine but not the library distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller (two uniforms per pair, cached).
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [lo, hi] via rejection-free scaling (deterministic).
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi);

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

std::string join(std::span<const std::string> parts, std::string_view sep);

}  // namespace fairaudit
