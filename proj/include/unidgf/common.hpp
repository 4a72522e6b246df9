#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace unidgf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Structural problem in a hierarchy specification (orphan node, duplicate id, ...).
class TreeError : public Error {
 public:
  using Error::Error;
};

// Malformed or tree-inconsistent token sequence / label.
class CodecError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Worker threads. UNIDGF_THREADS caps the count; defaults to the hardware
// concurrency. Also forwarded to Eigen so GEMMs use the same pool.

int thread_count();
void set_thread_count(int n);
void init_threads_from_env();

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core with Box-Muller normals; bit-stable for
// one platform, independent of libstdc++ distribution internals.

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  // uniform in [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // inclusive bounds
  int uniform_int(int lo, int hi);
  float normal(float mean, float stddev);

 private:
  uint64_t state_;
  bool has_spare_ = false;
  float spare_ = 0.0f;
};

// Derives a child seed from a parent seed and a stream tag.
uint64_t mix_seed(uint64_t a, uint64_t b);

}  // namespace unidgf
