#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ppsvae/distributions.hpp"

namespace ppsvae {

/// Source of every random draw the model makes during one forward pass.
///
/// In the default mode draws come from the engine. A stream can record what
/// it produced and a second stream can replay that log, which freezes the
/// noise (Gumbel, Gaussian) together with the straight-through anchors. The
/// finite-difference gradient checks rely on the replay mode: perturbing a
/// parameter then moves only the differentiable paths.
class NoiseStream {
 public:
  struct Log {
    std::vector<Tensor> draws;
    std::vector<Tensor> anchors;
  };

  explicit NoiseStream(std::uint64_t seed = 0) : rng_(seed) {}
  static NoiseStream replaying(Log log);

  Tensor gumbel(const Shape& shape);
  Tensor normal(const Shape& shape);
  /// Stop-gradient value for a straight-through estimator.
  Tensor anchor(const Tensor& soft);

  void start_recording();
  Log take_log();

  Rng& engine() { return rng_; }
  std::string engine_state() const;
  void restore_engine_state(const std::string& state);

 private:
  Tensor next_replayed(std::vector<Tensor>& source, std::size_t& cursor, const Shape& shape, const char* what);

  Rng rng_;
  bool recording_ = false;
  bool replay_ = false;
  Log log_;
  std::size_t draw_cursor_ = 0;
  std::size_t anchor_cursor_ = 0;
};

/// Deterministic 64-bit mix of a seed and a stream label, for derived streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t label);

}  // namespace ppsvae
