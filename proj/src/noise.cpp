#include "ppsvae/noise.hpp"

#include <sstream>

namespace ppsvae {

NoiseStream NoiseStream::replaying(Log log) {
  NoiseStream s;
  s.replay_ = true;
  s.log_ = std::move(log);
  return s;
}

Tensor NoiseStream::next_replayed(std::vector<Tensor>& source, std::size_t& cursor, const Shape& shape,
                                  const char* what) {
  require(cursor < source.size(), std::string("noise replay ran out of ") + what);
  const Tensor& t = source[cursor++];
  require(t.shape() == shape, std::string("noise replay ") + what + " shape mismatch");
  return t;
}

Tensor NoiseStream::gumbel(const Shape& shape) {
  if (replay_) return next_replayed(log_.draws, draw_cursor_, shape, "draws");
  Tensor t = sample_gumbel(shape, rng_);
  if (recording_) log_.draws.push_back(t);
  return t;
}

Tensor NoiseStream::normal(const Shape& shape) {
  if (replay_) return next_replayed(log_.draws, draw_cursor_, shape, "draws");
  Tensor t(shape);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : t.span()) v = dist(rng_);
  if (recording_) log_.draws.push_back(t);
  return t;
}

Tensor NoiseStream::anchor(const Tensor& soft) {
  if (replay_) return next_replayed(log_.anchors, anchor_cursor_, soft.shape(), "anchors");
  if (recording_) log_.anchors.push_back(soft);
  return soft;
}

void NoiseStream::start_recording() {
  require(!replay_, "cannot record while replaying");
  recording_ = true;
  log_ = {};
}

NoiseStream::Log NoiseStream::take_log() {
  recording_ = false;
  return std::move(log_);
}

std::string NoiseStream::engine_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

void NoiseStream::restore_engine_state(const std::string& state) {
  std::istringstream is(state);
  is >> rng_;
  require(!is.fail(), "malformed rng state");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t label) {
  // splitmix64 finalizer over the combined words.
  std::uint64_t z = seed ^ (label + 0x9E3779B97F4A7C15ULL + (seed << 6) + (seed >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace ppsvae
