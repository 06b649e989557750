#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ppsvae/tensor.hpp"

namespace ppsvae {

struct Dataset {
  std::string name;
  std::string split;  // "train" or "test"
  Tensor images;      // N x C x H x W in [0, 1]
  std::vector<int> labels;  // empty when unlabeled
  int num_classes = 0;
  /// Binary N x H x W foreground masks; synthetic data only.
  Tensor shape_masks;
  /// Optional per-image attribute columns (CelebA: Chubby, Male, Oval_Face).
  std::vector<std::vector<int>> attributes;

  int size() const { return images.rank() == 4 ? images.dim(0) : 0; }
  int channels() const { return images.dim(1); }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }
  bool labeled() const { return !labels.empty(); }

  /// C x H x W copy of image i.
  Tensor image(int i) const;
  /// Images at the given indices as an N x C x H x W batch.
  Tensor gather(const std::vector<int>& indices) const;
  Dataset subset(const std::vector<int>& indices) const;
  /// Throws ContractViolation if a Dataset invariant fails.
  void check_invariants() const;
};

/// Shape classes, in label order.
inline constexpr const char* kShapeNames[] = {"rectangle", "disk", "cross", "triangle", "ring"};

/// Anti-aliased grayscale shapes of random position, size and intensity.
/// Labels cycle through the classes so every class gets n / num_classes images (+1).
Dataset synth_shapes(int n, int height, int width, int num_classes, std::uint64_t seed);

/// Reads fashion_mnist (idx, optionally .gz), cifar10 (binary batches) or
/// celeba (aligned JPEGs plus attribute and partition lists) from root.
/// max_items > 0 keeps only the first max_items images.
Dataset load_dataset(const std::string& name, const std::filesystem::path& root, const std::string& split,
                     int max_items = 0);

/// Index batches for one epoch. Covers 0..n-1 exactly once; the order is a
/// pure function of (seed, epoch). The last batch may be short.
std::vector<std::vector<int>> batch_iter(int n, int batch_size, std::uint64_t seed, std::uint64_t epoch,
                                         bool shuffle);

/// Random train / held-out index split of [0, n) by fraction.
void split_indices(int n, double held_out_fraction, std::uint64_t seed, std::vector<int>& train,
                   std::vector<int>& held_out);

}  // namespace ppsvae
