#ifndef ZIGPRUNE_DATA_HPP
#define ZIGPRUNE_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

#include "zigprune/autograd.hpp"
#include "zigprune/builders.hpp"

namespace zigprune {

/// Samples along the batch axis with integer class labels.
struct Dataset {
  Tensor x;
  std::vector<int> labels;

  std::int64_t size() const { return x.shape.rank() ? x.shape.batch() : 0; }
  /// Rows listed in `idx`, in that order.
  Dataset gather(const std::vector<std::int64_t> &idx) const;
};

struct SplitDataset {
  Dataset train;
  Dataset test;
  int num_classes = 0;
};

struct BlobSpec {
  std::int64_t train = 8000;
  std::int64_t test = 2000;
  int classes = 4;
  std::int64_t channels = 3;
  std::int64_t height = 16;
  std::int64_t width = 16;
  double separation = 0.15; ///< scale of the class-dependent channel means
  double noise = 1.0;       ///< per-pixel standard deviation
};

/// Gaussian blobs rendered as images: every pixel of channel c of a class-k
/// sample is mean(k, c) + noise. Labels are balanced and shuffled.
SplitDataset make_blob_dataset(const BlobSpec &spec, Rng &rng);

/// Directory holding train.csv and test.csv in Fashion-MNIST CSV layout
/// (header row, then "label,p0,p1,..."). Pixels are scaled by 1/255 and
/// reshaped to (1, side, side).
SplitDataset load_image_csv(const std::filesystem::path &dir);

/// `<stem>.json` header {"format","shape","labels"} plus `<stem>.bin` holding
/// little-endian doubles.
void save_tensor(const Tensor &t, const std::filesystem::path &stem,
                 const std::vector<int> &labels = {});
Tensor load_tensor(const std::filesystem::path &stem, std::vector<int> *labels = nullptr);

} // namespace zigprune

#endif
