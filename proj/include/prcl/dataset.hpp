#pragma once

#include <string>
#include <vector>

#include "prcl/tensor.hpp"

namespace prcl {

// Labeled sample collection. label_dim == 0 means labels are class indices
// (each label tensor is a scalar holding an integer); label_dim > 0 means
// regression targets of that width.
struct Dataset {
  std::string id;
  Shape input_shape;  // per sample, no batch dimension
  int label_dim = 0;
  int classes = 0;
  std::vector<Tensor> inputs;
  std::vector<Tensor> labels;

  int size() const { return static_cast<int>(inputs.size()); }
  void validate() const;
};

enum class DatasetKind { kTwoMoons, kGaussianBlobs, kDigits8x8 };

DatasetKind dataset_kind_from_name(const std::string& name);
std::string dataset_kind_name(DatasetKind kind);

// Deterministic generators; classes are interleaved by sample index
// (sample i has class i % classes) so any prefix slice stays balanced.
Dataset generate_dataset(DatasetKind kind, int n, uint64_t seed);

// Contiguous view copy [begin, end).
Dataset dataset_slice(const Dataset& ds, int begin, int end);

// Batch assembly: stacks samples [begin, end) into one inputs tensor
// [m, input_shape...] and one labels tensor ([m] for class labels,
// [m, label_dim] otherwise). per_sample_shape overrides the stored shape when
// the element count matches (lets flat CSV rows feed image-shaped networks).
struct Batch {
  Tensor inputs;
  Tensor labels;
  int size = 0;
};
Batch pack_batch(const Dataset& ds, int begin, int end, const Shape& per_sample_shape = {});

// Replaces class-index labels by one-hot target vectors of the given width.
Dataset onehot_targets(const Dataset& ds, int width);

// CSV: header row; the label column is named "label" and may sit anywhere.
// Class labels are written as integers, features as full-precision decimals.
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& ds, const std::string& path);

// IDX (MNIST-style): big-endian dims header, unsigned-byte or float payload.
// Byte image data is scaled to [0,1]. Labels come from a separate rank-1 file.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

}  // namespace prcl
