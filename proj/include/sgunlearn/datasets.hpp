#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgunlearn/matrix.hpp"

namespace sgu {

enum class Split { kTrain, kVal, kTestAudit, kTestEval };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

// A labeled dataset with a fixed four-way split. Immutable after construction.
struct DatasetBundle {
  Matrix features;                // n x d
  std::vector<long> labels;       // values in [0, K)
  std::vector<Split> split_ids;   // one per row
  long num_classes = 0;
  std::uint64_t seed = 0;

  long rows() const { return features.rows; }
  long dim() const { return features.cols; }
  std::vector<long> rows_in(Split s) const;

  // Seed is provenance, not content: equality compares the data.
  bool operator==(const DatasetBundle& o) const {
    return features == o.features && labels == o.labels && split_ids == o.split_ids &&
           num_classes == o.num_classes;
  }
};

enum class ForgetMode { kRandom, kClasswise };

// Partition of the train rows into forget and retain. Indices are absolute
// row ids into the bundle.
struct ForgetPartition {
  std::vector<long> forget_indices;
  std::vector<long> retain_indices;
  ForgetMode mode = ForgetMode::kRandom;
  double ratio = 0.0;        // random mode
  long forget_class = -1;    // classwise mode
  std::uint64_t seed = 0;
};

// K Gaussian blobs with unit isotropic covariance, class k centered at
// separation * u_k for unit directions u_k equally spaced on the circle in
// the first two coordinates. Rows are grouped by class; splits are assigned
// per class at fractions 60/10/15/15 (train/val/test_audit/test_eval).
DatasetBundle gen_gaussian_mixture(long num_classes, long n_per_class, long dim, double separation,
                                   std::uint64_t seed);

ForgetPartition split_forget_random(const DatasetBundle& bundle, double ratio, std::uint64_t seed);
ForgetPartition split_forget_classwise(const DatasetBundle& bundle, long forget_class,
                                       std::uint64_t seed);

// CSV with header f0,...,f{d-1},label,split. Floats at 17 significant digits,
// so a round trip is value-exact.
void save_csv(const DatasetBundle& bundle, const std::string& path);
DatasetBundle load_csv(const std::string& path);

}  // namespace sgu
