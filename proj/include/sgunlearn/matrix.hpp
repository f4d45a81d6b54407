#pragma once

#include <cstddef>
#include <vector>

#include "sgunlearn/errors.hpp"

namespace sgu {

// Dense row-major matrix of doubles. The plain (non-differentiable) data
// carrier used by datasets, the attacker and the metrics.
struct Matrix {
  long rows = 0;
  long cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(long r, long c) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), 0.0) {
    if (r < 0 || c < 0) throw ContractError("Matrix: negative dimension");
  }

  double& at(long r, long c) { return v[static_cast<std::size_t>(r * cols + c)]; }
  double at(long r, long c) const { return v[static_cast<std::size_t>(r * cols + c)]; }

  const double* row_ptr(long r) const { return v.data() + r * cols; }

  Matrix take_rows(const std::vector<long>& indices) const {
    Matrix out(static_cast<long>(indices.size()), cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const long r = indices[i];
      if (r < 0 || r >= rows) throw ContractError("Matrix::take_rows: index out of range");
      for (long c = 0; c < cols; ++c) out.at(static_cast<long>(i), c) = at(r, c);
    }
    return out;
  }

  bool operator==(const Matrix& other) const {
    return rows == other.rows && cols == other.cols && v == other.v;
  }
};

template <typename T>
inline std::vector<T> take(const std::vector<T>& values, const std::vector<long>& indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (long i : indices) out.push_back(values[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace sgu
