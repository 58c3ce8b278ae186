// Dense type aliases shared across the project. Row-major storage throughout:
// a batch is a matrix whose rows are examples, an image is one row of
// (height*width*channels) floats, token batches are integer matrices.
#pragma once

#include <Eigen/Dense>

namespace cplab {

using Index = Eigen::Index;

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using ArrX = Eigen::Array<T, Eigen::Dynamic, 1>;

using MatF = MatX<float>;
using MatD = MatX<double>;
using MatI = MatX<int32_t>;
using VecF = VecX<float>;
using ArrF = ArrX<float>;

// Pixel layout of one image row: index(y, x, c) = (y*width + x)*channels + c.
struct ImageDims {
  int height = 32;
  int width = 32;
  int channels = 3;

  Index pixels() const { return Index(height) * width * channels; }
  Index index(int y, int x, int c) const {
    return (Index(y) * width + x) * channels + c;
  }
  bool operator==(const ImageDims&) const = default;
};

}  // namespace cplab
