#pragma once

#include <stdexcept>

#include "gcvamd/nn.hpp"

namespace gcvamd {

/// N images of one shape, stored one per column in height-width-channel order.
struct ImageBatch {
  nn::Shape3 shape;
  nn::Matrix data;  // shape.size() x N

  ImageBatch() = default;
  ImageBatch(nn::Shape3 s, Eigen::Index count) : shape(s), data(nn::Matrix::Zero(s.size(), count)) {}
  ImageBatch(nn::Shape3 s, nn::Matrix values) : shape(s), data(std::move(values)) {
    if (data.rows() != shape.size()) throw std::invalid_argument("image data rows do not match shape");
  }

  Eigen::Index count() const { return data.cols(); }

  double& at(Eigen::Index n, int y, int x, int c) {
    return data(static_cast<Eigen::Index>((y * shape.w + x) * shape.c + c), n);
  }
  double at(Eigen::Index n, int y, int x, int c) const {
    return data(static_cast<Eigen::Index>((y * shape.w + x) * shape.c + c), n);
  }

  ImageBatch select(const std::vector<Eigen::Index>& columns) const {
    ImageBatch out(shape, static_cast<Eigen::Index>(columns.size()));
    for (std::size_t i = 0; i < columns.size(); ++i) out.data.col(static_cast<Eigen::Index>(i)) = data.col(columns[i]);
    return out;
  }
};

}  // namespace gcvamd
