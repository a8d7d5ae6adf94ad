#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskcap/errors.hpp"

namespace maskcap {

// Per-video frame feature matrix (N_v x d, row-major), the substrate every
// temporal mask acts on.
struct FrameEmbeddings {
  int n_frames = 0;
  int dim = 0;
  std::vector<double> data;

  double* row(int t) { return data.data() + static_cast<std::size_t>(t) * dim; }
  const double* row(int t) const { return data.data() + static_cast<std::size_t>(t) * dim; }

  void validate() const {
    if (static_cast<std::int64_t>(data.size()) !=
        static_cast<std::int64_t>(n_frames) * dim)
      throw ShapeError("frame embeddings: " + std::to_string(data.size()) + " values for " +
                       std::to_string(n_frames) + "x" + std::to_string(dim));
  }
};

// Normalized temporal interval in [0, 1].
struct Segment {
  double start = 0.0;
  double end = 0.0;

  void validate() const {
    if (start > end) throw DomainError("segment: start > end");
  }
  double length() const { return end - start; }
};

}  // namespace maskcap
