#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace hemo::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// A batch of 1D signals: one (channels x length) matrix per sample,
// column-major so a time step's channels are contiguous.
template <class S>
using Batch = std::vector<Mat<S>>;

// Fixed chunk count for all batch-parallel loops and gradient reductions.
// Chunks are reduced in index order, so results do not depend on how many
// threads execute them.
inline constexpr int kChunks = 8;

struct ChunkRange {
  int begin = 0;
  int end = 0;
};

inline ChunkRange chunk_range(int n, int chunk) {
  const int base = n / kChunks;
  const int rem = n % kChunks;
  const int begin = chunk * base + std::min(chunk, rem);
  return {begin, begin + base + (chunk < rem ? 1 : 0)};
}

template <class F>
void parallel_chunks(int n, F&& fn) {
#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < kChunks; ++c) {
    const ChunkRange r = chunk_range(n, c);
    for (int i = r.begin; i < r.end; ++i) fn(c, i);
  }
}

// Named view of one trainable tensor and its gradient accumulator.
template <class S>
struct ParamRef {
  std::string name;
  Mat<S>* value = nullptr;
  Mat<S>* grad = nullptr;
};

template <class S>
Mat<S> flatten_batch(const Batch<S>& x) {
  const int dim = static_cast<int>(x.front().size());
  Mat<S> out(dim, static_cast<int>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.col(static_cast<int>(i)) =
        Eigen::Map<const Vec<S>>(x[i].data(), dim);
  }
  return out;
}

template <class S>
Batch<S> unflatten_batch(const Mat<S>& x, int channels, int length) {
  Batch<S> out(static_cast<std::size_t>(x.cols()));
  for (int i = 0; i < x.cols(); ++i) {
    out[static_cast<std::size_t>(i)] =
        Eigen::Map<const Mat<S>>(x.col(i).data(), channels, length);
  }
  return out;
}

}  // namespace hemo::nn
