#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "spfann/errors.hpp"
#include "spfann/types.hpp"

namespace spf {

// Squared Euclidean distance between two dense vectors or expressions.
template <typename A, typename B>
typename A::Scalar squared_l2(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  return (a.derived().reshaped() - b.derived().reshaped()).squaredNorm();
}

// Checked variant: throws ShapeError when sizes differ.
template <typename A, typename B>
typename A::Scalar exact_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.size() != b.size()) throw ShapeError("dimension mismatch in exact_distance");
  return squared_l2(a, b);
}

inline float exact_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("dimension mismatch in exact_distance");
  using ConstMap = Eigen::Map<const Eigen::VectorXf>;
  return squared_l2(ConstMap(a.data(), static_cast<Eigen::Index>(a.size())),
                    ConstMap(b.data(), static_cast<Eigen::Index>(b.size())));
}

inline constexpr int kPqCentroids = 256;

// Product-quantization codebook: one 256-entry centroid table per subspace.
// Row (m * 256 + c) of `centroids` is centroid c of subspace m.
struct PqCodebook {
  int dim = 0;
  int n_subspaces = 0;
  int sub_dim = 0;
  RowMatrixXf centroids;

  int bytes_per_vector() const { return n_subspaces; }
  auto centroid(int m, int c) const { return centroids.row(m * kPqCentroids + c); }
};

// Query-to-centroid squared distances; entry (m, c) covers subspace m.
using AdcTable = Eigen::Matrix<float, Eigen::Dynamic, kPqCentroids, Eigen::RowMajor>;

struct PqTrainStats {
  // Mean squared quantization error after each k-means iteration, summed
  // over subspaces. Non-increasing.
  std::vector<double> error_per_iteration;
  double final_mse = 0.0;
};

struct PqTrainOptions {
  int iterations = 15;
  std::size_t max_sample = 100'000;
};

// Trains per-subspace k-means (k-means++ seeding, fixed iteration cap).
// `sample` has one vector per row.
PqCodebook train_codebook(const RowMatrixXf& sample, int n_subspaces, std::uint64_t seed,
                          const PqTrainOptions& opts = {}, PqTrainStats* stats = nullptr);

// Nearest centroid per subspace; ties go to the lowest index.
template <typename V>
void encode_into(const PqCodebook& cb, const Eigen::MatrixBase<V>& v, std::span<std::uint8_t> out) {
  if (v.size() != cb.dim) throw ShapeError("dimension mismatch in encode");
  if (static_cast<int>(out.size()) != cb.n_subspaces) throw ShapeError("code buffer size");
  const auto flat = v.derived().reshaped();
  for (int m = 0; m < cb.n_subspaces; ++m) {
    const auto sub = flat.segment(m * cb.sub_dim, cb.sub_dim).transpose();
    int best = 0;
    float best_d = (cb.centroid(m, 0) - sub).squaredNorm();
    for (int c = 1; c < kPqCentroids; ++c) {
      const float d = (cb.centroid(m, c) - sub).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out[static_cast<std::size_t>(m)] = static_cast<std::uint8_t>(best);
  }
}

template <typename V>
std::vector<std::uint8_t> encode(const PqCodebook& cb, const Eigen::MatrixBase<V>& v) {
  std::vector<std::uint8_t> code(static_cast<std::size_t>(cb.n_subspaces));
  encode_into(cb, v, code);
  return code;
}

Eigen::VectorXf reconstruct(const PqCodebook& cb, std::span<const std::uint8_t> code);

template <typename V>
AdcTable adc_table(const PqCodebook& cb, const Eigen::MatrixBase<V>& query) {
  if (query.size() != cb.dim) throw ShapeError("dimension mismatch in adc_table");
  AdcTable table(cb.n_subspaces, kPqCentroids);
  const auto flat = query.derived().reshaped();
  for (int m = 0; m < cb.n_subspaces; ++m) {
    const auto sub = flat.segment(m * cb.sub_dim, cb.sub_dim).transpose();
    const auto block = cb.centroids.middleRows(m * kPqCentroids, kPqCentroids);
    table.row(m) = (block.rowwise() - sub).rowwise().squaredNorm().transpose();
  }
  return table;
}

inline float adc_distance(const AdcTable& table, std::span<const std::uint8_t> code) {
  if (static_cast<Eigen::Index>(code.size()) != table.rows()) {
    throw ShapeError("code length does not match the distance table");
  }
  float sum = 0.0f;
  for (std::size_t m = 0; m < code.size(); ++m) {
    sum += table(static_cast<Eigen::Index>(m), code[m]);
  }
  return sum;
}

// Codes for a whole base set, one row of n_subspaces bytes per vector.
class PqCodes {
 public:
  PqCodes() = default;
  PqCodes(std::size_t count, int n_subspaces)
      : n_subspaces_(n_subspaces), bytes_(count * static_cast<std::size_t>(n_subspaces)) {}

  std::size_t size() const { return n_subspaces_ ? bytes_.size() / n_subspaces_ : 0; }
  int n_subspaces() const { return n_subspaces_; }
  std::span<const std::uint8_t> operator[](std::size_t i) const {
    return {bytes_.data() + i * n_subspaces_, static_cast<std::size_t>(n_subspaces_)};
  }
  std::span<std::uint8_t> operator[](std::size_t i) {
    return {bytes_.data() + i * n_subspaces_, static_cast<std::size_t>(n_subspaces_)};
  }
  const std::vector<std::uint8_t>& raw() const { return bytes_; }

  friend bool operator==(const PqCodes&, const PqCodes&) = default;

 private:
  int n_subspaces_ = 0;
  std::vector<std::uint8_t> bytes_;
};

PqCodes encode_all(const PqCodebook& cb, const RowMatrixXf& vectors);

// Files: "PQCBOOK1" u32 dim, u32 M, centroids f32 row-major;
//        "PQCODES1" u32 count, u32 M, raw code bytes.
void save_codebook(const PqCodebook& cb, const std::filesystem::path& path);
PqCodebook load_codebook(const std::filesystem::path& path);
void save_codes(const PqCodes& codes, const std::filesystem::path& path);
PqCodes load_codes(const std::filesystem::path& path);

}  // namespace spf
