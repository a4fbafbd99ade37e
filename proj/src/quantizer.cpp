#include "spfann/quantizer.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "spfann/page_store.hpp"

namespace spf {

namespace {

constexpr Magic kCodebookMagic = make_magic("PQCBOOK1");
constexpr Magic kCodesMagic = make_magic("PQCODES1");
constexpr Eigen::Index kAssignChunk = 4096;

// Nearest centroid for every row of `x`, via |x|^2 - 2 x.c + |c|^2 in chunks.
// Returns the summed squared error; fills `assign` and `err`.
double assign_points(const RowMatrixXf& x, const RowMatrixXf& centroids,
                     std::vector<int>& assign, std::vector<float>& err) {
  const Eigen::Index n = x.rows();
  const Eigen::VectorXf c_norms = centroids.rowwise().squaredNorm();
  double total = 0.0;
  Eigen::MatrixXf dots;
  for (Eigen::Index start = 0; start < n; start += kAssignChunk) {
    const Eigen::Index len = std::min(kAssignChunk, n - start);
    const auto block = x.middleRows(start, len);
    dots.noalias() = block * centroids.transpose();
    for (Eigen::Index i = 0; i < len; ++i) {
      const float x_norm = block.row(i).squaredNorm();
      Eigen::Index best = 0;
      const float d = (c_norms.transpose() - 2.0f * dots.row(i)).minCoeff(&best);
      const float e = std::max(0.0f, d + x_norm);
      assign[static_cast<std::size_t>(start + i)] = static_cast<int>(best);
      err[static_cast<std::size_t>(start + i)] = e;
      total += e;
    }
  }
  return total;
}

RowMatrixXf seed_plus_plus(const RowMatrixXf& x, Rng& rng) {
  const Eigen::Index n = x.rows();
  RowMatrixXf centroids(kPqCentroids, x.cols());
  std::vector<double> d2(static_cast<std::size_t>(n));
  Eigen::Index first = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
  centroids.row(0) = x.row(first);
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (x.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < kPqCentroids; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    } else {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    centroids.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min<double>(d2[i], (x.row(i) - centroids.row(c)).squaredNorm());
    }
  }
  return centroids;
}

// Lloyd iterations on one subspace. Appends the error after each iteration.
RowMatrixXf kmeans(const RowMatrixXf& x, Rng& rng, int iterations, std::vector<double>& errors) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  RowMatrixXf centroids = seed_plus_plus(x, rng);
  std::vector<int> assign(static_cast<std::size_t>(n));
  std::vector<float> err(static_cast<std::size_t>(n));
  assign_points(x, centroids, assign, err);

  Eigen::MatrixXd sums(kPqCentroids, d);
  std::vector<std::size_t> counts(kPqCentroids);
  for (int it = 0; it < iterations; ++it) {
    sums.setZero();
    std::fill(counts.begin(), counts.end(), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      sums.row(c) += x.row(i).cast<double>();
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < kPqCentroids; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = (sums.row(c) / static_cast<double>(counts[c])).cast<float>();
        continue;
      }
      // Empty cluster: move it onto the point currently worst served.
      const auto far = std::max_element(err.begin(), err.end()) - err.begin();
      centroids.row(c) = x.row(far);
      err[static_cast<std::size_t>(far)] = 0.0f;
    }
    const double total = assign_points(x, centroids, assign, err);
    if (static_cast<std::size_t>(it) >= errors.size()) errors.push_back(0.0);
    errors[static_cast<std::size_t>(it)] += total / static_cast<double>(n);
  }
  return centroids;
}

}  // namespace

PqCodebook train_codebook(const RowMatrixXf& sample, int n_subspaces, std::uint64_t seed,
                          const PqTrainOptions& opts, PqTrainStats* stats) {
  const Eigen::Index dim = sample.cols();
  if (n_subspaces <= 0 || dim == 0 || dim % n_subspaces != 0) {
    throw TrainingError("subspace count " + std::to_string(n_subspaces) +
                        " does not divide dimension " + std::to_string(dim));
  }
  if (sample.rows() < kPqCentroids) {
    throw TrainingError("need at least 256 training vectors, got " +
                        std::to_string(sample.rows()));
  }
  Rng rng(seed);
  RowMatrixXf train;
  const RowMatrixXf* x = &sample;
  if (static_cast<std::size_t>(sample.rows()) > opts.max_sample) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(sample.rows()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    for (std::size_t i = 0; i < opts.max_sample; ++i) {
      const auto j = i + rng.below(idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(opts.max_sample);
    std::sort(idx.begin(), idx.end());
    train.resize(static_cast<Eigen::Index>(idx.size()), dim);
    for (std::size_t i = 0; i < idx.size(); ++i) train.row(static_cast<Eigen::Index>(i)) = sample.row(idx[i]);
    x = &train;
  }

  PqCodebook cb;
  cb.dim = static_cast<int>(dim);
  cb.n_subspaces = n_subspaces;
  cb.sub_dim = static_cast<int>(dim) / n_subspaces;
  cb.centroids.resize(static_cast<Eigen::Index>(n_subspaces) * kPqCentroids, cb.sub_dim);

  std::vector<double> errors;
  for (int m = 0; m < n_subspaces; ++m) {
    const RowMatrixXf sub = x->middleCols(m * cb.sub_dim, cb.sub_dim);
    Rng sub_rng(mix64(seed, static_cast<std::uint64_t>(m)));
    cb.centroids.middleRows(m * kPqCentroids, kPqCentroids) =
        kmeans(sub, sub_rng, opts.iterations, errors);
  }
  if (stats) {
    stats->error_per_iteration = errors;
    stats->final_mse = errors.empty() ? 0.0 : errors.back();
  }
  return cb;
}

Eigen::VectorXf reconstruct(const PqCodebook& cb, std::span<const std::uint8_t> code) {
  if (static_cast<int>(code.size()) != cb.n_subspaces) throw ShapeError("code length mismatch");
  Eigen::VectorXf out(cb.dim);
  for (int m = 0; m < cb.n_subspaces; ++m) {
    out.segment(m * cb.sub_dim, cb.sub_dim) = cb.centroid(m, code[static_cast<std::size_t>(m)]).transpose();
  }
  return out;
}

PqCodes encode_all(const PqCodebook& cb, const RowMatrixXf& vectors) {
  if (vectors.cols() != cb.dim) throw ShapeError("dimension mismatch in encode_all");
  PqCodes codes(static_cast<std::size_t>(vectors.rows()), cb.n_subspaces);
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    encode_into(cb, vectors.row(i), codes[static_cast<std::size_t>(i)]);
  }
  return codes;
}

void save_codebook(const PqCodebook& cb, const std::filesystem::path& path) {
  ByteWriter w;
  w.put_magic(kCodebookMagic);
  w.put(static_cast<std::uint32_t>(cb.dim));
  w.put(static_cast<std::uint32_t>(cb.n_subspaces));
  w.put_array(std::span<const float>(cb.centroids.data(), static_cast<std::size_t>(cb.centroids.size())));
  write_file(path, w.bytes());
}

PqCodebook load_codebook(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic(kCodebookMagic, path.string());
  PqCodebook cb;
  cb.dim = static_cast<int>(r.get<std::uint32_t>());
  cb.n_subspaces = static_cast<int>(r.get<std::uint32_t>());
  if (cb.n_subspaces <= 0 || cb.dim % cb.n_subspaces != 0) {
    throw CorruptionError(path.string() + ": inconsistent codebook shape");
  }
  cb.sub_dim = cb.dim / cb.n_subspaces;
  cb.centroids.resize(static_cast<Eigen::Index>(cb.n_subspaces) * kPqCentroids, cb.sub_dim);
  r.get_array(std::span<float>(cb.centroids.data(), static_cast<std::size_t>(cb.centroids.size())));
  return cb;
}

void save_codes(const PqCodes& codes, const std::filesystem::path& path) {
  ByteWriter w;
  w.put_magic(kCodesMagic);
  w.put(static_cast<std::uint32_t>(codes.size()));
  w.put(static_cast<std::uint32_t>(codes.n_subspaces()));
  w.put_array(std::span<const std::uint8_t>(codes.raw()));
  write_file(path, w.bytes());
}

PqCodes load_codes(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic(kCodesMagic, path.string());
  const auto count = r.get<std::uint32_t>();
  const auto m = r.get<std::uint32_t>();
  PqCodes codes(count, static_cast<int>(m));
  for (std::size_t i = 0; i < count; ++i) r.get_array(codes[i]);
  return codes;
}

}  // namespace spf
