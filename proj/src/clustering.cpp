#include "spatial_diar/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

#include "spatial_diar/errors.hpp"

namespace spatial_diar {

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

RealMatrix normalized_affinity(const RealMatrix& a) {
  const Eigen::Index m = a.rows();
  Eigen::VectorXd inv_sqrt(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double degree = a.row(i).sum();
    inv_sqrt(i) = degree > 0.0 ? 1.0 / std::sqrt(degree) : 0.0;
  }
  return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> laplacian_eigen(const RealMatrix& a) {
  if (a.rows() != a.cols()) throw InputError("affinity matrix must be square");
  const Eigen::MatrixXd lap =
      Eigen::MatrixXd::Identity(a.rows(), a.cols()) - Eigen::MatrixXd(normalized_affinity(a));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (lap + lap.transpose()));
  if (solver.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  return solver;
}

struct KMeansRun {
  std::vector<int> labels;
  double inertia = std::numeric_limits<double>::infinity();
};

KMeansRun kmeans_once(const Eigen::MatrixXd& x, int k, int max_iterations, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd centers(k, x.cols());
  // k-means++ seeding.
  centers.row(0) = x.row(static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n)) % n);
  Eigen::VectorXd nearest = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = nearest.sum();
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += nearest(i);
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n)) % n;
    }
    centers.row(c) = x.row(pick);
    nearest = nearest.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  KMeansRun run;
  run.labels.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
      if (run.labels[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
        run.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(run.labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(run.labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        continue;
      }
      // Empty cluster: move it onto the point farthest from its center.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d =
            (x.row(i) - centers.row(run.labels[static_cast<std::size_t>(i)])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centers.row(c) = x.row(far);
      run.labels[static_cast<std::size_t>(far)] = c;
    }
  }
  run.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    run.inertia += (x.row(i) - centers.row(run.labels[static_cast<std::size_t>(i)])).squaredNorm();
  }
  return run;
}

ClusterAssignment relabel_by_first_appearance(const std::vector<int>& labels) {
  ClusterAssignment out;
  std::vector<int> remap;
  out.labels.reserve(labels.size());
  for (int label : labels) {
    if (label >= static_cast<int>(remap.size())) remap.resize(static_cast<std::size_t>(label) + 1, -1);
    if (remap[static_cast<std::size_t>(label)] < 0) remap[static_cast<std::size_t>(label)] = out.num_clusters++;
    out.labels.push_back(remap[static_cast<std::size_t>(label)]);
  }
  return out;
}

}  // namespace

RealMatrix cosine_affinity(const RealMatrix& vectors) {
  const Eigen::Index m = vectors.rows();
  if (!vectors.allFinite()) throw InputError("embeddings contain non-finite values");
  RealMatrix unit = vectors;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double norm = unit.row(i).norm();
    if (!(norm > 0.0)) throw InputError("embedding " + std::to_string(i) + " has zero norm");
    unit.row(i) /= norm;
  }
  RealMatrix a = (unit * unit.transpose()).cwiseMax(0.0);
  a = 0.5 * (a + a.transpose()).eval();
  a.diagonal().setOnes();
  return a;
}

RealMatrix refine_affinity(const RealMatrix& affinity, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw InputError("keep_fraction must lie in (0, 1]");
  }
  const Eigen::Index m = affinity.rows();
  const auto keep = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::ceil(keep_fraction * static_cast<double>(m))));
  RealMatrix out = RealMatrix::Zero(m, m);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return affinity(i, a) > affinity(i, b);
    });
    for (Eigen::Index r = 0; r < keep; ++r) out(i, order[static_cast<std::size_t>(r)]) = affinity(i, order[static_cast<std::size_t>(r)]);
    out(i, i) = affinity(i, i);
  }
  return 0.5 * (out + out.transpose());
}

int estimate_num_speakers(const RealMatrix& affinity, int max_k) {
  const auto m = static_cast<int>(affinity.rows());
  if (m < 2) return 1;
  if (max_k < 1) throw InputError("max_k must be >= 1");
  const auto solver = laplacian_eigen(affinity);
  const Eigen::VectorXd& lambda = solver.eigenvalues();
  const int limit = std::min(max_k, m - 1);
  int best = 1;
  double best_gap = -1.0;
  for (int k = 1; k <= limit; ++k) {
    const double gap = lambda(k) - lambda(k - 1);
    if (gap > best_gap) {
      best_gap = gap;
      best = k;
    }
  }
  return best;
}

ClusterAssignment spectral_cluster(const RealMatrix& affinity, int k, const KMeansOptions& opts) {
  const auto m = static_cast<int>(affinity.rows());
  if (k < 1 || k > m) throw InputError("cluster count must lie in [1, M]");
  if (opts.restarts < 1) throw InputError("k-means needs at least one restart");
  if (k == m) {
    std::vector<int> labels(static_cast<std::size_t>(m));
    std::iota(labels.begin(), labels.end(), 0);
    return relabel_by_first_appearance(labels);
  }
  const auto solver = laplacian_eigen(affinity);
  Eigen::MatrixXd u = solver.eigenvectors().leftCols(k);
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double norm = u.row(i).norm();
    if (norm > 0.0) u.row(i) /= norm;
  }
  std::mt19937_64 rng(opts.seed);
  KMeansRun best;
  for (int r = 0; r < opts.restarts; ++r) {
    KMeansRun run = kmeans_once(u, k, opts.max_iterations, rng);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return relabel_by_first_appearance(best.labels);
}

DiarizationMatrix segments_to_diarization(const ClusterAssignment& assignment,
                                          const std::vector<SegmentSpan>& spans,
                                          double frame_rate, int total_frames) {
  if (assignment.labels.size() != spans.size()) {
    throw InputError("assignment and span counts differ");
  }
  if (!(frame_rate > 0.0)) throw InputError("frame rate must be positive");
  DiarizationMatrix out{RealMatrix::Zero(total_frames, assignment.num_clusters), frame_rate};
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const long long a = std::clamp<long long>(std::llround(spans[i].start_s * frame_rate), 0, total_frames);
    const long long b = std::clamp<long long>(std::llround(spans[i].end_s * frame_rate), 0, total_frames);
    for (long long l = a; l < b; ++l) {
      out.d(static_cast<Eigen::Index>(l), assignment.labels[i]) = 1.0;
    }
  }
  return out;
}

std::vector<std::size_t> kept_segment_indices(const SegmentList& segments,
                                              const std::optional<std::vector<int>>& word_counts,
                                              const FilterOptions& opts) {
  if (word_counts && word_counts->size() != segments.size()) {
    throw InputError("word counts are not aligned with the segments");
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const bool keep = word_counts ? (*word_counts)[i] >= opts.min_words
                                  : segments[i].duration >= opts.min_duration_s;
    if (keep) kept.push_back(i);
  }
  return kept;
}

SegmentList filter_short_segments(const SegmentList& segments,
                                  const std::optional<std::vector<int>>& word_counts,
                                  const FilterOptions& opts) {
  SegmentList out;
  for (std::size_t i : kept_segment_indices(segments, word_counts, opts)) out.push_back(segments[i]);
  return out;
}

}  // namespace spatial_diar
