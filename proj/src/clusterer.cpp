#include "cissl/clusterer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "cissl/augment.hpp"
#include "cissl/error.hpp"
#include "cissl/kernels.hpp"
#include "cissl/rng.hpp"

namespace cissl::cluster {

namespace {

constexpr int kExtractChunk = 256;

}  // namespace

FeatureMatrix extract_features(nn::ModelBundle& bundle,
                               const data::LabeledDataset& ds) {
  const long n = ds.size();
  if (n < 1) throw PipelineError("feature extraction on an empty dataset");
  const int d = bundle.backbone_cfg.output_dim;
  const augment::Normalization norm{};

  FeatureMatrix out;
  out.values = DTensor::zeros({int(n), d});
  out.source_indices.resize(static_cast<std::size_t>(n));
  std::iota(out.source_indices.begin(), out.source_indices.end(), 0L);

  for (long start = 0; start < n; start += kExtractChunk) {
    const int b = int(std::min<long>(kExtractChunk, n - start));
    Tensor batch = Tensor::zeros({b, 3, ds.height, ds.width});
    const std::size_t plane = std::size_t(3) * ds.height * ds.width;
    for (int i = 0; i < b; ++i) {
      const Tensor view = augment::eval_view(ds.records[std::size_t(start + i)],
                                             ds.height, ds.width, norm);
      std::copy(view.v.begin(), view.v.end(), batch.v.begin() + i * plane);
    }
    const Tensor feats = nn::encode(bundle, batch, false);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < d; ++j)
        out.values.at(int(start) + i, j) = double(feats.at(i, j));
  }
  return out;
}

namespace {

double inertia_of(const DTensor& dist, const std::vector<int>& labels) {
  double s = 0.0;
  for (int i = 0; i < dist.shape[0]; ++i) s += dist.at(i, labels[std::size_t(i)]);
  return s;
}

std::vector<int> nearest(const DTensor& dist) {
  const int n = dist.shape[0], k = dist.shape[1];
  std::vector<int> labels(std::size_t(n), 0);
  for (int i = 0; i < n; ++i) {
    double best = dist.at(i, 0);
    int arg = 0;
    for (int j = 1; j < k; ++j)
      if (dist.at(i, j) < best) {
        best = dist.at(i, j);
        arg = j;
      }
    labels[std::size_t(i)] = arg;
  }
  return labels;
}

DTensor plus_plus_init(const DTensor& x, int k, Rng& rng) {
  const int n = x.shape[0], d = x.shape[1];
  DTensor centroids = DTensor::zeros({k, d});
  std::vector<double> mind(std::size_t(n), std::numeric_limits<double>::infinity());

  long first = long(rng.uniform_index(std::uint64_t(n)));
  std::copy_n(x.v.data() + first * d, d, centroids.v.data());

  for (int c = 1; c < k; ++c) {
    const double* prev = centroids.v.data() + std::size_t(c - 1) * d;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* xi = x.v.data() + std::size_t(i) * d;
      double s = 0.0;
      for (int j = 0; j < d; ++j) {
        const double dv = xi[j] - prev[j];
        s += dv * dv;
      }
      if (s < mind[std::size_t(i)]) mind[std::size_t(i)] = s;
      total += mind[std::size_t(i)];
    }
    long pick;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += mind[std::size_t(i)];
        if (acc > r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = long(rng.uniform_index(std::uint64_t(n)));
    }
    std::copy_n(x.v.data() + pick * d, d, centroids.v.data() + std::size_t(c) * d);
  }
  return centroids;
}

struct LloydRun {
  ClusterModel model;
  bool has_empty = false;
};

LloydRun lloyd(const DTensor& x, int k, std::uint64_t seed,
               const KmeansOptions& opts) {
  const int n = x.shape[0], d = x.shape[1];
  Rng rng(seed);
  DTensor centroids = plus_plus_init(x, k, rng);

  LloydRun run;
  run.model.k = k;
  run.model.seed_used = seed;

  DTensor dist = DTensor::zeros({n, k});
  std::vector<int> labels;
  std::vector<long> counts(std::size_t(k), 0);

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    kernels::pairwise_sqdist(x.v.data(), n, d, centroids.v.data(), k, dist.v.data());
    labels = nearest(dist);
    run.model.inertia_trace.push_back(inertia_of(dist, labels));

    DTensor next = DTensor::zeros({k, d});
    std::fill(counts.begin(), counts.end(), 0L);
    for (int i = 0; i < n; ++i) {
      const int c = labels[std::size_t(i)];
      ++counts[std::size_t(c)];
      const double* xi = x.v.data() + std::size_t(i) * d;
      double* ci = next.v.data() + std::size_t(c) * d;
      for (int j = 0; j < d; ++j) ci[j] += xi[j];
    }
    double max_shift = 0.0;
    for (int c = 0; c < k; ++c) {
      double* ci = next.v.data() + std::size_t(c) * d;
      const double* old = centroids.v.data() + std::size_t(c) * d;
      if (counts[std::size_t(c)] == 0) {
        std::copy_n(old, d, ci);  // keep a starved centroid in place
      } else {
        const double inv = 1.0 / double(counts[std::size_t(c)]);
        for (int j = 0; j < d; ++j) ci[j] *= inv;
      }
      double s = 0.0;
      for (int j = 0; j < d; ++j) {
        const double dv = ci[j] - old[j];
        s += dv * dv;
      }
      max_shift = std::max(max_shift, std::sqrt(s));
    }
    centroids = next;
    if (max_shift < opts.tol) break;
  }

  // Final assignment against the converged centroids.
  kernels::pairwise_sqdist(x.v.data(), n, d, centroids.v.data(), k, dist.v.data());
  labels = nearest(dist);
  run.model.centroids = std::move(centroids);
  run.model.assignments = labels;
  run.model.inertia = inertia_of(dist, labels);

  std::fill(counts.begin(), counts.end(), 0L);
  for (const int c : labels) ++counts[std::size_t(c)];
  run.has_empty = std::any_of(counts.begin(), counts.end(),
                              [](long c) { return c == 0; });
  return run;
}

DTensor maybe_normalized(const DTensor& x, bool normalize) {
  if (!normalize) return x;
  DTensor out = x;
  const int n = x.shape[0], d = x.shape[1];
  for (int i = 0; i < n; ++i) {
    double* row = out.v.data() + std::size_t(i) * d;
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += row[j] * row[j];
    const double nrm = std::sqrt(s);
    if (nrm > 0.0)
      for (int j = 0; j < d; ++j) row[j] /= nrm;
  }
  return out;
}

}  // namespace

ClusterModel kmeans(const FeatureMatrix& x, int k, std::uint64_t seed,
                    const KmeansOptions& opts) {
  if (x.values.rank() != 2) throw ShapeError("kmeans expects an N x d matrix");
  const long n = x.n();
  if (k < 1) throw ConfigError("kmeans needs K >= 1");
  if (k > n) throw ConfigError("kmeans needs K <= N");
  if (!x.values.finite()) throw NumericError("kmeans input has non-finite values");

  const DTensor data = maybe_normalized(x.values, opts.normalize_rows);

  for (int attempt = 0; attempt <= opts.empty_retries; ++attempt) {
    const std::uint64_t attempt_seed = seed + std::uint64_t(attempt);
    bool found = false;
    ClusterModel best;
    for (int init = 0; init < std::max(opts.n_init, 1); ++init) {
      LloydRun run = lloyd(data, k, fork_seed(attempt_seed, "kmeans-init",
                                              std::uint64_t(init)),
                           opts);
      if (run.has_empty) continue;
      if (!found || run.model.inertia < best.inertia) {
        best = std::move(run.model);
        found = true;
      }
    }
    if (found) return best;
  }
  throw PipelineError("kmeans produced an empty cluster on every retry (K=" +
                      std::to_string(k) + ")");
}

std::vector<int> assign(const ClusterModel& model, const FeatureMatrix& x) {
  if (x.values.rank() != 2 || x.d() != model.centroids.shape[1])
    throw ShapeError("assign: feature dim does not match centroids");
  const int n = int(x.n());
  DTensor dist = DTensor::zeros({n, model.k});
  kernels::pairwise_sqdist(x.values.v.data(), n, x.d(), model.centroids.v.data(),
                           model.k, dist.v.data());
  return nearest(dist);
}

std::vector<data::LabeledDataset> partition(const data::LabeledDataset& ds,
                                            const std::vector<int>& labels,
                                            int k) {
  if (long(labels.size()) != ds.size())
    throw ShapeError("partition: one label per record required");
  std::vector<data::LabeledDataset> subsets(static_cast<std::size_t>(k));
  for (auto& s : subsets) {
    s.num_classes = ds.num_classes;
    s.height = ds.height;
    s.width = ds.width;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= k)
      throw ShapeError("partition: cluster label out of range");
    subsets[std::size_t(c)].records.push_back(ds.records[i]);
  }
  return subsets;
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns eigenvalues
// via `evals`; eigenvectors are the columns of the returned matrix.
DTensor jacobi_eigen(DTensor a, std::vector<double>& evals) {
  const int d = a.shape[0];
  DTensor v = DTensor::zeros({d, d});
  for (int i = 0; i < d; ++i) v.at(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += a.at(p, q) * a.at(p, q);
    if (off < 1e-24) break;

    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < d; ++i) {
          const double aip = a.at(i, p), aiq = a.at(i, q);
          a.at(i, p) = c * aip - s * aiq;
          a.at(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < d; ++i) {
          const double api = a.at(p, i), aqi = a.at(q, i);
          a.at(p, i) = c * api - s * aqi;
          a.at(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < d; ++i) {
          const double vip = v.at(i, p), viq = v.at(i, q);
          v.at(i, p) = c * vip - s * viq;
          v.at(i, q) = s * vip + c * viq;
        }
      }
  }
  evals.resize(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) evals[std::size_t(i)] = a.at(i, i);
  return v;
}

}  // namespace

DTensor pca_project(const DTensor& x, int out_dim) {
  if (x.rank() != 2) throw ShapeError("pca expects an N x d matrix");
  const int n = x.shape[0], d = x.shape[1];
  if (n < 2) throw ConfigError("pca needs at least two rows");
  if (out_dim < 1 || out_dim > d) throw ConfigError("pca output dim out of range");

  DTensor centered = x;
  for (int j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += x.at(i, j);
    mean /= n;
    for (int i = 0; i < n; ++i) centered.at(i, j) -= mean;
  }

  DTensor cov = kernels::gemm_tn(centered, centered);
  const double inv = 1.0 / double(n - 1);
  for (auto& c : cov.v) c *= inv;

  std::vector<double> evals;
  const DTensor vecs = jacobi_eigen(cov, evals);

  std::vector<int> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return evals[std::size_t(a)] > evals[std::size_t(b)]; });

  DTensor basis = DTensor::zeros({d, out_dim});
  for (int c = 0; c < out_dim; ++c) {
    const int src = order[std::size_t(c)];
    int arg = 0;
    double best = 0.0;
    for (int i = 0; i < d; ++i) {
      const double mag = std::abs(vecs.at(i, src));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    const double sign = vecs.at(arg, src) < 0.0 ? -1.0 : 1.0;
    for (int i = 0; i < d; ++i) basis.at(i, c) = sign * vecs.at(i, src);
  }
  return kernels::gemm_nn(centered, basis);
}

void export_assignments(const ClusterModel& model, const FeatureMatrix& x,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "record_index,cluster\n";
  for (std::size_t i = 0; i < model.assignments.size(); ++i)
    out << x.source_indices[i] << ',' << model.assignments[i] << '\n';
  if (!out.flush()) throw IoError("failed writing " + path.string());
}

void export_pca(const FeatureMatrix& x, const ClusterModel& model,
                const data::LabeledDataset& ds,
                const std::filesystem::path& path) {
  const DTensor proj = pca_project(x.values, 2);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "record_index,pc1,pc2,cluster,true_label\n";
  char buf[64];
  for (long i = 0; i < x.n(); ++i) {
    const long rec = x.source_indices[std::size_t(i)];
    std::snprintf(buf, sizeof(buf), "%.8g,%.8g", proj.at(int(i), 0),
                  proj.at(int(i), 1));
    out << rec << ',' << buf << ',' << model.assignments[std::size_t(i)] << ','
        << ds.records[std::size_t(rec)].label << '\n';
  }
  if (!out.flush()) throw IoError("failed writing " + path.string());
}

}  // namespace cissl::cluster
