#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cissl/dataset.hpp"
#include "cissl/nn.hpp"
#include "cissl/tensor.hpp"

namespace cissl::cluster {

struct FeatureMatrix {
  DTensor values;                        // N x d
  std::vector<long> source_indices;      // ascending dataset record indices
  long n() const { return values.rank() == 2 ? values.shape[0] : 0; }
  int d() const { return values.rank() == 2 ? values.shape[1] : 0; }
};

struct ClusterModel {
  DTensor centroids;  // K x d
  std::vector<int> assignments;
  double inertia = 0.0;
  int k = 0;
  std::vector<double> inertia_trace;  // objective after each assignment step
  std::uint64_t seed_used = 0;        // seed that produced the winning run
};

struct KmeansOptions {
  int max_iters = 300;
  double tol = 1e-4;        // converged when max centroid L2 shift < tol
  int n_init = 10;          // independent k-means++ restarts, best inertia wins
  int empty_retries = 5;    // re-seed attempts when a cluster ends up empty
  bool normalize_rows = false;
};

// Eval-mode backbone features for every record, in dataset order.
FeatureMatrix extract_features(nn::ModelBundle& bundle,
                               const data::LabeledDataset& ds);

// k-means++ seeding plus Lloyd iterations, double precision. Runs n_init
// restarts and keeps the lowest-inertia model whose clusters are all
// nonempty; if every restart leaves an empty cluster, the whole procedure
// re-seeds (seed+1, up to empty_retries) before failing.
ClusterModel kmeans(const FeatureMatrix& x, int k, std::uint64_t seed,
                    const KmeansOptions& opts = {});

// Nearest-centroid labels; ties resolve to the lowest index.
std::vector<int> assign(const ClusterModel& model, const FeatureMatrix& x);

// Splits ds by label: record i goes to subsets[labels[i]]. Order-preserving,
// disjoint, exhaustive.
std::vector<data::LabeledDataset> partition(const data::LabeledDataset& ds,
                                            const std::vector<int>& labels,
                                            int k);

// Projection onto the top principal components (mean-centered; descending
// eigenvalue order; sign fixed so each component's largest-magnitude loading
// is positive).
DTensor pca_project(const DTensor& x, int out_dim = 2);

// CSV exports: "record_index,cluster" and
// "record_index,pc1,pc2,cluster,true_label".
void export_assignments(const ClusterModel& model, const FeatureMatrix& x,
                        const std::filesystem::path& path);
void export_pca(const FeatureMatrix& x, const ClusterModel& model,
                const data::LabeledDataset& ds,
                const std::filesystem::path& path);

}  // namespace cissl::cluster
