#pragma once

// Brute-force reference implementations used only by the test suite. None of
// this code is shared with the production library: losses are evaluated by
// direct formula translation, k-means by exhaustive partition search, and
// gradients by central differences.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cissl::oracle {

using Matrix = std::vector<std::vector<double>>;

// Contrastive loss over 2B rows (views of pair i at rows 2i, 2i+1), one
// softmax term per anchor, full similarity matrix, plain exp sums.
double nt_xent_bruteforce(const Matrix& z, double tau);

// Symmetric negative-cosine objective, direct formula.
double siamese_bruteforce(const Matrix& p1, const Matrix& p2, const Matrix& z1,
                          const Matrix& z2);

// Equal-weight two-term regression objective, direct formula.
double distill_bruteforce(const Matrix& base_out, const Matrix& expert_out,
                          const Matrix& base_target,
                          const Matrix& expert_target);

// Exhaustive search over all partitions of n points into exactly k nonempty
// clusters (n <= 8). Returns the optimal inertia.
double kmeans_bruteforce(const Matrix& x, int k);

// Number of partitions kmeans_bruteforce enumerates (the Stirling number of
// the second kind, computed by the same enumeration).
long partition_count(int n, int k);

// Central finite differences of a scalar function.
std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& at, double step);

// Top-m eigenvalues of the sample covariance of x (rows = observations),
// by power iteration with deflation.
std::vector<double> top_eigenvalues(const Matrix& x, int m);

struct OracleReport {
  std::string name;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  bool pass = false;
};

}  // namespace cissl::oracle
