#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ntkprune/nn.hpp"
#include "ntkprune/rng.hpp"
#include "ntkprune/tensor.hpp"

namespace ntkprune {

// Jacobian of the masked network's logits with respect to the prunable
// weights. Rows are sample-major, logit-minor (row r = sample r/k, logit
// r%k); columns follow the flattened mask layout. Entries are the effective
// weight gradients multiplied by the mask, so masked coordinates give zero
// columns.
struct JacobianMatrix {
  std::size_t rows = 0;  // batch * logits
  std::size_t cols = 0;  // prunable weights
  std::vector<double> values;  // row-major

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct JacobianOptions {
  // jacobian() refuses to materialize more than this many doubles.
  std::size_t max_entries = 150'000'000;
};

JacobianMatrix jacobian(const MaskedNetwork& net, const Tensor& x,
                        const JacobianOptions& opt = {});

// Symmetric PSD Gram matrix J * J^T, symmetrized as (A + A^T)/2 to scrub
// rounding asymmetry.
struct NTKMatrix {
  std::size_t dim = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t i, std::size_t j) const { return values[i * dim + j]; }
  double trace() const;
  double frobenius_norm() const;
  double max_asymmetry() const;
};

NTKMatrix fixed_weight_ntk(const JacobianMatrix& j);

struct EigenOptions {
  std::size_t max_sweeps = 100;
  double tol_factor = 1e-10;  // stop when off-diag Frobenius < tol * ||A||_F
  bool want_vectors = false;
};

struct EigenResult {
  std::vector<double> eigenvalues;  // descending
  bool converged = false;
  std::size_t sweeps = 0;
  // Column i of V (stored row-major, dim x dim) pairs with eigenvalues[i].
  std::vector<double> vectors;
};

// Cyclic Jacobi rotations; input must be symmetric within
// 1e-10 * ||A||_F entrywise.
EigenResult eigenspectrum(const NTKMatrix& a, const EigenOptions& opt = {});

// ||J||_F^2 accumulated row by row; no Gram matrix is materialized.
double trace_exact(const MaskedNetwork& net, const Tensor& x);

// Finite-difference trace estimate: mean over draws of
// ||f(x; theta) - f(x; theta + dtheta)||^2 / eps with dtheta ~ N(0, eps I)
// over unmasked prunable weights only (biases are never perturbed).
struct TraceFdResult {
  double estimate = 0.0;
  std::vector<double> draws;

  double std_error() const;
};

TraceFdResult trace_fd(const MaskedNetwork& net, const Tensor& x, double eps,
                       std::size_t num_draws, Rng& rng);

struct ConditionNumber {
  double value = 0.0;
  bool clamped = false;  // min eigenvalue was raised to 1e-12 * max
};

ConditionNumber condition_number(const std::vector<double>& eigenvalues);
double nuclear_norm(const std::vector<double>& eigenvalues);

// CSV schema: index,eigenvalue
void write_spectrum_csv(const std::vector<double>& eigenvalues,
                        const std::string& path);

// CSV schema: method,density,trace_exact,trace_fd,condition_number
struct TraceReportRow {
  std::string method;
  double density = 0.0;
  double trace_exact = 0.0;
  double trace_fd = 0.0;
  double condition_number = 0.0;
};
void write_trace_report_csv(const std::vector<TraceReportRow>& rows,
                            const std::string& path);

}  // namespace ntkprune
