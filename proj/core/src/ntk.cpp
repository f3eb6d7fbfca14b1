#include "ntkprune/ntk.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace ntkprune {

namespace {

// Shared walk for jacobian() and trace_exact(): one forward pass, then one
// seeded backward pass per logit. row_sink receives each Jacobian row
// (already multiplied by the mask) in sample-major, logit-minor order.
template <class RowSink>
void for_each_jacobian_row(const MaskedNetwork& net, const Tensor& x,
                           std::vector<double>& row, RowSink&& sink) {
  Tape tape;
  const ForwardResult fwd = forward_masked(net, tape, x);
  const Tensor& out = tape.value(fwd.output);
  if (out.rank() != 2) {
    throw ShapeError("jacobian: network output is not (batch, logits)");
  }
  const std::size_t n = out.extent(0), k = out.extent(1);
  const std::size_t p = net.prunable_count();
  row.resize(p);
  Tensor seed(out.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t idx = i * k + j;
      seed[idx] = 1.0;
      tape.backward(fwd.output, seed);
      seed[idx] = 0.0;
      std::size_t off = 0;
      for (std::size_t li = 0; li < net.params.size(); ++li) {
        const Tensor& g = tape.grad(fwd.weight_nodes[li]);
        const Tensor& m = net.params[li].mask;
        for (std::size_t w = 0; w < g.size(); ++w) {
          row[off + w] = g[w] * m[w];
        }
        off += g.size();
      }
      sink(i * k + j, row);
    }
  }
}

}  // namespace

JacobianMatrix jacobian(const MaskedNetwork& net, const Tensor& x,
                        const JacobianOptions& opt) {
  if (x.size() == 0 || x.extent(0) == 0) {
    throw ShapeError("jacobian: empty input batch");
  }
  const std::size_t n = x.extent(0);
  const std::size_t k = net.arch.output_dim();
  const std::size_t p = net.prunable_count();
  const std::size_t entries = n * k * p;
  if (entries > opt.max_entries) {
    throw NumericError("jacobian: " + std::to_string(entries) +
                       " entries exceed the allowed " +
                       std::to_string(opt.max_entries));
  }
  JacobianMatrix jm;
  jm.rows = n * k;
  jm.cols = p;
  jm.values.resize(entries);
  std::vector<double> row;
  for_each_jacobian_row(net, x, row, [&](std::size_t r, const std::vector<double>& v) {
    std::copy(v.begin(), v.end(), jm.values.begin() + static_cast<std::ptrdiff_t>(r * p));
  });
  return jm;
}

double NTKMatrix::trace() const {
  double t = 0.0;
  for (std::size_t i = 0; i < dim; ++i) t += at(i, i);
  return t;
}

double NTKMatrix::frobenius_norm() const {
  double t = 0.0;
  for (double v : values) t += v * v;
  return std::sqrt(t);
}

double NTKMatrix::max_asymmetry() const {
  double worst = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = i + 1; j < dim; ++j) {
      worst = std::max(worst, std::fabs(at(i, j) - at(j, i)));
    }
  }
  return worst;
}

NTKMatrix fixed_weight_ntk(const JacobianMatrix& j) {
  NTKMatrix a;
  a.dim = j.rows;
  a.values.assign(j.rows * j.rows, 0.0);
  for (std::size_t r = 0; r < j.rows; ++r) {
    const double* jr = j.values.data() + r * j.cols;
    for (std::size_t s = r; s < j.rows; ++s) {
      const double* js = j.values.data() + s * j.cols;
      double acc = 0.0;
      for (std::size_t c = 0; c < j.cols; ++c) acc += jr[c] * js[c];
      // (A + A^T)/2 of an exact-dot-product Gram matrix is the matrix with
      // both mirror entries set to the same dot product.
      a.values[r * j.rows + s] = acc;
      a.values[s * j.rows + r] = acc;
    }
  }
  return a;
}

EigenResult eigenspectrum(const NTKMatrix& input, const EigenOptions& opt) {
  const std::size_t n = input.dim;
  if (n == 0) throw ShapeError("eigenspectrum: empty matrix");
  if (input.values.size() != n * n) {
    throw ShapeError("eigenspectrum: matrix storage does not match dim");
  }
  const double fro = input.frobenius_norm();
  if (input.max_asymmetry() > 1e-10 * std::max(fro, 1e-300)) {
    throw NumericError("eigenspectrum: matrix is not symmetric within "
                       "1e-10 * Frobenius norm");
  }

  std::vector<double> a = input.values;
  EigenResult res;
  res.vectors.clear();
  if (opt.want_vectors) {
    res.vectors.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) res.vectors[i * n + i] = 1.0;
  }

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double v = a[i * n + j];
        s += 2.0 * v * v;
      }
    }
    return std::sqrt(s);
  };

  const double tol = opt.tol_factor * std::max(fro, 1e-300);
  res.converged = off_norm() < tol;
  while (!res.converged && res.sweeps < opt.max_sweeps) {
    ++res.sweeps;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // Rows/columns p and q of the symmetric matrix.
        for (std::size_t i = 0; i < n; ++i) {
          if (i == p || i == q) continue;
          const double aip = a[i * n + p];
          const double aiq = a[i * n + q];
          a[i * n + p] = a[p * n + i] = c * aip - s * aiq;
          a[i * n + q] = a[q * n + i] = c * aiq + s * aip;
        }
        a[p * n + p] = app - t * apq;
        a[q * n + q] = aqq + t * apq;
        a[p * n + q] = a[q * n + p] = 0.0;
        if (opt.want_vectors) {
          for (std::size_t i = 0; i < n; ++i) {
            const double vip = res.vectors[i * n + p];
            const double viq = res.vectors[i * n + q];
            res.vectors[i * n + p] = c * vip - s * viq;
            res.vectors[i * n + q] = c * viq + s * vip;
          }
        }
      }
    }
    res.converged = off_norm() < tol;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a[i * n + i];
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (diag[x] != diag[y]) return diag[x] > diag[y];
    return x < y;
  });
  res.eigenvalues.resize(n);
  for (std::size_t i = 0; i < n; ++i) res.eigenvalues[i] = diag[order[i]];
  if (opt.want_vectors) {
    std::vector<double> sorted(n * n);
    for (std::size_t col = 0; col < n; ++col) {
      for (std::size_t row = 0; row < n; ++row) {
        sorted[row * n + col] = res.vectors[row * n + order[col]];
      }
    }
    res.vectors = std::move(sorted);
  }
  return res;
}

double trace_exact(const MaskedNetwork& net, const Tensor& x) {
  if (x.size() == 0 || x.extent(0) == 0) {
    throw ShapeError("trace_exact: empty input batch");
  }
  double acc = 0.0;
  std::vector<double> row;
  for_each_jacobian_row(net, x, row, [&](std::size_t, const std::vector<double>& v) {
    for (double g : v) acc += g * g;
  });
  return acc;
}

double TraceFdResult::std_error() const {
  const std::size_t n = draws.size();
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (double d : draws) mean += d;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double d : draws) var += (d - mean) * (d - mean);
  var /= static_cast<double>(n - 1);
  return std::sqrt(var / static_cast<double>(n));
}

TraceFdResult trace_fd(const MaskedNetwork& net, const Tensor& x, double eps,
                       std::size_t num_draws, Rng& rng) {
  if (eps <= 0.0) {
    throw NumericError("trace_fd: eps must be positive, got " +
                       std::to_string(eps));
  }
  if (num_draws == 0) {
    throw NumericError("trace_fd: num_draws must be > 0");
  }
  const double sd = std::sqrt(eps);

  Tensor base;
  {
    Tape tape;
    const ForwardResult fwd = forward_masked(net, tape, x);
    base = tape.value(fwd.output);
  }

  std::vector<Tensor> theta(net.params.size());
  TraceFdResult res;
  res.draws.reserve(num_draws);
  for (std::size_t d = 0; d < num_draws; ++d) {
    for (std::size_t li = 0; li < net.params.size(); ++li) {
      const ParamLayer& p = net.params[li];
      theta[li] = p.weight;
      for (std::size_t i = 0; i < theta[li].size(); ++i) {
        if (p.mask[i] != 0.0) theta[li][i] += sd * rng.normal();
      }
    }
    Tape tape;
    const ForwardResult fwd = forward_masked(net, tape, x, &theta);
    const Tensor& out = tape.value(fwd.output);
    double sq = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double diff = out[i] - base[i];
      sq += diff * diff;
    }
    res.draws.push_back(sq / eps);
  }
  double mean = 0.0;
  for (double v : res.draws) mean += v;
  res.estimate = mean / static_cast<double>(num_draws);
  return res;
}

ConditionNumber condition_number(const std::vector<double>& eigenvalues) {
  if (eigenvalues.empty()) {
    throw NumericError("condition_number: empty spectrum");
  }
  const double max_eig = eigenvalues.front();
  const double min_eig = eigenvalues.back();
  ConditionNumber out;
  const double floor = 1e-12 * max_eig;
  if (max_eig <= 0.0) {
    // Fully degenerate spectrum; report an infinite condition number.
    out.value = std::numeric_limits<double>::infinity();
    out.clamped = true;
    return out;
  }
  if (min_eig < floor) {
    out.clamped = true;
    out.value = max_eig / floor;
  } else {
    out.value = max_eig / min_eig;
  }
  return out;
}

double nuclear_norm(const std::vector<double>& eigenvalues) {
  double s = 0.0;
  for (double v : eigenvalues) s += v;
  return s;
}

void write_spectrum_csv(const std::vector<double>& eigenvalues,
                        const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("spectrum csv: cannot open " + path);
  out << "index,eigenvalue\n";
  char buf[32];
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", eigenvalues[i]);
    out << i << ',' << buf << "\n";
  }
  if (!out) throw IoError("spectrum csv: write failed for " + path);
}

void write_trace_report_csv(const std::vector<TraceReportRow>& rows,
                            const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("trace report csv: cannot open " + path);
  out << "method,density,trace_exact,trace_fd,condition_number\n";
  char buf[32];
  for (const TraceReportRow& r : rows) {
    out << r.method;
    for (double v : {r.density, r.trace_exact, r.trace_fd, r.condition_number}) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("trace report csv: write failed for " + path);
}

}  // namespace ntkprune
