#include "ntkprune/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace ntkprune {

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch (" + shape_str(a) +
                   " vs " + shape_str(b) + ")");
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + " tensor, got shape " +
                     shape_str(t.shape()));
  }
}

}  // namespace

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Tape::constant(Tensor v) {
  v.check_finite("constant");
  Node n;
  n.op = Op::constant;
  n.value = std::move(v);
  n.requires_grad = false;
  return push(std::move(n));
}

NodeId Tape::leaf(Tensor v) {
  v.check_finite("leaf");
  Node n;
  n.op = Op::leaf;
  n.value = std::move(v);
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  require_rank("matmul", ta, 2);
  require_rank("matmul", tb, 2);
  if (ta.extent(1) != tb.extent(0)) shape_fail("matmul", ta.shape(), tb.shape());
  const std::size_t m = ta.extent(0), k = ta.extent(1), n = tb.extent(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = ta.at2(i, kk);
      if (aik == 0.0) continue;
      const double* brow = tb.data() + kk * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  out.check_finite("matmul");
  Node node;
  node.op = Op::matmul;
  node.value = std::move(out);
  node.in[0] = a;
  node.in[1] = b;
  node.n_in = 2;
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(std::move(node));
}

NodeId Tape::linear(NodeId x, NodeId w, NodeId b) {
  const Tensor& tx = nodes_[x].value;
  const Tensor& tw = nodes_[w].value;
  const Tensor& tb = nodes_[b].value;
  require_rank("linear", tx, 2);
  require_rank("linear", tw, 2);
  require_rank("linear", tb, 1);
  if (tx.extent(1) != tw.extent(1)) shape_fail("linear", tx.shape(), tw.shape());
  if (tb.extent(0) != tw.extent(0)) shape_fail("linear", tw.shape(), tb.shape());
  const std::size_t n = tx.extent(0), in = tx.extent(1), out_dim = tw.extent(0);
  Tensor out({n, out_dim});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xrow = tx.data() + i * in;
    double* orow = out.data() + i * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wrow = tw.data() + o * in;
      double acc = 0.0;
      for (std::size_t j = 0; j < in; ++j) acc += xrow[j] * wrow[j];
      orow[o] = acc + tb[o];
    }
  }
  out.check_finite("linear");
  Node node;
  node.op = Op::linear;
  node.value = std::move(out);
  node.in[0] = x;
  node.in[1] = w;
  node.in[2] = b;
  node.n_in = 3;
  node.requires_grad = nodes_[x].requires_grad || nodes_[w].requires_grad ||
                       nodes_[b].requires_grad;
  return push(std::move(node));
}

namespace {
enum class EwKind { add, sub, mul };
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (!ta.same_shape(tb)) shape_fail("add", ta.shape(), tb.shape());
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] + tb[i];
  out.check_finite("add");
  Node node;
  node.op = Op::add;
  node.value = std::move(out);
  node.in[0] = a;
  node.in[1] = b;
  node.n_in = 2;
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(std::move(node));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (!ta.same_shape(tb)) shape_fail("sub", ta.shape(), tb.shape());
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] - tb[i];
  out.check_finite("sub");
  Node node;
  node.op = Op::sub;
  node.value = std::move(out);
  node.in[0] = a;
  node.in[1] = b;
  node.n_in = 2;
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(std::move(node));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (!ta.same_shape(tb)) shape_fail("mul", ta.shape(), tb.shape());
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] * tb[i];
  out.check_finite("mul");
  Node node;
  node.op = Op::mul;
  node.value = std::move(out);
  node.in[0] = a;
  node.in[1] = b;
  node.n_in = 2;
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(std::move(node));
}

NodeId Tape::relu(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
  Node node;
  node.op = Op::relu;
  node.value = std::move(out);
  node.in[0] = a;
  node.n_in = 1;
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::abs(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(ta[i]);
  Node node;
  node.op = Op::abs;
  node.value = std::move(out);
  node.in[0] = a;
  node.n_in = 1;
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::scale(NodeId a, double c) {
  const Tensor& ta = nodes_[a].value;
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * ta[i];
  out.check_finite("scale");
  Node node;
  node.op = Op::scale;
  node.value = std::move(out);
  node.in[0] = a;
  node.n_in = 1;
  node.factor = c;
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::sum(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) acc += ta[i];
  Tensor out = Tensor::scalar(acc);
  out.check_finite("sum");
  Node node;
  node.op = Op::sum;
  node.value = std::move(out);
  node.in[0] = a;
  node.n_in = 1;
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::sq_l2_norm(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) acc += ta[i] * ta[i];
  Tensor out = Tensor::scalar(acc);
  out.check_finite("sq_l2_norm");
  Node node;
  node.op = Op::sq_l2_norm;
  node.value = std::move(out);
  node.in[0] = a;
  node.n_in = 1;
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::conv2d(NodeId x, NodeId w, std::size_t pad) {
  const Tensor& tx = nodes_[x].value;
  const Tensor& tw = nodes_[w].value;
  require_rank("conv2d", tx, 4);
  require_rank("conv2d", tw, 4);
  if (tx.extent(1) != tw.extent(1)) shape_fail("conv2d", tx.shape(), tw.shape());
  const std::size_t n = tx.extent(0), ci = tx.extent(1), h = tx.extent(2),
                    wdim = tx.extent(3);
  const std::size_t co = tw.extent(0), kh = tw.extent(2), kw = tw.extent(3);
  if (h + 2 * pad < kh || wdim + 2 * pad < kw) {
    throw ShapeError("conv2d: kernel " + shape_str(tw.shape()) +
                     " does not fit input " + shape_str(tx.shape()) +
                     " with padding " + std::to_string(pad));
  }
  const std::size_t oh = h + 2 * pad - kh + 1, ow = wdim + 2 * pad - kw + 1;
  Tensor out({n, co, oh, ow});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < co; ++oc) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::size_t ic = 0; ic < ci; ++ic) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy + ky) -
                  static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox + kx) -
                    static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wdim)) continue;
                acc += tx[((b * ci + ic) * h + iy) * wdim + ix] *
                       tw[((oc * ci + ic) * kh + ky) * kw + kx];
              }
            }
          }
          out[((b * co + oc) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
  out.check_finite("conv2d");
  Node node;
  node.op = Op::conv2d;
  node.value = std::move(out);
  node.in[0] = x;
  node.in[1] = w;
  node.n_in = 2;
  node.pad = pad;
  node.requires_grad = nodes_[x].requires_grad || nodes_[w].requires_grad;
  return push(std::move(node));
}

NodeId Tape::channel_bias(NodeId x, NodeId b) {
  const Tensor& tx = nodes_[x].value;
  const Tensor& tb = nodes_[b].value;
  require_rank("channel_bias", tx, 4);
  require_rank("channel_bias", tb, 1);
  if (tx.extent(1) != tb.extent(0)) {
    shape_fail("channel_bias", tx.shape(), tb.shape());
  }
  const std::size_t n = tx.extent(0), c = tx.extent(1),
                    hw = tx.extent(2) * tx.extent(3);
  Tensor out(tx.shape());
  for (std::size_t bi = 0; bi < n; ++bi) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double add = tb[ch];
      const std::size_t base = (bi * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = tx[base + i] + add;
    }
  }
  out.check_finite("channel_bias");
  Node node;
  node.op = Op::channel_bias;
  node.value = std::move(out);
  node.in[0] = x;
  node.in[1] = b;
  node.n_in = 2;
  node.requires_grad = nodes_[x].requires_grad || nodes_[b].requires_grad;
  return push(std::move(node));
}

NodeId Tape::reshape(NodeId a, Shape shape) {
  const Tensor& ta = nodes_[a].value;
  if (shape_size(shape) != ta.size()) shape_fail("reshape", ta.shape(), shape);
  Tensor out(std::move(shape), ta.values());
  Node node;
  node.op = Op::reshape;
  node.value = std::move(out);
  node.in[0] = a;
  node.n_in = 1;
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
  const Tensor& tz = nodes_[logits].value;
  require_rank("softmax_cross_entropy", tz, 2);
  const std::size_t n = tz.extent(0), k = tz.extent(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  Tensor soft({n, k});
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int lab = labels[i];
    if (lab < 0 || static_cast<std::size_t>(lab) >= k) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(lab) +
                       " outside [0," + std::to_string(k) + ")");
    }
    const double* row = tz.data() + i * k;
    double m = row[0];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - m);
    const double lse = m + std::log(denom);
    loss += lse - row[lab];
    for (std::size_t j = 0; j < k; ++j) {
      soft.at2(i, j) = std::exp(row[j] - m) / denom;
    }
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(n));
  out.check_finite("softmax_cross_entropy");
  Node node;
  node.op = Op::softmax_ce;
  node.value = std::move(out);
  node.in[0] = logits;
  node.n_in = 1;
  node.labels = std::move(labels);
  node.aux = std::move(soft);
  node.requires_grad = nodes_[logits].requires_grad;
  return push(std::move(node));
}

NodeId Tape::squared_error(NodeId logits, std::vector<int> labels) {
  const Tensor& tz = nodes_[logits].value;
  require_rank("squared_error", tz, 2);
  const std::size_t n = tz.extent(0), k = tz.extent(1);
  if (labels.size() != n) {
    throw ShapeError("squared_error: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int lab = labels[i];
    if (lab < 0 || static_cast<std::size_t>(lab) >= k) {
      throw ShapeError("squared_error: label " + std::to_string(lab) +
                       " outside [0," + std::to_string(k) + ")");
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double d = tz.at2(i, j) - (static_cast<std::size_t>(lab) == j);
      loss += 0.5 * d * d;
    }
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(n));
  out.check_finite("squared_error");
  Node node;
  node.op = Op::squared_err;
  node.value = std::move(out);
  node.in[0] = logits;
  node.n_in = 1;
  node.labels = std::move(labels);
  node.requires_grad = nodes_[logits].requires_grad;
  return push(std::move(node));
}

const Tensor& Tape::grad(NodeId id) const {
  const Node& n = nodes_[id];
  if (!n.requires_grad) {
    throw NumericError("grad: node does not require gradients");
  }
  return n.grad;
}

Tensor& Tape::adjoint(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) {
    n.grad = Tensor(n.value.shape());
  } else if (!n.grad_live) {
    n.grad.fill(0.0);
  }
  n.grad_live = true;
  return n.grad;
}

void Tape::zero_grads() {
  for (Node& n : nodes_) {
    if (n.grad.size() != 0) n.grad.fill(0.0);
    n.grad_live = false;
  }
}

void Tape::backward(NodeId output) {
  const Tensor& v = nodes_[output].value;
  if (!v.is_scalar()) {
    throw ShapeError("backward: output must be a scalar, got shape " +
                     shape_str(v.shape()));
  }
  run_backward(output, Tensor::scalar(1.0));
}

void Tape::backward(NodeId output, const Tensor& seed) {
  if (!nodes_[output].value.same_shape(seed)) {
    shape_fail("backward", nodes_[output].value.shape(), seed.shape());
  }
  run_backward(output, seed);
}

void Tape::run_backward(NodeId output, const Tensor& seed) {
  if (output >= nodes_.size()) {
    throw ShapeError("backward: node id out of range");
  }
  for (Node& n : nodes_) n.grad_live = false;
  adjoint(output) = seed;
  nodes_[output].grad_live = true;
  for (std::size_t i = output + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad_live) continue;
    accumulate(n);
  }
  // Leaves that never appeared on a path to the output report zero.
  for (Node& n : nodes_) {
    if (n.requires_grad && !n.grad_live) {
      if (n.grad.size() != n.value.size()) {
        n.grad = Tensor(n.value.shape());
      } else {
        n.grad.fill(0.0);
      }
    }
    if (n.grad.size() != 0) n.grad.check_finite("backward");
  }
}

void Tape::accumulate(Node& node) {
  const Tensor& g = node.grad;
  switch (node.op) {
    case Op::constant:
    case Op::leaf:
      return;
    case Op::matmul: {
      const Tensor& a = nodes_[node.in[0]].value;
      const Tensor& b = nodes_[node.in[1]].value;
      const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
      if (nodes_[node.in[0]].requires_grad) {
        Tensor& ga = adjoint(node.in[0]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g.at2(i, j);
            if (gij == 0.0) continue;
            for (std::size_t kk = 0; kk < k; ++kk) {
              ga.at2(i, kk) += gij * b.at2(kk, j);
            }
          }
        }
      }
      if (nodes_[node.in[1]].requires_grad) {
        Tensor& gb = adjoint(node.in[1]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = a.at2(i, kk);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
              gb.at2(kk, j) += aik * g.at2(i, j);
            }
          }
        }
      }
      return;
    }
    case Op::linear: {
      const Tensor& x = nodes_[node.in[0]].value;
      const Tensor& w = nodes_[node.in[1]].value;
      const std::size_t n = x.extent(0), in = x.extent(1),
                        out_dim = w.extent(0);
      if (nodes_[node.in[0]].requires_grad) {
        Tensor& gx = adjoint(node.in[0]);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t o = 0; o < out_dim; ++o) {
            const double gio = g.at2(i, o);
            if (gio == 0.0) continue;
            const double* wrow = w.data() + o * in;
            double* grow = gx.data() + i * in;
            for (std::size_t j = 0; j < in; ++j) grow[j] += gio * wrow[j];
          }
        }
      }
      if (nodes_[node.in[1]].requires_grad) {
        Tensor& gw = adjoint(node.in[1]);
        for (std::size_t i = 0; i < n; ++i) {
          const double* xrow = x.data() + i * in;
          for (std::size_t o = 0; o < out_dim; ++o) {
            const double gio = g.at2(i, o);
            if (gio == 0.0) continue;
            double* grow = gw.data() + o * in;
            for (std::size_t j = 0; j < in; ++j) grow[j] += gio * xrow[j];
          }
        }
      }
      if (nodes_[node.in[2]].requires_grad) {
        Tensor& gb = adjoint(node.in[2]);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g.at2(i, o);
        }
      }
      return;
    }
    case Op::add:
      for (int s = 0; s < 2; ++s) {
        if (!nodes_[node.in[s]].requires_grad) continue;
        Tensor& gi = adjoint(node.in[s]);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
      return;
    case Op::sub: {
      if (nodes_[node.in[0]].requires_grad) {
        Tensor& ga = adjoint(node.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (nodes_[node.in[1]].requires_grad) {
        Tensor& gb = adjoint(node.in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
      return;
    }
    case Op::mul: {
      const Tensor& a = nodes_[node.in[0]].value;
      const Tensor& b = nodes_[node.in[1]].value;
      if (nodes_[node.in[0]].requires_grad) {
        Tensor& ga = adjoint(node.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (nodes_[node.in[1]].requires_grad) {
        Tensor& gb = adjoint(node.in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
      return;
    }
    case Op::relu: {
      const Tensor& a = nodes_[node.in[0]].value;
      Tensor& ga = adjoint(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a[i] > 0.0) ga[i] += g[i];
      }
      return;
    }
    case Op::abs: {
      const Tensor& a = nodes_[node.in[0]].value;
      Tensor& ga = adjoint(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a[i] > 0.0) {
          ga[i] += g[i];
        } else if (a[i] < 0.0) {
          ga[i] -= g[i];
        }
      }
      return;
    }
    case Op::scale: {
      Tensor& ga = adjoint(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += node.factor * g[i];
      return;
    }
    case Op::sum: {
      Tensor& ga = adjoint(node.in[0]);
      const double gs = g[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gs;
      return;
    }
    case Op::sq_l2_norm: {
      const Tensor& a = nodes_[node.in[0]].value;
      Tensor& ga = adjoint(node.in[0]);
      const double gs = 2.0 * g[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gs * a[i];
      return;
    }
    case Op::conv2d: {
      const Tensor& x = nodes_[node.in[0]].value;
      const Tensor& w = nodes_[node.in[1]].value;
      const std::size_t n = x.extent(0), ci = x.extent(1), h = x.extent(2),
                        wdim = x.extent(3);
      const std::size_t co = w.extent(0), kh = w.extent(2), kw = w.extent(3);
      const std::size_t oh = node.value.extent(2), ow = node.value.extent(3);
      const std::size_t pad = node.pad;
      const bool want_x = nodes_[node.in[0]].requires_grad;
      const bool want_w = nodes_[node.in[1]].requires_grad;
      Tensor* gx = want_x ? &adjoint(node.in[0]) : nullptr;
      Tensor* gw = want_w ? &adjoint(node.in[1]) : nullptr;
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oc = 0; oc < co; ++oc) {
          for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const double go = g[((b * co + oc) * oh + oy) * ow + ox];
              if (go == 0.0) continue;
              for (std::size_t ic = 0; ic < ci; ++ic) {
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const std::ptrdiff_t iy =
                      static_cast<std::ptrdiff_t>(oy + ky) -
                      static_cast<std::ptrdiff_t>(pad);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t ix =
                        static_cast<std::ptrdiff_t>(ox + kx) -
                        static_cast<std::ptrdiff_t>(pad);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wdim)) {
                      continue;
                    }
                    const std::size_t xi = ((b * ci + ic) * h + iy) * wdim + ix;
                    const std::size_t wi = ((oc * ci + ic) * kh + ky) * kw + kx;
                    if (gx) (*gx)[xi] += go * w[wi];
                    if (gw) (*gw)[wi] += go * x[xi];
                  }
                }
              }
            }
          }
        }
      }
      return;
    }
    case Op::channel_bias: {
      const Tensor& x = nodes_[node.in[0]].value;
      const std::size_t n = x.extent(0), c = x.extent(1),
                        hw = x.extent(2) * x.extent(3);
      if (nodes_[node.in[0]].requires_grad) {
        Tensor& gx = adjoint(node.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (nodes_[node.in[1]].requires_grad) {
        Tensor& gb = adjoint(node.in[1]);
        for (std::size_t bi = 0; bi < n; ++bi) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (bi * c + ch) * hw;
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) acc += g[base + i];
            gb[ch] += acc;
          }
        }
      }
      return;
    }
    case Op::reshape: {
      Tensor& ga = adjoint(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      return;
    }
    case Op::softmax_ce: {
      const Tensor& soft = node.aux;
      const std::size_t n = soft.extent(0), k = soft.extent(1);
      Tensor& gz = adjoint(node.in[0]);
      const double gs = g[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double onehot =
              (static_cast<std::size_t>(node.labels[i]) == j) ? 1.0 : 0.0;
          gz.at2(i, j) += gs * (soft.at2(i, j) - onehot);
        }
      }
      return;
    }
    case Op::squared_err: {
      const Tensor& z = nodes_[node.in[0]].value;
      const std::size_t n = z.extent(0), k = z.extent(1);
      Tensor& gz = adjoint(node.in[0]);
      const double gs = g[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double onehot =
              (static_cast<std::size_t>(node.labels[i]) == j) ? 1.0 : 0.0;
          gz.at2(i, j) += gs * (z.at2(i, j) - onehot);
        }
      }
      return;
    }
  }
}

}  // namespace ntkprune
