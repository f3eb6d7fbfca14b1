#include "ntkprune/prune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace ntkprune {

std::string method_name(PruneMethod m) {
  switch (m) {
    case PruneMethod::snip: return "snip";
    case PruneMethod::iterative_snip: return "iterative_snip";
    case PruneMethod::grasp: return "grasp";
    case PruneMethod::synflow: return "synflow";
    case PruneMethod::ntksap: return "ntksap";
    case PruneMethod::magnitude: return "magnitude";
    case PruneMethod::random: return "random";
  }
  return "unknown";
}

PruneMethod method_from_name(const std::string& name) {
  for (PruneMethod m : {PruneMethod::snip, PruneMethod::iterative_snip,
                        PruneMethod::grasp, PruneMethod::synflow,
                        PruneMethod::ntksap, PruneMethod::magnitude,
                        PruneMethod::random}) {
    if (method_name(m) == name) return m;
  }
  throw NumericError("unknown pruning method: " + name);
}

bool method_is_one_shot(PruneMethod m) {
  return m == PruneMethod::snip || m == PruneMethod::grasp ||
         m == PruneMethod::magnitude || m == PruneMethod::random;
}

bool method_needs_labels(PruneMethod m) {
  return m == PruneMethod::snip || m == PruneMethod::iterative_snip ||
         m == PruneMethod::grasp;
}

void PruneConfig::validate() const {
  if (!(density > 0.0) || density > 1.0) {
    throw NumericError("prune config: density must be in (0,1], got " +
                       std::to_string(density));
  }
  if (rounds == 0) throw NumericError("prune config: rounds must be > 0");
  if (batches_per_round == 0) {
    throw NumericError("prune config: batches_per_round must be > 0");
  }
  if (batch_size == 0) {
    throw NumericError("prune config: batch_size must be > 0");
  }
  if (!(epsilon > 0.0)) {
    throw NumericError("prune config: epsilon must be positive");
  }
  if (reinit_count == 0) {
    throw NumericError("prune config: reinit_count must be > 0");
  }
  if (method_needs_labels(method) && input_source != InputSource::dataset) {
    throw NumericError("prune config: method " + method_name(method) +
                       " requires labeled data");
  }
}

double schedule_keep_fraction(double density, std::size_t t, std::size_t T) {
  if (T == 0 || t == 0 || t > T) {
    throw NumericError("schedule: need 1 <= t <= T");
  }
  if (!(density > 0.0) || density > 1.0) {
    throw NumericError("schedule: density must be in (0,1]");
  }
  return std::pow(density, static_cast<double>(t) / static_cast<double>(T));
}

namespace {

NodeId make_loss(Tape& tape, NodeId logits, const std::vector<int>& labels,
                 LossKind loss) {
  if (loss == LossKind::cross_entropy) {
    return tape.softmax_cross_entropy(logits, labels);
  }
  return tape.squared_error(logits, labels);
}

// Mean loss gradient over all samples, per layer, taken with respect to the
// effective weights theta*mask (optionally at overridden theta).
std::vector<Tensor> loss_gradient_eff(const MaskedNetwork& net,
                                      const std::vector<Batch>& batches,
                                      LossKind loss,
                                      const std::vector<Tensor>* theta_override) {
  if (batches.empty()) {
    throw NumericError("saliency: no pruning batches supplied");
  }
  std::vector<Tensor> acc(net.params.size());
  for (std::size_t li = 0; li < net.params.size(); ++li) {
    acc[li] = Tensor(net.params[li].weight.shape());
  }
  std::size_t total = 0;
  for (const Batch& b : batches) {
    Tape tape;
    const ForwardResult fwd =
        forward_masked(net, tape, b.inputs, theta_override);
    const NodeId l = make_loss(tape, fwd.output, b.labels, loss);
    tape.backward(l);
    const double bn = static_cast<double>(b.labels.size());
    for (std::size_t li = 0; li < net.params.size(); ++li) {
      const Tensor& g = tape.grad(fwd.weight_nodes[li]);
      for (std::size_t i = 0; i < g.size(); ++i) acc[li][i] += bn * g[i];
    }
    total += b.labels.size();
  }
  for (std::size_t li = 0; li < acc.size(); ++li) {
    for (std::size_t i = 0; i < acc[li].size(); ++i) {
      acc[li][i] /= static_cast<double>(total);
    }
  }
  return acc;
}

SaliencyVector sentinel_scores(const MaskedNetwork& net) {
  return SaliencyVector(net.prunable_count(), kPrunedScore);
}

}  // namespace

SaliencyVector score_snip(const MaskedNetwork& net,
                          const std::vector<Batch>& batches, LossKind loss) {
  const std::vector<Tensor> g = loss_gradient_eff(net, batches, loss, nullptr);
  SaliencyVector scores = sentinel_scores(net);
  std::size_t off = 0;
  for (std::size_t li = 0; li < net.params.size(); ++li) {
    const ParamLayer& p = net.params[li];
    for (std::size_t i = 0; i < p.weight.size(); ++i) {
      if (p.mask[i] != 0.0) {
        scores[off + i] = std::fabs(g[li][i] * p.weight[i]);
      }
    }
    off += p.weight.size();
  }
  return scores;
}

std::vector<Tensor> hvp_central(const GradFn& grad_fn,
                                const std::vector<Tensor>& theta,
                                const std::vector<Tensor>& direction,
                                double rho) {
  if (!(rho > 0.0)) throw NumericError("hvp_central: rho must be positive");
  std::vector<Tensor> plus = theta, minus = theta;
  for (std::size_t li = 0; li < theta.size(); ++li) {
    for (std::size_t i = 0; i < theta[li].size(); ++i) {
      plus[li][i] += rho * direction[li][i];
      minus[li][i] -= rho * direction[li][i];
    }
  }
  std::vector<Tensor> gp = grad_fn(plus);
  const std::vector<Tensor> gm = grad_fn(minus);
  for (std::size_t li = 0; li < gp.size(); ++li) {
    for (std::size_t i = 0; i < gp[li].size(); ++i) {
      gp[li][i] = (gp[li][i] - gm[li][i]) / (2.0 * rho);
    }
  }
  return gp;
}

SaliencyVector score_grasp(const MaskedNetwork& net,
                           const std::vector<Batch>& batches, LossKind loss) {
  std::vector<Tensor> g = loss_gradient_eff(net, batches, loss, nullptr);
  // Mask the direction: coordinates that are pruned cannot move.
  double norm_sq = 0.0;
  for (std::size_t li = 0; li < net.params.size(); ++li) {
    const Tensor& m = net.params[li].mask;
    for (std::size_t i = 0; i < g[li].size(); ++i) {
      g[li][i] *= m[i];
      norm_sq += g[li][i] * g[li][i];
    }
  }
  const double rho = 1e-3 / std::max(1.0, std::sqrt(norm_sq));

  std::vector<Tensor> theta(net.params.size());
  for (std::size_t li = 0; li < net.params.size(); ++li) {
    theta[li] = net.params[li].weight;
  }
  const GradFn grad_fn = [&](const std::vector<Tensor>& t) {
    return loss_gradient_eff(net, batches, loss, &t);
  };
  const std::vector<Tensor> hg = hvp_central(grad_fn, theta, g, rho);

  SaliencyVector scores = sentinel_scores(net);
  std::size_t off = 0;
  for (std::size_t li = 0; li < net.params.size(); ++li) {
    const ParamLayer& p = net.params[li];
    for (std::size_t i = 0; i < p.weight.size(); ++i) {
      if (p.mask[i] != 0.0) {
        scores[off + i] = -hg[li][i] * p.weight[i];
      }
    }
    off += p.weight.size();
  }
  return scores;
}

SaliencyVector score_synflow(const MaskedNetwork& net) {
  std::vector<Tensor> theta_abs(net.params.size());
  std::vector<Tensor> bias_abs(net.params.size());
  for (std::size_t li = 0; li < net.params.size(); ++li) {
    theta_abs[li] = net.params[li].weight;
    for (std::size_t i = 0; i < theta_abs[li].size(); ++i) {
      theta_abs[li][i] = std::fabs(theta_abs[li][i]);
    }
    bias_abs[li] = net.params[li].bias;
    for (std::size_t i = 0; i < bias_abs[li].size(); ++i) {
      bias_abs[li][i] = std::fabs(bias_abs[li][i]);
    }
  }
  Shape in_shape = net.arch.input_shape;
  in_shape.insert(in_shape.begin(), 1);
  const Tensor ones = Tensor::full(in_shape, 1.0);

  Tape tape;
  const ForwardResult fwd =
      forward_masked(net, tape, ones, &theta_abs, &bias_abs);
  const NodeId objective = tape.sum(fwd.output);
  tape.backward(objective);

  SaliencyVector scores = sentinel_scores(net);
  std::size_t off = 0;
  for (std::size_t li = 0; li < net.params.size(); ++li) {
    const ParamLayer& p = net.params[li];
    const Tensor& g = tape.grad(fwd.weight_nodes[li]);
    for (std::size_t i = 0; i < p.weight.size(); ++i) {
      if (p.mask[i] != 0.0) {
        scores[off + i] = std::fabs(g[i] * p.weight[i]);
      }
    }
    off += p.weight.size();
  }
  return scores;
}

std::vector<double> ntksap_batch_contribution(const MaskedNetwork& net,
                                              const PruneConfig& cfg,
                                              std::size_t round,
                                              std::size_t batch_index,
                                              std::size_t group,
                                              const Dataset* pruning_data) {
  const Rng base(cfg.seed);
  Tensor x;
  if (cfg.input_source == InputSource::gaussian_noise) {
    Shape shape = net.arch.input_shape;
    shape.insert(shape.begin(), cfg.batch_size);
    Rng rn = base.fork(streams::noise_input, round, batch_index);
    x = gaussian_batch(shape, rn);
  } else {
    if (!pruning_data) {
      throw NumericError("ntksap: dataset input source without pruning data");
    }
    const std::size_t begin = batch_index * cfg.batch_size;
    const std::size_t count =
        std::min(cfg.batch_size, pruning_data->size() - begin);
    x = take_batch(*pruning_data, begin, count).inputs;
  }

  MaskedNetwork clone = net;
  Rng rw = base.fork(streams::reinit, round, batch_index, group);
  clone.reinitialize(rw);

  const double sd = std::sqrt(cfg.epsilon);
  Rng rp = base.fork(streams::perturbation, round, batch_index, group);
  std::vector<Tensor> theta2(clone.params.size());
  for (std::size_t li = 0; li < clone.params.size(); ++li) {
    theta2[li] = clone.params[li].weight;
    for (std::size_t i = 0; i < theta2[li].size(); ++i) {
      theta2[li][i] += sd * rp.normal();
    }
  }

  Tape tape;
  const ForwardResult f1 = forward_masked(clone, tape, x);
  const ForwardResult f2 = forward_masked(clone, tape, x, &theta2);
  const NodeId diff = tape.sub(f1.output, f2.output);
  const NodeId loss = tape.sq_l2_norm(diff);
  tape.backward(loss);

  std::vector<double> contrib(net.prunable_count(), 0.0);
  std::size_t off = 0;
  for (std::size_t li = 0; li < clone.params.size(); ++li) {
    const Tensor& g1 = tape.grad(f1.weight_nodes[li]);
    const Tensor& g2 = tape.grad(f2.weight_nodes[li]);
    const Tensor& theta = clone.params[li].weight;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      contrib[off + i] = g1[i] * theta[i] + g2[i] * theta2[li][i];
    }
    off += theta.size();
  }
  return contrib;
}

SaliencyVector score_ntksap_round(const MaskedNetwork& net,
                                  const PruneConfig& cfg, std::size_t round,
                                  const Dataset* pruning_data,
                                  std::vector<double>* raw_accum) {
  std::size_t batches = cfg.batches_per_round;
  std::size_t groups = 1;
  if (cfg.input_source == InputSource::dataset) {
    if (!pruning_data || pruning_data->size() == 0) {
      throw NumericError("ntksap: dataset input source without pruning data");
    }
    batches = (pruning_data->size() + cfg.batch_size - 1) / cfg.batch_size;
    groups = cfg.reinit_count;
  }

  std::vector<double> accum(net.prunable_count(), 0.0);
  for (std::size_t i = 0; i < batches; ++i) {
    for (std::size_t r = 0; r < groups; ++r) {
      const std::vector<double> contrib =
          ntksap_batch_contribution(net, cfg, round, i, r, pruning_data);
      const double w = 1.0 / static_cast<double>(groups);
      for (std::size_t j = 0; j < accum.size(); ++j) {
        accum[j] += w * contrib[j];
      }
    }
  }
  if (raw_accum) *raw_accum = accum;

  SaliencyVector scores = sentinel_scores(net);
  std::size_t off = 0;
  for (const ParamLayer& p : net.params) {
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
      if (p.mask[i] != 0.0) scores[off + i] = std::fabs(accum[off + i]);
    }
    off += p.mask.size();
  }
  return scores;
}

SaliencyVector score_magnitude(const MaskedNetwork& net) {
  SaliencyVector scores = sentinel_scores(net);
  std::size_t off = 0;
  for (const ParamLayer& p : net.params) {
    for (std::size_t i = 0; i < p.weight.size(); ++i) {
      if (p.mask[i] != 0.0) scores[off + i] = std::fabs(p.weight[i]);
    }
    off += p.weight.size();
  }
  return scores;
}

SaliencyVector score_random(const MaskedNetwork& net, Rng& rng) {
  SaliencyVector scores = sentinel_scores(net);
  std::size_t off = 0;
  for (const ParamLayer& p : net.params) {
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
      // Coordinates draw in layout order regardless of masking so the stream
      // does not depend on the current mask.
      const double u = rng.uniform();
      if (p.mask[i] != 0.0) scores[off + i] = u;
    }
    off += p.mask.size();
  }
  return scores;
}

std::vector<double> threshold_update(const SaliencyVector& scores,
                                     const std::vector<double>& mask,
                                     double keep_fraction,
                                     double* threshold_out) {
  if (scores.size() != mask.size()) {
    throw ShapeError("threshold_update: " + std::to_string(scores.size()) +
                     " scores for " + std::to_string(mask.size()) +
                     " mask entries");
  }
  if (!(keep_fraction >= 0.0) || keep_fraction > 1.0) {
    throw NumericError("threshold_update: keep_fraction must be in [0,1]");
  }
  const std::size_t total = mask.size();
  const std::size_t k = static_cast<std::size_t>(
      std::llround(keep_fraction * static_cast<double>(total)));

  std::vector<std::size_t> active;
  active.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    if (mask[i] != 0.0) active.push_back(i);
  }
  if (k > active.size()) {
    throw NumericError("threshold_update: schedule asks to keep " +
                       std::to_string(k) + " weights but only " +
                       std::to_string(active.size()) + " are active");
  }
  std::sort(active.begin(), active.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<double> out(total, 0.0);
  for (std::size_t i = 0; i < k; ++i) out[active[i]] = 1.0;
  if (threshold_out) {
    *threshold_out = k > 0 ? scores[active[k - 1]]
                           : std::numeric_limits<double>::infinity();
  }
  return out;
}

PruneResult prune(MaskedNetwork& net, const PruneConfig& cfg,
                  const Dataset* pruning_data) {
  cfg.validate();
  if (method_needs_labels(cfg.method) &&
      (!pruning_data || pruning_data->size() == 0)) {
    throw NumericError("prune: method " + method_name(cfg.method) +
                       " requires labeled data");
  }
  std::vector<Batch> batches;
  if (method_needs_labels(cfg.method)) {
    batches = make_batches(*pruning_data, cfg.batch_size);
  }

  const std::size_t T = cfg.effective_rounds();
  PruneResult res;
  for (std::size_t t = 1; t <= T; ++t) {
    SaliencyVector scores;
    switch (cfg.method) {
      case PruneMethod::snip:
      case PruneMethod::iterative_snip:
        scores = score_snip(net, batches);
        break;
      case PruneMethod::grasp:
        scores = score_grasp(net, batches);
        break;
      case PruneMethod::synflow:
        scores = score_synflow(net);
        break;
      case PruneMethod::ntksap:
        scores = score_ntksap_round(net, cfg, t, pruning_data);
        break;
      case PruneMethod::magnitude:
        scores = score_magnitude(net);
        break;
      case PruneMethod::random: {
        Rng r = Rng(cfg.seed).fork(streams::random_scores, t);
        scores = score_random(net, r);
        break;
      }
    }
    const double kf = schedule_keep_fraction(cfg.density, t, T);
    double threshold = 0.0;
    const std::vector<double> mask =
        threshold_update(scores, flatten_masks(net), kf, &threshold);
    apply_mask_vector(net, mask);

    PruneRound round;
    round.round = t;
    round.keep_fraction = kf;
    round.active_count = net.active_count();
    round.threshold = threshold;
    const LayerCollapseReport rep = layer_collapse_report(net);
    round.collapsed = rep.collapsed;
    for (const auto& row : rep.rows) round.layer_active.push_back(row.active);
    res.trace.rounds.push_back(std::move(round));
  }
  res.final_mask = flatten_masks(net);
  return res;
}

LayerCollapseReport layer_collapse_report(const MaskedNetwork& net) {
  LayerCollapseReport rep;
  for (std::size_t li = 0; li < net.params.size(); ++li) {
    const ParamLayer& p = net.params[li];
    LayerCollapseReport::Row row;
    row.layer = li;
    row.total = p.mask.size();
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
      if (p.mask[i] != 0.0) ++row.active;
    }
    if (row.active == 0) {
      rep.collapsed = true;
      rep.collapsed_layers.push_back(li);
    }
    rep.rows.push_back(row);
  }
  return rep;
}

void write_mask_csv(const MaskedNetwork& net, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("mask csv: cannot open " + path);
  out << "flat_index,layer,position,active\n";
  const std::size_t p = net.prunable_count();
  std::size_t off = 0;
  for (std::size_t li = 0; li < net.params.size(); ++li) {
    const Tensor& mask = net.params[li].mask;
    const Shape& s = mask.shape();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      out << (off + i) << ',' << li << ',';
      std::size_t rem = i;
      std::vector<std::size_t> idx(s.size());
      for (std::size_t d = s.size(); d-- > 0;) {
        idx[d] = rem % s[d];
        rem /= s[d];
      }
      for (std::size_t d = 0; d < idx.size(); ++d) {
        if (d) out << ':';
        out << idx[d];
      }
      out << ',' << (mask[i] != 0.0 ? 1 : 0) << "\n";
    }
    off += mask.size();
  }
  (void)p;
  if (!out) throw IoError("mask csv: write failed for " + path);
}

void write_trace_csv(const PruneTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("trace csv: cannot open " + path);
  out << "round,keep_fraction,active_count,threshold,collapsed\n";
  char buf[32];
  for (const PruneRound& r : trace.rounds) {
    out << r.round << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", r.keep_fraction);
    out << buf << ',' << r.active_count << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", r.threshold);
    out << buf << ',' << (r.collapsed ? 1 : 0) << "\n";
  }
  if (!out) throw IoError("trace csv: write failed for " + path);
}

void write_collapse_csv(const LayerCollapseReport& report,
                        const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("collapse csv: cannot open " + path);
  out << "layer,active,total,collapsed\n";
  for (const auto& row : report.rows) {
    out << row.layer << ',' << row.active << ',' << row.total << ','
        << (row.active == 0 ? 1 : 0) << "\n";
  }
  if (!out) throw IoError("collapse csv: write failed for " + path);
}

}  // namespace ntkprune
