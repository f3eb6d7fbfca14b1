#include "ntkprune/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace ntkprune {

namespace {

constexpr std::size_t kMaxDenseLayers = 10;
constexpr std::size_t kMaxConvLayers = 4;

std::pair<std::size_t, std::size_t> fan_in_out(const LayerSpec& l) {
  if (l.kind == LayerKind::dense) return {l.fan_in, l.fan_out};
  return {l.in_ch * l.kh * l.kw, l.out_ch * l.kh * l.kw};
}

Shape weight_shape(const LayerSpec& l) {
  if (l.kind == LayerKind::dense) return {l.fan_out, l.fan_in};
  return {l.out_ch, l.in_ch, l.kh, l.kw};
}

Shape bias_shape(const LayerSpec& l) {
  if (l.kind == LayerKind::dense) return {l.fan_out};
  return {l.out_ch};
}

}  // namespace

Shape Architecture::validate() const {
  if (input_shape.empty() || shape_size(input_shape) == 0) {
    throw ShapeError("architecture: empty input shape");
  }
  if (layers.empty()) {
    throw ShapeError("architecture: no layers");
  }
  std::size_t dense_count = 0, conv_count = 0;
  Shape cur = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = "architecture: layer " + std::to_string(i);
    switch (l.kind) {
      case LayerKind::dense: {
        ++dense_count;
        if (l.fan_in == 0 || l.fan_out == 0) {
          throw ShapeError(where + ": dense layer with zero fan");
        }
        if (cur.size() != 1 || cur[0] != l.fan_in) {
          throw ShapeError(where + ": dense fan_in " +
                           std::to_string(l.fan_in) + " does not match " +
                           shape_str(cur));
        }
        cur = {l.fan_out};
        break;
      }
      case LayerKind::conv2d: {
        ++conv_count;
        if (l.in_ch == 0 || l.out_ch == 0 || l.kh == 0 || l.kw == 0) {
          throw ShapeError(where + ": conv layer with zero extent");
        }
        if (cur.size() != 3 || cur[0] != l.in_ch) {
          throw ShapeError(where + ": conv in_ch " + std::to_string(l.in_ch) +
                           " does not match " + shape_str(cur));
        }
        const std::size_t h = cur[1], w = cur[2];
        if (h + 2 * l.pad < l.kh || w + 2 * l.pad < l.kw) {
          throw ShapeError(where + ": kernel does not fit " + shape_str(cur));
        }
        cur = {l.out_ch, h + 2 * l.pad - l.kh + 1, w + 2 * l.pad - l.kw + 1};
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::flatten:
        cur = {shape_size(cur)};
        break;
    }
  }
  if (dense_count > kMaxDenseLayers) {
    throw ShapeError("architecture: " + std::to_string(dense_count) +
                     " dense layers exceeds limit of " +
                     std::to_string(kMaxDenseLayers));
  }
  if (conv_count > kMaxConvLayers) {
    throw ShapeError("architecture: " + std::to_string(conv_count) +
                     " conv layers exceeds limit of " +
                     std::to_string(kMaxConvLayers));
  }
  if (cur.size() != 1) {
    throw ShapeError("architecture: output shape " + shape_str(cur) +
                     " is not a logit vector");
  }
  return cur;
}

std::size_t Architecture::output_dim() const { return validate()[0]; }

Architecture mlp_architecture(std::size_t input_dim,
                              const std::vector<std::size_t>& hidden,
                              std::size_t classes, InitKind init) {
  Architecture arch;
  arch.input_shape = {input_dim};
  arch.init = init;
  std::size_t cur = input_dim;
  for (std::size_t h : hidden) {
    LayerSpec dense;
    dense.kind = LayerKind::dense;
    dense.fan_in = cur;
    dense.fan_out = h;
    arch.layers.push_back(dense);
    arch.layers.push_back({.kind = LayerKind::relu});
    cur = h;
  }
  LayerSpec head;
  head.kind = LayerKind::dense;
  head.fan_in = cur;
  head.fan_out = classes;
  arch.layers.push_back(head);
  arch.validate();
  return arch;
}

Architecture cnn_architecture(std::size_t in_ch, std::size_t in_h,
                              std::size_t in_w,
                              const std::vector<std::size_t>& conv_channels,
                              std::size_t kernel, std::size_t pad,
                              const std::vector<std::size_t>& hidden,
                              std::size_t classes, InitKind init) {
  Architecture arch;
  arch.input_shape = {in_ch, in_h, in_w};
  arch.init = init;
  std::size_t ch = in_ch, h = in_h, w = in_w;
  for (std::size_t out_ch : conv_channels) {
    LayerSpec conv;
    conv.kind = LayerKind::conv2d;
    conv.in_ch = ch;
    conv.out_ch = out_ch;
    conv.kh = kernel;
    conv.kw = kernel;
    conv.pad = pad;
    arch.layers.push_back(conv);
    arch.layers.push_back({.kind = LayerKind::relu});
    ch = out_ch;
    h = h + 2 * pad - kernel + 1;
    w = w + 2 * pad - kernel + 1;
  }
  arch.layers.push_back({.kind = LayerKind::flatten});
  std::size_t cur = ch * h * w;
  for (std::size_t hid : hidden) {
    LayerSpec dense;
    dense.kind = LayerKind::dense;
    dense.fan_in = cur;
    dense.fan_out = hid;
    arch.layers.push_back(dense);
    arch.layers.push_back({.kind = LayerKind::relu});
    cur = hid;
  }
  LayerSpec head;
  head.kind = LayerKind::dense;
  head.fan_in = cur;
  head.fan_out = classes;
  arch.layers.push_back(head);
  arch.validate();
  return arch;
}

std::size_t MaskedNetwork::prunable_count() const {
  std::size_t n = 0;
  for (const ParamLayer& p : params) n += p.weight.size();
  return n;
}

std::size_t MaskedNetwork::active_count() const {
  std::size_t n = 0;
  for (const ParamLayer& p : params) {
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
      if (p.mask[i] != 0.0) ++n;
    }
  }
  return n;
}

double MaskedNetwork::density() const {
  const std::size_t total = prunable_count();
  return total == 0 ? 0.0
                    : static_cast<double>(active_count()) /
                          static_cast<double>(total);
}

void MaskedNetwork::reinitialize(Rng& rng) {
  for (ParamLayer& p : params) {
    const LayerSpec& spec = arch.layers[p.layer_index];
    const auto [fin, fout] = fan_in_out(spec);
    const double sd = arch.init == InitKind::kaiming_normal
                          ? std::sqrt(2.0 / static_cast<double>(fin))
                          : std::sqrt(2.0 / static_cast<double>(fin + fout));
    for (std::size_t i = 0; i < p.weight.size(); ++i) {
      p.weight[i] = sd * rng.normal();
    }
    p.bias.fill(0.0);
  }
}

MaskedNetwork build_network(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  MaskedNetwork net;
  net.arch = arch;
  net.seed = seed;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    if (!l.prunable()) continue;
    ParamLayer p;
    p.layer_index = i;
    p.weight = Tensor(weight_shape(l));
    p.bias = Tensor(bias_shape(l));
    p.mask = Tensor::full(weight_shape(l), 1.0);
    net.params.push_back(std::move(p));
  }
  Rng rng = Rng(seed).fork(streams::weights);
  net.reinitialize(rng);
  return net;
}

ForwardResult forward_masked(const MaskedNetwork& net, Tape& tape,
                             const Tensor& x,
                             const std::vector<Tensor>* theta_override,
                             const std::vector<Tensor>* bias_override) {
  const Shape& in_shape = net.arch.input_shape;
  if (x.rank() != in_shape.size() + 1) {
    throw ShapeError("forward: input " + shape_str(x.shape()) +
                     " does not match batched " + shape_str(in_shape));
  }
  for (std::size_t d = 0; d < in_shape.size(); ++d) {
    if (x.extent(d + 1) != in_shape[d]) {
      throw ShapeError("forward: input " + shape_str(x.shape()) +
                       " does not match batched " + shape_str(in_shape));
    }
  }
  if (theta_override && theta_override->size() != net.params.size()) {
    throw ShapeError("forward: theta override count mismatch");
  }
  if (bias_override && bias_override->size() != net.params.size()) {
    throw ShapeError("forward: bias override count mismatch");
  }
  const std::size_t batch = x.extent(0);

  ForwardResult res;
  NodeId cur = tape.constant(x);
  std::size_t pi = 0;
  for (const LayerSpec& l : net.arch.layers) {
    switch (l.kind) {
      case LayerKind::dense:
      case LayerKind::conv2d: {
        const ParamLayer& p = net.params[pi];
        const Tensor& theta =
            theta_override ? (*theta_override)[pi] : p.weight;
        const Tensor& bias = bias_override ? (*bias_override)[pi] : p.bias;
        if (!theta.same_shape(p.weight)) {
          throw ShapeError("forward: override shape " +
                           shape_str(theta.shape()) + " does not match " +
                           shape_str(p.weight.shape()));
        }
        if (!bias.same_shape(p.bias)) {
          throw ShapeError("forward: override shape " +
                           shape_str(bias.shape()) + " does not match " +
                           shape_str(p.bias.shape()));
        }
        Tensor eff(theta.shape());
        for (std::size_t i = 0; i < eff.size(); ++i) {
          eff[i] = theta[i] * p.mask[i];
        }
        const NodeId w = tape.leaf(std::move(eff));
        const NodeId b = tape.leaf(bias);
        res.weight_nodes.push_back(w);
        res.bias_nodes.push_back(b);
        if (l.kind == LayerKind::dense) {
          cur = tape.linear(cur, w, b);
        } else {
          cur = tape.conv2d(cur, w, l.pad);
          cur = tape.channel_bias(cur, b);
        }
        ++pi;
        break;
      }
      case LayerKind::relu:
        cur = tape.relu(cur);
        break;
      case LayerKind::flatten: {
        const Tensor& v = tape.value(cur);
        cur = tape.reshape(cur, {batch, v.size() / batch});
        break;
      }
    }
  }
  res.output = cur;
  return res;
}

std::vector<double> flatten_masks(const MaskedNetwork& net) {
  std::vector<double> out;
  out.reserve(net.prunable_count());
  for (const ParamLayer& p : net.params) {
    out.insert(out.end(), p.mask.values().begin(), p.mask.values().end());
  }
  return out;
}

std::vector<double> flatten_weights(const MaskedNetwork& net) {
  std::vector<double> out;
  out.reserve(net.prunable_count());
  for (const ParamLayer& p : net.params) {
    out.insert(out.end(), p.weight.values().begin(), p.weight.values().end());
  }
  return out;
}

void apply_mask_vector(MaskedNetwork& net, const std::vector<double>& mask) {
  if (mask.size() != net.prunable_count()) {
    throw ShapeError("apply_mask_vector: " + std::to_string(mask.size()) +
                     " entries for " + std::to_string(net.prunable_count()) +
                     " prunable weights");
  }
  for (double v : mask) {
    if (v != 0.0 && v != 1.0) {
      throw NumericError("apply_mask_vector: mask entries must be 0 or 1");
    }
  }
  std::size_t off = 0;
  for (ParamLayer& p : net.params) {
    for (std::size_t i = 0; i < p.mask.size(); ++i) p.mask[i] = mask[off + i];
    off += p.mask.size();
  }
}

FlatPosition locate(const MaskedNetwork& net, std::size_t flat_index) {
  std::size_t off = flat_index;
  for (std::size_t li = 0; li < net.params.size(); ++li) {
    const Tensor& w = net.params[li].weight;
    if (off < w.size()) {
      FlatPosition pos;
      pos.param_layer = li;
      pos.offset = off;
      std::size_t rem = off;
      const Shape& s = w.shape();
      pos.index.resize(s.size());
      for (std::size_t d = s.size(); d-- > 0;) {
        pos.index[d] = rem % s[d];
        rem /= s[d];
      }
      return pos;
    }
    off -= w.size();
  }
  throw ShapeError("locate: flat index " + std::to_string(flat_index) +
                   " outside " + std::to_string(net.prunable_count()) +
                   " prunable weights");
}

namespace {

constexpr char kMagic[4] = {'N', 'T', 'K', 'S'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(buf, v);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) {
    if (pos + n > buf.size()) {
      throw IoError("network snapshot: truncated file");
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    }
    pos += 8;
    return v;
  }
  double f64() {
    const std::uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
};

}  // namespace

void save_network(const MaskedNetwork& net, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(net.arch.init));
  put_u64(buf, net.seed);
  put_u32(buf, static_cast<std::uint32_t>(net.arch.input_shape.size()));
  for (std::size_t e : net.arch.input_shape) put_u64(buf, e);
  put_u32(buf, static_cast<std::uint32_t>(net.arch.layers.size()));
  for (const LayerSpec& l : net.arch.layers) {
    put_u32(buf, static_cast<std::uint32_t>(l.kind));
    put_u64(buf, l.fan_in);
    put_u64(buf, l.fan_out);
    put_u64(buf, l.in_ch);
    put_u64(buf, l.out_ch);
    put_u64(buf, l.kh);
    put_u64(buf, l.kw);
    put_u64(buf, l.pad);
  }
  for (const ParamLayer& p : net.params) {
    for (std::size_t i = 0; i < p.weight.size(); ++i) put_f64(buf, p.weight[i]);
    for (std::size_t i = 0; i < p.bias.size(); ++i) put_f64(buf, p.bias[i]);
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
      buf.push_back(p.mask[i] != 0.0 ? 1 : 0);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("network snapshot: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("network snapshot: write failed for " + path);
}

MaskedNetwork load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("network snapshot: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  Reader r{buf};
  r.need(4);
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw IoError("network snapshot: bad magic in " + path);
  }
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw IoError("network snapshot: unsupported version " +
                  std::to_string(version));
  }
  Architecture arch;
  arch.init = static_cast<InitKind>(r.u32());
  const std::uint64_t seed = r.u64();
  const std::uint32_t in_rank = r.u32();
  arch.input_shape.resize(in_rank);
  for (std::uint32_t i = 0; i < in_rank; ++i) arch.input_shape[i] = r.u64();
  const std::uint32_t n_layers = r.u32();
  arch.layers.resize(n_layers);
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec& l = arch.layers[i];
    l.kind = static_cast<LayerKind>(r.u32());
    l.fan_in = r.u64();
    l.fan_out = r.u64();
    l.in_ch = r.u64();
    l.out_ch = r.u64();
    l.kh = r.u64();
    l.kw = r.u64();
    l.pad = r.u64();
  }
  MaskedNetwork net = build_network(arch, seed);
  for (ParamLayer& p : net.params) {
    for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight[i] = r.f64();
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] = r.f64();
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
      p.mask[i] = r.u8() ? 1.0 : 0.0;
    }
  }
  if (r.pos != buf.size()) {
    throw IoError("network snapshot: trailing bytes in " + path);
  }
  return net;
}

}  // namespace ntkprune
