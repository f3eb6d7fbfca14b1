#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ntkprune/rng.hpp"
#include "ntkprune/tape.hpp"
#include "ntkprune/tensor.hpp"

namespace ntkprune {

enum class LayerKind { dense, conv2d, relu, flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  // dense
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  // conv2d
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;
  std::size_t pad = 0;
  bool prunable() const {
    return kind == LayerKind::dense || kind == LayerKind::conv2d;
  }
};

enum class InitKind { kaiming_normal, xavier_normal };

struct Architecture {
  Shape input_shape;  // {features} for MLPs, {channels, h, w} for CNNs
  std::vector<LayerSpec> layers;
  InitKind init = InitKind::kaiming_normal;

  // Walks the layer list, checking that consecutive shapes compose and that
  // depth limits (10 dense / 4 conv layers) hold. Returns the output shape.
  Shape validate() const;
  std::size_t output_dim() const;
};

Architecture mlp_architecture(std::size_t input_dim,
                              const std::vector<std::size_t>& hidden,
                              std::size_t classes,
                              InitKind init = InitKind::kaiming_normal);

// conv_channels[i] 3x3-style conv blocks (kernel x kernel, given padding),
// each followed by ReLU, then flatten, then an MLP head.
Architecture cnn_architecture(std::size_t in_ch, std::size_t in_h,
                              std::size_t in_w,
                              const std::vector<std::size_t>& conv_channels,
                              std::size_t kernel, std::size_t pad,
                              const std::vector<std::size_t>& hidden,
                              std::size_t classes,
                              InitKind init = InitKind::kaiming_normal);

// One prunable layer's storage. Dense weights are (fan_out, fan_in); conv
// weights are (out_ch, in_ch, kh, kw). The mask shadows the weight shape with
// entries in {0,1}; biases are never masked.
struct ParamLayer {
  std::size_t layer_index = 0;  // position in Architecture::layers
  Tensor weight;
  Tensor bias;
  Tensor mask;
};

struct MaskedNetwork {
  Architecture arch;
  std::vector<ParamLayer> params;
  std::uint64_t seed = 0;

  std::size_t prunable_count() const;
  std::size_t active_count() const;
  double density() const;

  // Fresh weights from `rng` (layer by layer, row-major within each layer;
  // Kaiming sd = sqrt(2/fan_in), Xavier sd = sqrt(2/(fan_in+fan_out))).
  // Biases reset to zero. Masks are left untouched.
  void reinitialize(Rng& rng);
};

// All-ones masks, weights drawn from Rng(seed).fork(streams::weights).
MaskedNetwork build_network(const Architecture& arch, std::uint64_t seed);

struct ForwardResult {
  NodeId output = 0;
  // Leaf ids per param layer: the effective weights (theta * mask) and the
  // biases actually consumed by the forward pass.
  std::vector<NodeId> weight_nodes;
  std::vector<NodeId> bias_nodes;
};

// Forward pass through theta * mask. x carries a leading batch dimension.
// theta_override / bias_override, when given, replace the stored parameters
// (masks still apply); they must match the stored shapes.
ForwardResult forward_masked(const MaskedNetwork& net, Tape& tape,
                             const Tensor& x,
                             const std::vector<Tensor>* theta_override = nullptr,
                             const std::vector<Tensor>* bias_override = nullptr);

// Flattened mask/weight layout: param layers in order, row-major within each
// layer. flat index 0 is entry (0,0,...) of the first prunable layer.
std::vector<double> flatten_masks(const MaskedNetwork& net);
std::vector<double> flatten_weights(const MaskedNetwork& net);
void apply_mask_vector(MaskedNetwork& net, const std::vector<double>& mask);

struct FlatPosition {
  std::size_t param_layer = 0;      // ordinal among prunable layers
  std::size_t offset = 0;           // row-major offset within the layer
  std::vector<std::size_t> index;   // multi-index within the layer
};
FlatPosition locate(const MaskedNetwork& net, std::size_t flat_index);

// Binary snapshot: magic "NTKS", version, init/seed, architecture table,
// then per param layer the weights and biases as little-endian 64-bit reals
// and the mask as bytes.
void save_network(const MaskedNetwork& net, const std::string& path);
MaskedNetwork load_network(const std::string& path);

}  // namespace ntkprune
