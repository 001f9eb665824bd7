#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afno/config.hpp"
#include "afno/mixers.hpp"
#include "afno/tensor.hpp"

namespace afno {

enum class HeadKind { reconstruction, classification, none };

HeadKind parse_head_kind(std::string_view name);
const char* head_kind_name(HeadKind kind);

/// `automatic` enables the learned positional embedding for attention only.
enum class PosEmbed { automatic, on, off };

struct ModelConfig {
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t depth = 2;
  std::size_t hidden = 32;
  MixerKind mixer = MixerKind::afno;
  std::size_t blocks = 4;
  double lambda = 0.01;
  double keep_fraction = 1.0;
  double mlp_ratio = 4.0;
  HeadKind head = HeadKind::reconstruction;
  std::size_t num_classes = 4;
  BiasMode bias_mode = BiasMode::identity_residual;
  std::size_t num_heads = 1;
  PosEmbed pos_embed = PosEmbed::automatic;
  Activation activation = Activation::relu;

  std::size_t grid_h() const { return image_h / patch; }
  std::size_t grid_w() const { return image_w / patch; }
  std::size_t mlp_hidden() const;
  bool uses_pos_embed() const;
  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  /// Writes every field under `model.`; apply() reads the same keys and leaves
  /// absent ones untouched.
  void to_kv(config::KeyValues& kv) const;
  void apply(const config::KeyValues& kv);

  bool operator==(const ModelConfig&) const = default;
};

struct TransformerBlock {
  Tensor norm1_scale, norm1_shift;  // real [d]
  MixerParams mixer;
  Tensor norm2_scale, norm2_shift;  // real [d]
  Tensor mlp_w1, mlp_b1;            // real [d, m], [m]
  Tensor mlp_w2, mlp_b2;            // real [m, d], [d]
};

struct Model {
  ModelConfig config;
  std::uint64_t seed = 0;
  Tensor embed;      // real [p*p*c, d], no bias
  Tensor pos_embed;  // real [h, w, d] when enabled
  std::vector<TransformerBlock> blocks;
  Tensor head_w, head_b;  // reconstruction: [d, p*p*c], [p*p*c]; classification: [d, C], [C]
};

/// Builds a model with every parameter marked requires_grad. Each parameter
/// draws from its own named random stream derived from `seed`.
Model make_model(const ModelConfig& cfg, std::uint64_t seed);

/// Every trainable tensor with its checkpoint name (aliasing handles).
std::vector<NamedParam> named_parameters(const Model& model);
std::size_t count_params_actual(const Model& model);

/// [B, H, W, c] images (or a single [H, W, c]) to [B, h, w, p*p*c] patch
/// vectors in row-major patch order.
Tensor patchify(const Tensor& images, std::size_t patch);
/// Inverse of patchify: [B, h, w, p*p*c] to [B, h*p, w*p, c].
Tensor unpatchify(const Tensor& patches, std::size_t patch, std::size_t channels);

/// Linear projection of every patch: [B, H, W, c] -> [B, h, w, d]; a rank-3
/// image gives a rank-3 token grid.
Tensor patch_embed(const Tensor& images, std::size_t patch, const Tensor& embed);

struct ForwardTrace {
  std::vector<ShrinkProbe> probes;  // one per AFNO layer
};

/// Pre-norm block: x + mixer(LN1 x), then x' + MLP(LN2 x').
Tensor block_forward(const Tensor& x, const TransformerBlock& blk, ShrinkProbe* probe = nullptr);

/// Token grid of the input images after all blocks, [B, h, w, d].
Tensor encode(const Tensor& images, const Model& model, ForwardTrace* trace = nullptr);

/// reconstruction: [B, H, W, c]; classification: logits [B, C]; none: tokens.
/// The token grid follows the input size, so spectral mixers see whatever
/// resolution the images have.
Tensor model_forward(const Tensor& images, const Model& model, ForwardTrace* trace = nullptr);

/// Model for a different input size sharing all parameters, except GFN
/// filters, which are bilinearly resized (detached). Throws for FNO models and
/// attention models with positional embedding, whose parameters are tied to
/// the token grid.
Model adapt_to_resolution(const Model& model, std::size_t image_h, std::size_t image_w);

/// Writes `checkpoint.afnt` (named-tensor container) and `manifest.txt`
/// (config echo, seed and entry list) into `dir`.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace afno
