#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "afno/rng.hpp"
#include "afno/spectral.hpp"
#include "afno/tensor.hpp"

namespace afno {

enum class MixerKind { sa, gfn, fno, afno };

MixerKind parse_mixer_kind(std::string_view name);
const char* mixer_kind_name(MixerKind kind);

/// Residual added after the inverse transform of the AFNO spectral branch.
enum class BiasMode { identity_residual, conv1d_residual };

BiasMode parse_bias_mode(std::string_view name);
const char* bias_mode_name(BiasMode mode);

/// Nonlinearity inside the AFNO block MLP. `identity` turns the mixer into a
/// linear operator, which the equivariance and resolution properties use.
enum class Activation { relu, identity };

struct AttentionParams {
  Tensor wq, wk, wv;  // real [d, d]
  std::size_t num_heads = 1;
};

struct GfnParams {
  Tensor filter;  // complex [h, w/2+1, d]
};

struct FnoParams {
  Tensor weight;  // complex [h, w/2+1, d_in, d_out]; z_out = z_in . W per mode
};

struct AfnoParams {
  Tensor w1, w2;  // complex [k, d/k, d/k]
  Tensor b1, b2;  // complex [k, d/k]
  double lambda = 0.01;
  double keep_fraction = 1.0;
  BiasMode bias_mode = BiasMode::identity_residual;
  Tensor conv_weight;  // real [3, d], conv1d_residual only
  Tensor conv_bias;    // real [d], conv1d_residual only
  Activation activation = Activation::relu;

  std::size_t blocks() const { return w1.dim(0); }
  std::size_t block_size() const { return w1.dim(1); }
  std::size_t channels() const { return blocks() * block_size(); }
};

using MixerParams = std::variant<AttentionParams, GfnParams, FnoParams, AfnoParams>;

MixerKind kind_of(const MixerParams& params);

/// Spectral coefficients entering the soft-shrink step of one afno_mix call,
/// captured detached for sparsity analysis.
struct ShrinkProbe {
  spectral::ModeSelection modes;
  Tensor pre_shrink;  // complex [..., rows, cols, d]
  double lambda = 0.0;
};

// -- mixers; each maps real [..., h, w, d] to the same shape ----------------

Tensor self_attention(const Tensor& x, const AttentionParams& p);
Tensor gfn_mix(const Tensor& x, const GfnParams& p);
Tensor fno_mix(const Tensor& x, const FnoParams& p);
Tensor afno_mix(const Tensor& x, const AfnoParams& p, ShrinkProbe* probe = nullptr);
Tensor mix(const Tensor& x, const MixerParams& p, ShrinkProbe* probe = nullptr);

/// Bilinear (corner-aligned) resampling of the filter grid to the half
/// spectrum of a new_h x new_w token grid; real and imaginary parts are
/// interpolated independently.
GfnParams gfn_filter_resize(const GfnParams& p, std::size_t new_h, std::size_t new_w);

/// S_lambda applied separately to real and imaginary parts.
Tensor soft_shrink(const Tensor& z, double lambda);

/// Two-layer complex MLP with block-diagonal weights shared by every mode:
/// z [..., k, d/k] -> act(z W1 + b1) W2 + b2.
Tensor block_mlp(const Tensor& z, const AfnoParams& p);

/// Depthwise length-3 circular convolution along the flattened token
/// sequence of a real [..., h, w, d] tensor, plus a per-channel bias.
Tensor circular_conv1d_depthwise(const Tensor& x, const Tensor& weight, const Tensor& bias);

// -- construction -----------------------------------------------------------

AttentionParams make_attention(std::size_t d, std::size_t num_heads, Rng& rng);
/// Filter starts at 1 + N(0, 0.01) noise per component (near-identity).
GfnParams make_gfn(std::size_t h, std::size_t w, std::size_t d, Rng& rng);
FnoParams make_fno(std::size_t h, std::size_t w, std::size_t d, Rng& rng);
/// MLP weights N(0, 0.02) / sqrt(d/k) per component; biases N(0, 0.02).
AfnoParams make_afno(std::size_t d, std::size_t blocks, double lambda, double keep_fraction, BiasMode bias_mode,
                     Rng& rng);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

/// Handles to every trainable tensor of the mixer (aliasing, not copies).
std::vector<NamedParam> named_parameters(const MixerParams& params);

/// Real-valued parameter count; complex entries count twice.
std::size_t parameter_count(const MixerParams& params);

}  // namespace afno
