#include "afno/backbone.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "afno/io.hpp"
#include "afno/ops.hpp"

namespace afno {

namespace {

Tensor normal_param(Shape shape, std::uint64_t seed, const std::string& name, double stddev) {
  Rng rng = Rng::stream(seed, "init/" + name);
  Tensor t(std::move(shape));
  for (double& v : t.raw_mut()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor constant_param(Shape shape, double value) { return Tensor::full(std::move(shape), value); }

Shape with_batch(Shape s) {
  s.insert(s.begin(), 1);
  return s;
}

void mark_trainable(Model& m) {
  for (auto& np : named_parameters(m)) np.tensor.set_requires_grad(true);
}

MixerParams build_mixer(const ModelConfig& cfg, std::uint64_t seed, std::size_t layer) {
  Rng rng = Rng::stream(seed, "init/mixer." + std::to_string(layer));
  const std::size_t d = cfg.hidden;
  switch (cfg.mixer) {
    case MixerKind::sa: return make_attention(d, cfg.num_heads, rng);
    case MixerKind::gfn: return make_gfn(cfg.grid_h(), cfg.grid_w(), d, rng);
    case MixerKind::fno: return make_fno(cfg.grid_h(), cfg.grid_w(), d, rng);
    case MixerKind::afno: {
      AfnoParams p = make_afno(d, cfg.blocks, cfg.lambda, cfg.keep_fraction, cfg.bias_mode, rng);
      p.activation = cfg.activation;
      return p;
    }
  }
  throw std::logic_error("unreachable mixer kind");
}

std::string pos_embed_name(PosEmbed p) {
  switch (p) {
    case PosEmbed::automatic: return "auto";
    case PosEmbed::on: return "on";
    case PosEmbed::off: return "off";
  }
  return "auto";
}

PosEmbed parse_pos_embed(std::string_view s) {
  if (s == "auto") return PosEmbed::automatic;
  if (s == "on" || s == "true") return PosEmbed::on;
  if (s == "off" || s == "false") return PosEmbed::off;
  throw config::ConfigError("model.pos_embed must be auto|on|off, got '" + std::string(s) + "'");
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw config::ConfigError("model.activation must be relu|identity, got '" + std::string(s) + "'");
}

}  // namespace

HeadKind parse_head_kind(std::string_view name) {
  if (name == "reconstruction") return HeadKind::reconstruction;
  if (name == "classification") return HeadKind::classification;
  if (name == "none") return HeadKind::none;
  throw std::invalid_argument("unknown head '" + std::string(name) + "' (expected reconstruction|classification|none)");
}

const char* head_kind_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::reconstruction: return "reconstruction";
    case HeadKind::classification: return "classification";
    case HeadKind::none: return "none";
  }
  return "?";
}

std::size_t ModelConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(hidden)));
}

bool ModelConfig::uses_pos_embed() const {
  if (pos_embed == PosEmbed::automatic) return mixer == MixerKind::sa;
  return pos_embed == PosEmbed::on;
}

void ModelConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (image_h == 0 || image_w == 0 || channels == 0 || hidden == 0) fail("sizes must be positive");
  if (patch == 0 || image_h % patch != 0 || image_w % patch != 0) {
    fail("patch " + std::to_string(patch) + " must divide image " + std::to_string(image_h) + "x" +
         std::to_string(image_w));
  }
  if (mixer == MixerKind::afno && (blocks == 0 || hidden % blocks != 0)) {
    fail("blocks " + std::to_string(blocks) + " must divide hidden " + std::to_string(hidden));
  }
  if (mixer == MixerKind::sa && (num_heads == 0 || hidden % num_heads != 0)) fail("num_heads must divide hidden");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) fail("keep_fraction must be in (0, 1]");
  if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) fail("mlp_ratio must be positive");
  if (head == HeadKind::classification && num_classes < 2) fail("classification needs at least 2 classes");
}

void ModelConfig::to_kv(config::KeyValues& kv) const {
  using config::format_double;
  kv.set("model.image_h", std::to_string(image_h));
  kv.set("model.image_w", std::to_string(image_w));
  kv.set("model.channels", std::to_string(channels));
  kv.set("model.patch", std::to_string(patch));
  kv.set("model.depth", std::to_string(depth));
  kv.set("model.hidden", std::to_string(hidden));
  kv.set("model.mixer", mixer_kind_name(mixer));
  kv.set("model.blocks", std::to_string(blocks));
  kv.set("model.lambda", format_double(lambda));
  kv.set("model.keep_fraction", format_double(keep_fraction));
  kv.set("model.mlp_ratio", format_double(mlp_ratio));
  kv.set("model.head", head_kind_name(head));
  kv.set("model.num_classes", std::to_string(num_classes));
  kv.set("model.bias_mode", bias_mode_name(bias_mode));
  kv.set("model.num_heads", std::to_string(num_heads));
  kv.set("model.pos_embed", pos_embed_name(pos_embed));
  kv.set("model.activation", activation == Activation::relu ? "relu" : "identity");
}

void ModelConfig::apply(const config::KeyValues& kv) {
  const auto size = [&](const char* key, std::size_t& field) {
    field = static_cast<std::size_t>(kv.get_u64(key, field));
  };
  size("model.image_h", image_h);
  size("model.image_w", image_w);
  size("model.channels", channels);
  size("model.patch", patch);
  size("model.depth", depth);
  size("model.hidden", hidden);
  size("model.blocks", blocks);
  size("model.num_classes", num_classes);
  size("model.num_heads", num_heads);
  lambda = kv.get_double("model.lambda", lambda);
  keep_fraction = kv.get_double("model.keep_fraction", keep_fraction);
  mlp_ratio = kv.get_double("model.mlp_ratio", mlp_ratio);
  try {
    if (auto v = kv.get("model.mixer")) mixer = parse_mixer_kind(*v);
    if (auto v = kv.get("model.head")) head = parse_head_kind(*v);
    if (auto v = kv.get("model.bias_mode")) bias_mode = parse_bias_mode(*v);
  } catch (const config::ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw config::ConfigError(e.what());
  }
  if (auto v = kv.get("model.pos_embed")) pos_embed = parse_pos_embed(*v);
  if (auto v = kv.get("model.activation")) activation = parse_activation(*v);
}

Model make_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.config = cfg;
  m.seed = seed;
  const std::size_t d = cfg.hidden;
  const std::size_t pdim = cfg.patch * cfg.patch * cfg.channels;
  const std::size_t hid = cfg.mlp_hidden();
  m.embed = normal_param({pdim, d}, seed, "embed.weight", 1.0 / std::sqrt(static_cast<double>(pdim)));
  if (cfg.uses_pos_embed()) m.pos_embed = normal_param({cfg.grid_h(), cfg.grid_w(), d}, seed, "pos_embed", 0.02);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::string pre = "block." + std::to_string(l) + ".";
    TransformerBlock b;
    b.norm1_scale = constant_param({d}, 1.0);
    b.norm1_shift = constant_param({d}, 0.0);
    b.mixer = build_mixer(cfg, seed, l);
    b.norm2_scale = constant_param({d}, 1.0);
    b.norm2_shift = constant_param({d}, 0.0);
    b.mlp_w1 = normal_param({d, hid}, seed, pre + "mlp.w1", 1.0 / std::sqrt(static_cast<double>(d)));
    b.mlp_b1 = constant_param({hid}, 0.0);
    b.mlp_w2 = normal_param({hid, d}, seed, pre + "mlp.w2", 0.5 / std::sqrt(static_cast<double>(hid)));
    b.mlp_b2 = constant_param({d}, 0.0);
    m.blocks.push_back(std::move(b));
  }
  if (cfg.head == HeadKind::reconstruction) {
    m.head_w = normal_param({d, pdim}, seed, "head.weight", 1.0 / std::sqrt(static_cast<double>(d)));
    m.head_b = constant_param({pdim}, 0.0);
  } else if (cfg.head == HeadKind::classification) {
    m.head_w = normal_param({d, cfg.num_classes}, seed, "head.weight", 1.0 / std::sqrt(static_cast<double>(d)));
    m.head_b = constant_param({cfg.num_classes}, 0.0);
  }
  mark_trainable(m);
  return m;
}

std::vector<NamedParam> named_parameters(const Model& model) {
  std::vector<NamedParam> out;
  out.push_back({"embed.weight", model.embed});
  if (model.pos_embed.defined()) out.push_back({"pos_embed", model.pos_embed});
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& b = model.blocks[l];
    const std::string pre = "block." + std::to_string(l) + ".";
    out.push_back({pre + "norm1.scale", b.norm1_scale});
    out.push_back({pre + "norm1.shift", b.norm1_shift});
    for (auto& np : named_parameters(b.mixer)) out.push_back({"mixer." + std::to_string(l) + "." + np.name, np.tensor});
    out.push_back({pre + "norm2.scale", b.norm2_scale});
    out.push_back({pre + "norm2.shift", b.norm2_shift});
    out.push_back({pre + "mlp.w1", b.mlp_w1});
    out.push_back({pre + "mlp.b1", b.mlp_b1});
    out.push_back({pre + "mlp.w2", b.mlp_w2});
    out.push_back({pre + "mlp.b2", b.mlp_b2});
  }
  if (model.head_w.defined()) {
    out.push_back({"head.weight", model.head_w});
    out.push_back({"head.bias", model.head_b});
  }
  return out;
}

std::size_t count_params_actual(const Model& model) {
  std::size_t total = 0;
  for (const auto& np : named_parameters(model)) total += np.tensor.raw().size();
  return total;
}

Tensor patchify(const Tensor& images, std::size_t patch) {
  const bool single = images.rank() == 3;
  if (images.rank() != 3 && images.rank() != 4) {
    throw DimensionError("patchify expects [H, W, c] or [B, H, W, c], got " + shape_str(images.shape()));
  }
  const std::size_t b = single ? 1 : images.dim(0);
  const std::size_t H = images.dim(-3), W = images.dim(-2), c = images.dim(-1);
  if (patch == 0 || H % patch != 0 || W % patch != 0) {
    throw DimensionError("patch size " + std::to_string(patch) + " does not divide image " + shape_str(images.shape()));
  }
  const std::size_t h = H / patch, w = W / patch;
  const Tensor grid = reshape(images, {b, h, patch, w, patch, c});
  const Tensor out = reshape(permute(grid, {0, 1, 3, 2, 4, 5}), {b, h, w, patch * patch * c});
  return single ? reshape(out, {h, w, patch * patch * c}) : out;
}

Tensor unpatchify(const Tensor& patches, std::size_t patch, std::size_t channels) {
  if (patches.rank() != 4 || patches.dim(-1) != patch * patch * channels) {
    throw DimensionError("unpatchify expects [B, h, w, " + std::to_string(patch * patch * channels) + "], got " +
                         shape_str(patches.shape()));
  }
  const std::size_t b = patches.dim(0), h = patches.dim(1), w = patches.dim(2);
  const Tensor grid = reshape(patches, {b, h, w, patch, patch, channels});
  return reshape(permute(grid, {0, 1, 3, 2, 4, 5}), {b, h * patch, w * patch, channels});
}

Tensor patch_embed(const Tensor& images, std::size_t patch, const Tensor& embed) {
  const Tensor patches = patchify(images, patch);
  if (embed.rank() != 2 || embed.dim(0) != patches.dim(-1)) {
    throw DimensionError("patch_embed: projection " + shape_str(embed.shape()) + " does not accept patches of size " +
                         std::to_string(patches.dim(-1)));
  }
  Shape flat_shape{patches.numel() / patches.dim(-1), patches.dim(-1)};
  Shape out_shape = patches.shape();
  out_shape.back() = embed.dim(1);
  return reshape(matmul(reshape(patches, flat_shape), embed), out_shape);
}

Tensor block_forward(const Tensor& x, const TransformerBlock& blk, ShrinkProbe* probe) {
  const std::size_t d = x.dim(-1);
  const Tensor mixed = mix(layer_norm(x, blk.norm1_scale, blk.norm1_shift), blk.mixer, probe);
  const Tensor y = add(x, mixed);
  const Tensor flat = reshape(layer_norm(y, blk.norm2_scale, blk.norm2_shift), {y.numel() / d, d});
  const Tensor hidden = relu(add(matmul(flat, blk.mlp_w1), blk.mlp_b1));
  const Tensor out = add(matmul(hidden, blk.mlp_w2), blk.mlp_b2);
  return add(y, reshape(out, y.shape()));
}

Tensor encode(const Tensor& images, const Model& model, ForwardTrace* trace) {
  const Tensor batch = images.rank() == 3 ? reshape(images, with_batch(images.shape())) : images;
  if (batch.rank() != 4 || batch.dim(-1) != model.config.channels) {
    throw DimensionError("model expects [B, H, W, " + std::to_string(model.config.channels) + "] images, got " +
                         shape_str(images.shape()));
  }
  Tensor x = patch_embed(batch, model.config.patch, model.embed);
  if (model.pos_embed.defined()) x = add(x, model.pos_embed);
  if (trace) trace->probes.clear();
  for (const auto& blk : model.blocks) {
    if (trace && std::holds_alternative<AfnoParams>(blk.mixer)) {
      trace->probes.emplace_back();
      x = block_forward(x, blk, &trace->probes.back());
    } else {
      x = block_forward(x, blk);
    }
  }
  return x;
}

Tensor model_forward(const Tensor& images, const Model& model, ForwardTrace* trace) {
  const Tensor tokens = encode(images, model, trace);
  const std::size_t b = tokens.dim(0), h = tokens.dim(1), w = tokens.dim(2), d = tokens.dim(3);
  switch (model.config.head) {
    case HeadKind::none: return tokens;
    case HeadKind::reconstruction: {
      const Tensor flat = add(matmul(reshape(tokens, {b * h * w, d}), model.head_w), model.head_b);
      return unpatchify(reshape(flat, {b, h, w, flat.dim(-1)}), model.config.patch, model.config.channels);
    }
    case HeadKind::classification: {
      const Tensor pooled = mean_axis(reshape(tokens, {b, h * w, d}), 1);
      return add(matmul(pooled, model.head_w), model.head_b);
    }
  }
  throw std::logic_error("unreachable head kind");
}

Model adapt_to_resolution(const Model& model, std::size_t image_h, std::size_t image_w) {
  Model out = model;
  out.config.image_h = image_h;
  out.config.image_w = image_w;
  out.config.validate();
  if (model.config.mixer == MixerKind::fno) {
    throw std::invalid_argument("FNO weights are tied to the token grid and cannot be resized");
  }
  if (model.pos_embed.defined() && (out.config.grid_h() != model.config.grid_h() ||
                                    out.config.grid_w() != model.config.grid_w())) {
    throw std::invalid_argument("positional embedding is tied to the token grid and cannot be resized");
  }
  if (model.config.mixer == MixerKind::gfn) {
    autograd::NoGradGuard guard;
    for (auto& blk : out.blocks) {
      const auto& p = std::get<GfnParams>(blk.mixer);
      GfnParams resized = gfn_filter_resize(p, out.config.grid_h(), out.config.grid_w());
      blk.mixer = GfnParams{resized.filter.detach()};
    }
  }
  return out;
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto params = named_parameters(model);
  std::vector<io::NamedTensor> entries;
  entries.reserve(params.size());
  for (const auto& np : params) entries.push_back({np.name, np.tensor});
  io::save_container(dir / "checkpoint.afnt", entries);

  config::KeyValues kv;
  kv.set("seed", std::to_string(model.seed));
  model.config.to_kv(kv);
  kv.set("params.total", std::to_string(count_params_actual(model)));
  for (const auto& np : params) {
    kv.set("entry." + np.name, std::string(dtype_name(np.tensor.dtype())) + " " + shape_str(np.tensor.shape()));
  }
  std::ofstream os(dir / "manifest.txt");
  if (!os) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
  os << "# model checkpoint manifest\n" << config::serialize(kv);
}

Model load_checkpoint(const std::filesystem::path& dir) {
  const config::KeyValues kv = config::parse_file((dir / "manifest.txt").string());
  ModelConfig cfg;
  cfg.apply(kv);
  Model model = make_model(cfg, kv.get_u64("seed", 0));
  const auto entries = io::load_container(dir / "checkpoint.afnt");
  auto params = named_parameters(model);
  if (entries.size() != params.size()) {
    throw io::FormatError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model needs " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = entries[i];
    auto& p = params[i];
    if (e.name != p.name || e.tensor.shape() != p.tensor.shape() || e.tensor.dtype() != p.tensor.dtype()) {
      throw io::FormatError("checkpoint entry '" + e.name + "' " + shape_str(e.tensor.shape()) +
                            " does not match model parameter '" + p.name + "' " + shape_str(p.tensor.shape()));
    }
    const auto src = e.tensor.raw();
    auto dst = p.tensor.raw_mut();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return model;
}

}  // namespace afno
