#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "afno/analysis.hpp"
#include "afno/backbone.hpp"
#include "afno/io.hpp"
#include "afno/run.hpp"
#include "afno/tasks.hpp"

namespace fs = std::filesystem;
using namespace afno;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

// thrown for bad arguments discovered after parsing
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunFlags {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mixer;
  std::optional<double> lambda;
  std::optional<std::size_t> blocks;
  std::optional<double> keep_fraction;
  std::optional<std::string> task;
  std::optional<std::size_t> steps;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "Config file (key = value lines)");
    cmd->add_option("--out", out, "Output directory");
    cmd->add_option("--seed", seed, "Run seed");
    cmd->add_option("--mixer", mixer, "Token mixer")->check(CLI::IsMember({"sa", "gfn", "fno", "afno"}));
    cmd->add_option("--lambda", lambda, "Soft-shrink threshold");
    cmd->add_option("--blocks", blocks, "AFNO block count k");
    cmd->add_option("--keep-fraction", keep_fraction, "Fraction of Fourier modes kept");
    cmd->add_option("--task", task, "inpaint or classify")->check(CLI::IsMember({"inpaint", "classify"}));
    cmd->add_option("--steps", steps, "Training steps (overrides epochs)");
  }

  RunConfig resolve() const {
    config::KeyValues kv;
    if (!config.empty()) kv = config::parse_file(config);
    if (out) kv.set("out_dir", *out);
    if (seed) kv.set("seed", std::to_string(*seed));
    if (mixer) kv.set("model.mixer", *mixer);
    if (lambda) kv.set("model.lambda", config::format_double(*lambda));
    if (blocks) kv.set("model.blocks", std::to_string(*blocks));
    if (keep_fraction) kv.set("model.keep_fraction", config::format_double(*keep_fraction));
    if (task) {
      kv.set("task", *task);
      kv.set("model.head", *task == "classify" ? "classification" : "reconstruction");
    }
    if (steps) kv.set("train.max_steps", std::to_string(*steps));
    RunConfig rc = RunConfig::from_kv(kv);
    rc.validate();
    return rc;
  }
};

fs::path ensure_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  return os;
}

// -- train -------------------------------------------------------------------

int cmd_train(const RunFlags& flags) {
  const RunConfig rc = flags.resolve();
  const fs::path dir = ensure_dir(rc.out_dir);
  open_out(dir / "config.txt") << rc.to_text();
  std::ofstream csv = open_out(dir / "history.csv");
  RunOutcome r = run_training(rc, &csv);
  save_checkpoint(r.model, dir);
  const char* metric = rc.task == TaskKind::inpaint ? "masked_psnr_db" : "accuracy";
  std::printf("%s %.4f baseline %.4f steps %zu params %zu\n", metric, r.result.final_metric, r.baseline,
              r.result.steps, count_params_actual(r.model));
  std::printf("wrote %s\n", dir.string().c_str());
  return kExitOk;
}

// -- eval --------------------------------------------------------------------

struct EvalFlags {
  std::string checkpoint;
  std::string config;
  std::optional<std::size_t> height, width;
};

RunConfig config_for_checkpoint(const std::string& ckpt, const std::string& config_path, const Model& model) {
  RunConfig rc;
  const std::string path = !config_path.empty() ? config_path : (fs::path(ckpt) / "config.txt").string();
  if (!config_path.empty() || fs::exists(path)) rc = RunConfig::from_file(path);
  rc.model = model.config;
  rc.train.seed = model.seed;
  rc.task = model.config.head == HeadKind::classification ? TaskKind::classify : TaskKind::inpaint;
  return rc;
}

int cmd_eval(const EvalFlags& flags) {
  Model model = load_checkpoint(flags.checkpoint);
  RunConfig rc = config_for_checkpoint(flags.checkpoint, flags.config, model);
  if (flags.height || flags.width) {
    model = adapt_to_resolution(model, flags.height.value_or(model.config.image_h),
                                flags.width.value_or(model.config.image_w));
    rc.model = model.config;
  }
  const double metric = evaluate_run(model, rc);
  if (rc.task == TaskKind::inpaint) {
    const RunData data = make_run_data(rc);
    std::printf("resolution %zux%zu masked_psnr_db %.4f zero_fill_db %.4f\n", rc.model.image_h, rc.model.image_w,
                metric, zero_fill_psnr(data.eval_set.images, data.eval_masks));
  } else {
    std::printf("resolution %zux%zu accuracy %.4f\n", rc.model.image_h, rc.model.image_w, metric);
  }
  return kExitOk;
}

// -- bench -------------------------------------------------------------------

struct BenchFlags {
  std::vector<std::string> kinds{"sa", "gfn", "fno", "afno"};
  std::vector<std::string> sizes{"32x32", "32x64", "64x64"};
  std::size_t d = 64, k = 4, repeats = 5, warmup = 2;
  std::uint64_t seed = 0;
  std::string out = "afno_out";
};

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used_h = 0, used_w = 0;
    const std::string hs = s.substr(0, x), ws = s.substr(x + 1);
    const auto h = std::stoul(hs, &used_h), w = std::stoul(ws, &used_w);
    if (used_h != hs.size() || used_w != ws.size() || h == 0 || w == 0) throw std::invalid_argument(s);
    return {h, w};
  } catch (const std::logic_error&) {
    throw UsageError("bad grid size '" + s + "' (expected HxW)");
  }
}

int cmd_bench(const BenchFlags& flags) {
  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  for (const auto& s : flags.sizes) sizes.push_back(parse_size(s));
  std::vector<analysis::LatencyRow> all;
  std::printf("%-5s %9s %7s %14s %14s\n", "mixer", "grid", "N", "median_s", "iqr_s");
  for (const auto& name : flags.kinds) {
    const auto rows =
        analysis::bench_latency(parse_mixer_kind(name), sizes, flags.d, flags.k, flags.repeats, flags.warmup, flags.seed);
    for (const auto& r : rows) {
      const std::string grid = std::to_string(r.h) + "x" + std::to_string(r.w);
      std::printf("%-5s %9s %7zu %14.6e %14.6e\n", name.c_str(), grid.c_str(), r.n, r.median_seconds, r.iqr_seconds);
    }
    if (rows.size() > 1) {
      std::printf("%-5s growth %.3f over %zu -> %zu tokens\n", name.c_str(),
                  rows.back().median_seconds / rows.front().median_seconds, rows.front().n, rows.back().n);
    }
    all.insert(all.end(), rows.begin(), rows.end());
  }
  const fs::path dir = ensure_dir(flags.out);
  std::ofstream os = open_out(dir / "latency.csv");
  analysis::write_latency_csv(os, all);
  std::printf("threads 1\nwrote %s\n", (dir / "latency.csv").string().c_str());
  return kExitOk;
}

// -- flops -------------------------------------------------------------------

struct FlopsFlags {
  std::string kind = "afno";
  std::optional<double> n, d;
  double k = 1.0;
  bool params = false;
  bool vit = false;
  std::string out = "afno_out";
};

int cmd_flops(const FlopsFlags& flags) {
  if (flags.vit) {
    const analysis::VitShape shape;
    const fs::path dir = ensure_dir(flags.out);
    std::ofstream csv = open_out(dir / "report.csv");
    csv << "mixer,method,blocks,tokens,embed,mixer_per_layer,mlp_per_layer,head,total_gflops\n";
    std::printf("%-5s %-16s %10s %14s %14s %10s %12s\n", "mixer", "method", "embed_G", "mixer/layer_G", "mlp/layer_G",
                "head_G", "total_G");
    for (MixerKind kind : {MixerKind::sa, MixerKind::gfn, MixerKind::fno, MixerKind::afno}) {
      const analysis::VitShape& s = shape;
      for (auto method : {analysis::FlopsMethod::formula, analysis::FlopsMethod::operation_count}) {
        const auto b = analysis::estimate_model_flops(kind, s, method);
        std::printf("%-5s %-16s %10.3f %14.3f %14.3f %10.6f %12.2f\n", mixer_kind_name(kind),
                    analysis::flops_method_name(method), b.embed / 1e9, b.mixer_per_layer / 1e9,
                    b.mlp_per_layer / 1e9, b.head / 1e9, b.total / 1e9);
        csv << mixer_kind_name(kind) << "," << analysis::flops_method_name(method) << "," << s.blocks << ","
            << b.tokens << "," << b.embed << "," << b.mixer_per_layer << "," << b.mlp_per_layer << "," << b.head
            << "," << b.total / 1e9 << "\n";
      }
    }
    std::printf("wrote %s\n", (dir / "report.csv").string().c_str());
    return kExitOk;
  }
  if (!flags.n || !flags.d) throw UsageError("flops needs --n and --d (or --vit)");
  const MixerKind kind = parse_mixer_kind(flags.kind);
  const double v = flags.params ? analysis::params_formula(kind, *flags.n, *flags.d, flags.k)
                                : analysis::flops_formula(kind, *flags.n, *flags.d, flags.k);
  std::printf("%s\n", config::format_double(v).c_str());
  return kExitOk;
}

// -- sparsity ----------------------------------------------------------------

struct SparsityFlags {
  std::string checkpoint;
  std::size_t samples = 16;
  std::uint64_t seed = 0;
  std::optional<double> lambda;
  std::string out = "afno_out";
};

int cmd_sparsity(const SparsityFlags& flags) {
  Model model = load_checkpoint(flags.checkpoint);
  if (flags.lambda) {
    model.config.lambda = *flags.lambda;
    for (auto& blk : model.blocks) {
      if (auto* p = std::get_if<AfnoParams>(&blk.mixer)) p->lambda = *flags.lambda;
    }
  }
  const ModelConfig& mc = model.config;
  const Dataset data = make_synthetic_dataset(flags.samples, mc.image_h, mc.image_w, mc.channels,
                                              derive_seed(flags.seed, "sparsity_data"));
  const auto layers = analysis::sparsity_stats(model, data.images);
  std::printf("%5s %8s %10s %12s %12s\n", "layer", "lambda", "mean", "low_quart", "high_quart");
  for (const auto& s : layers) {
    std::printf("%5zu %8.4g %10.4f %12.4f %12.4f\n", s.layer, s.lambda, s.mean, s.low_quartile_mean,
                s.high_quartile_mean);
  }
  const fs::path dir = ensure_dir(flags.out);
  std::ofstream os = open_out(dir / "sparsity.csv");
  analysis::write_sparsity_csv(os, layers);
  std::printf("wrote %s\n", (dir / "sparsity.csv").string().c_str());
  return kExitOk;
}

// -- gradcheck ---------------------------------------------------------------

struct GradFlags {
  bool all = false;
  std::vector<std::string> kinds;
  std::uint64_t seed = 0;
  bool no_models = false;
};

int cmd_gradcheck(const GradFlags& flags) {
  std::vector<MixerKind> kinds;
  if (!flags.all) {
    if (flags.kinds.empty()) throw UsageError("gradcheck needs --all or --kind");
    for (const auto& k : flags.kinds) kinds.push_back(parse_mixer_kind(k));
  }
  const auto entries = analysis::gradient_suite(flags.seed, kinds, !flags.no_models);
  std::size_t failed = 0;
  for (const auto& e : entries) {
    std::printf("%-4s %-16s %-24s rel %.3e tol %.0e\n", e.passed() ? "ok" : "FAIL", e.target.c_str(),
                e.param.c_str(), e.report.max_rel_error, e.tolerance);
    failed += !e.passed();
  }
  std::printf("%zu checks, %zu failed\n", entries.size(), failed);
  return failed == 0 ? kExitOk : kExitCheckFailed;
}

// -- maskgen -----------------------------------------------------------------

struct MaskFlags {
  std::size_t h = 0, w = 0;
  std::optional<std::size_t> steps;
  std::uint64_t seed = 0;
  std::string out = "afno_out";
};

int cmd_maskgen(const MaskFlags& flags) {
  if (flags.h == 0 || flags.w == 0) throw UsageError("--h and --w must be positive");
  const std::size_t steps = flags.steps.value_or(default_mask_steps(flags.h, flags.w));
  const MaskSpec m = random_walk_mask(flags.h, flags.w, steps, flags.seed);
  const fs::path dir = ensure_dir(flags.out);
  io::save_tensor(dir / "mask.afnt", m.mask);
  std::ofstream pgm = open_out(dir / "mask.pgm");
  pgm << "P2\n" << flags.w << " " << flags.h << "\n255\n";
  const auto v = m.mask.raw();
  for (std::size_t r = 0; r < flags.h; ++r) {
    for (std::size_t c = 0; c < flags.w; ++c) pgm << (c ? " " : "") << (v[r * flags.w + c] != 0.0 ? 255 : 0);
    pgm << "\n";
  }
  std::printf("masked %zu of %zu pixels (%.4f) after %zu steps\n", m.masked_count(), flags.h * flags.w,
              m.masked_fraction(), steps);
  return kExitOk;
}

// -- ablate ------------------------------------------------------------------

struct AblateFlags {
  RunFlags run;
  std::vector<std::size_t> ks{1, 4, 16};
  std::vector<double> lambdas{0.0, 0.01, 0.1};
};

int cmd_ablate(const AblateFlags& flags) {
  const RunConfig base = flags.run.resolve();
  const auto rows = run_ablation(base, flags.ks, flags.lambdas);
  write_ablation_csv(std::cout, rows);
  const fs::path dir = ensure_dir(base.out_dir);
  std::ofstream os = open_out(dir / "ablation.csv");
  write_ablation_csv(os, rows);
  std::printf("wrote %s\n", (dir / "ablation.csv").string().c_str());
  return kExitOk;
}

void check_thread_env() {
  const char* env = std::getenv("AFNO_THREADS");
  if (env == nullptr) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*env == '\0' || *end != '\0' || n < 1) {
    throw UsageError(std::string("AFNO_THREADS must be a positive integer, got '") + env + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive Fourier neural operator token mixers: train, evaluate, benchmark, analyze"};
  app.require_subcommand(1);
  std::function<int()> action;

  RunFlags train_flags;
  auto* train = app.add_subcommand("train", "Train a model; writes history.csv, checkpoint.afnt, manifest.txt");
  train_flags.add_to(train);
  train->callback([&] { action = [&] { return cmd_train(train_flags); }; });

  EvalFlags eval_flags;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, optionally at another resolution");
  eval->add_option("--checkpoint", eval_flags.checkpoint, "Checkpoint directory")->required();
  eval->add_option("--config", eval_flags.config, "Run config (default: <checkpoint>/config.txt)");
  eval->add_option("--height", eval_flags.height, "Image height to evaluate at");
  eval->add_option("--width", eval_flags.width, "Image width to evaluate at");
  eval->callback([&] { action = [&] { return cmd_eval(eval_flags); }; });

  BenchFlags bench_flags;
  auto* bench = app.add_subcommand("bench", "Forward latency of the token mixers; writes latency.csv");
  bench->add_option("--kind", bench_flags.kinds, "Mixers to time")->delimiter(',');
  bench->add_option("--sizes", bench_flags.sizes, "Token grids as HxW")->delimiter(',');
  bench->add_option("--d", bench_flags.d, "Channels")->check(CLI::PositiveNumber);
  bench->add_option("--k", bench_flags.k, "AFNO blocks")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", bench_flags.repeats, "Timed runs (>= 5)");
  bench->add_option("--warmup", bench_flags.warmup, "Discarded runs (>= 2)");
  bench->add_option("--seed", bench_flags.seed, "Seed");
  bench->add_option("--out", bench_flags.out, "Output directory");
  bench->callback([&] { action = [&] { return cmd_bench(bench_flags); }; });

  FlopsFlags flops_flags;
  auto* flops = app.add_subcommand("flops", "Complexity formulas, or the ViT-B/4 model estimate with --vit");
  flops->add_option("--kind", flops_flags.kind, "Mixer")->check(CLI::IsMember({"sa", "gfn", "fno", "afno"}));
  flops->add_option("--n", flops_flags.n, "Tokens N");
  flops->add_option("--d", flops_flags.d, "Channels d");
  flops->add_option("--k", flops_flags.k, "AFNO blocks k");
  flops->add_flag("--params", flops_flags.params, "Print the parameter formula instead");
  flops->add_flag("--vit", flops_flags.vit, "Whole-model estimate; writes report.csv");
  flops->add_option("--out", flops_flags.out, "Output directory (with --vit)");
  flops->callback([&] { action = [&] { return cmd_flops(flops_flags); }; });

  SparsityFlags sparsity_flags;
  auto* sparsity = app.add_subcommand("sparsity", "Soft-shrink zero fractions per mode; writes sparsity.csv");
  sparsity->add_option("--checkpoint", sparsity_flags.checkpoint, "AFNO checkpoint directory")->required();
  sparsity->add_option("--samples", sparsity_flags.samples, "Images to run")->check(CLI::PositiveNumber);
  sparsity->add_option("--seed", sparsity_flags.seed, "Seed for the images");
  sparsity->add_option("--lambda", sparsity_flags.lambda, "Override the threshold of every layer");
  sparsity->add_option("--out", sparsity_flags.out, "Output directory");
  sparsity->callback([&] { action = [&] { return cmd_sparsity(sparsity_flags); }; });

  GradFlags grad_flags;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every mixer and model parameter");
  grad->add_flag("--all", grad_flags.all, "Check every mixer");
  grad->add_option("--kind", grad_flags.kinds, "Mixers to check")->delimiter(',');
  grad->add_option("--seed", grad_flags.seed, "Seed");
  grad->add_flag("--no-models", grad_flags.no_models, "Skip the full-model checks");
  grad->callback([&] { action = [&] { return cmd_gradcheck(grad_flags); }; });

  MaskFlags mask_flags;
  auto* mask = app.add_subcommand("maskgen", "Random-walk mask; writes mask.afnt and mask.pgm (masked = 255)");
  mask->set_help_flag("--help", "Print this help message and exit");  // frees -h for --h
  mask->add_option("--h", mask_flags.h, "Height")->required();
  mask->add_option("--w", mask_flags.w, "Width")->required();
  mask->add_option("--steps", mask_flags.steps, "Walk steps (default round(0.0625 H W))");
  mask->add_option("--seed", mask_flags.seed, "Seed");
  mask->add_option("--out", mask_flags.out, "Output directory");
  mask->callback([&] { action = [&] { return cmd_maskgen(mask_flags); }; });

  AblateFlags ablate_flags;
  auto* ablate = app.add_subcommand("ablate", "Train over a grid of block counts and thresholds; writes ablation.csv");
  ablate_flags.run.add_to(ablate);
  ablate->add_option("--ks", ablate_flags.ks, "Block counts")->delimiter(',');
  ablate->add_option("--lambdas", ablate_flags.lambdas, "Thresholds")->delimiter(',');
  ablate->callback([&] { action = [&] { return cmd_ablate(ablate_flags); }; });

  RunFlags init_flags;
  auto* init = app.add_subcommand("init-config", "Print the resolved run config");
  init_flags.add_to(init);
  init->callback([&] { action = [&] { std::cout << init_flags.resolve().to_text(); return kExitOk; }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    check_thread_env();
    return action();
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
}
