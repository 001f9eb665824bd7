#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "afno/backbone.hpp"
#include "afno/config.hpp"
#include "afno/tasks.hpp"

namespace afno {

/// Everything one training run needs. The seed lives in `train.seed` and is
/// serialized as the top-level `seed` key.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TaskKind task = TaskKind::inpaint;
  std::string out_dir = "afno_out";

  void validate() const;

  config::KeyValues to_kv() const;
  /// Starts from defaults; unknown keys raise config::ConfigError.
  static RunConfig from_kv(const config::KeyValues& kv);
  static RunConfig from_text(std::string_view text);
  static RunConfig from_file(const std::string& path);
  std::string to_text() const;

  bool operator==(const RunConfig&) const = default;
};

struct RunData {
  Dataset train_set;
  Dataset eval_set;
  Tensor eval_masks;  // [n, H, W]; undefined for classification
};

/// Synthetic train/eval sets (and held-out masks) for the configured image
/// size, drawn from the "train_data" / "eval_data" streams of the run seed.
RunData make_run_data(const RunConfig& rc);

struct RunOutcome {
  Model model;
  TrainResult result;
  double baseline = 0.0;  // zero-fill masked PSNR (inpaint) or chance accuracy
};

/// Builds the model from the run seed and trains it, streaming the history
/// CSV to `csv` when given.
RunOutcome run_training(const RunConfig& rc, std::ostream* csv = nullptr);

struct AblationRow {
  std::size_t blocks = 0;
  double lambda = 0.0;
  std::size_t params = 0;
  std::size_t steps = 0;
  double baseline = 0.0;
  double final_metric = 0.0;
};

/// Trains `base` once per (blocks, lambda) pair, all else equal.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::size_t>& blocks,
                                      const std::vector<double>& lambdas);
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

/// Final held-out metric of an existing model on the run's eval set.
double evaluate_run(const Model& model, const RunConfig& rc);

}  // namespace afno
