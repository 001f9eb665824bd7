#include "afno/run.hpp"

#include <cstdio>
#include <ostream>

#include "afno/rng.hpp"

namespace afno {

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (out_dir.empty()) throw std::invalid_argument("out_dir must not be empty");
  const HeadKind want = task == TaskKind::inpaint ? HeadKind::reconstruction : HeadKind::classification;
  if (model.head != want) {
    throw std::invalid_argument(std::string("task '") + task_kind_name(task) + "' needs model.head = " +
                                head_kind_name(want));
  }
  if (task == TaskKind::classify && model.num_classes != kOrientationClasses) {
    throw std::invalid_argument("the synthetic classification data has 4 classes; set model.num_classes = 4");
  }
}

config::KeyValues RunConfig::to_kv() const {
  config::KeyValues kv;
  kv.set("task", task_kind_name(task));
  kv.set("out_dir", out_dir);
  train.to_kv(kv);
  model.to_kv(kv);
  return kv;
}

RunConfig RunConfig::from_kv(const config::KeyValues& kv) {
  RunConfig rc;
  const config::KeyValues known = rc.to_kv();
  for (const auto& [key, value] : kv.entries()) {
    if (!known.has(key)) throw config::ConfigError("unknown config key '" + key + "'");
  }
  try {
    if (auto t = kv.get("task")) rc.task = parse_task_kind(*t);
    rc.out_dir = kv.get_string("out_dir", rc.out_dir);
    rc.train.apply(kv);
    rc.model.apply(kv);
  } catch (const config::ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw config::ConfigError(e.what());
  }
  return rc;
}

RunConfig RunConfig::from_text(std::string_view text) { return from_kv(config::parse(text)); }

RunConfig RunConfig::from_file(const std::string& path) { return from_kv(config::parse_file(path)); }

std::string RunConfig::to_text() const { return config::serialize(to_kv()); }

RunData make_run_data(const RunConfig& rc) {
  const ModelConfig& m = rc.model;
  const bool labeled = rc.task == TaskKind::classify;
  RunData d;
  d.train_set = make_synthetic_dataset(rc.train.train_size, m.image_h, m.image_w, m.channels,
                                       derive_seed(rc.train.seed, "train_data"), labeled);
  d.eval_set = make_synthetic_dataset(rc.train.eval_size, m.image_h, m.image_w, m.channels,
                                      derive_seed(rc.train.seed, "eval_data"), labeled);
  if (!labeled) {
    d.eval_masks = make_eval_masks(d.eval_set.size(), m.image_h, m.image_w, rc.train.mask_steps(m.image_h, m.image_w),
                                   rc.train.seed);
  }
  return d;
}

RunOutcome run_training(const RunConfig& rc, std::ostream* csv) {
  rc.validate();
  RunData data = make_run_data(rc);
  RunOutcome out{make_model(rc.model, rc.train.seed), {}, 0.0};
  out.baseline = rc.task == TaskKind::inpaint ? zero_fill_psnr(data.eval_set.images, data.eval_masks)
                                               : 1.0 / static_cast<double>(kOrientationClasses);
  out.result = train(out.model, rc.task, data.train_set, data.eval_set, rc.train, csv);
  return out;
}

double evaluate_run(const Model& model, const RunConfig& rc) {
  RunData data = make_run_data(rc);
  if (rc.task == TaskKind::inpaint) return evaluate_inpainting(model, data.eval_set, data.eval_masks);
  return evaluate_accuracy(model, data.eval_set);
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::size_t>& blocks,
                                      const std::vector<double>& lambdas) {
  std::vector<AblationRow> rows;
  for (std::size_t k : blocks) {
    for (double lam : lambdas) {
      RunConfig rc = base;
      rc.model.blocks = k;
      rc.model.lambda = lam;
      const RunOutcome r = run_training(rc);
      rows.push_back({k, lam, count_params_actual(r.model), r.result.steps, r.baseline, r.result.final_metric});
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "blocks,lambda,params,steps,baseline,final_metric\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%zu,%zu,%.6f,%.6f\n", r.blocks, config::format_double(r.lambda).c_str(),
                  r.params, r.steps, r.baseline, r.final_metric);
    os << buf;
  }
}

}  // namespace afno
