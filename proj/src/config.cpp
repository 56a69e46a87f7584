#include "dsmm/config.hpp"

#include <set>

#include "json.hpp"

namespace dsmm {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& key, const std::string& why) {
  throw ValidationError(key + ": " + why);
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& prefix) {
  for (const auto& [key, value] : obj.items())
    if (!known.count(key)) fail(prefix + key, "unknown key");
}

template <typename T>
void read(const json& obj, const std::string& key, T& out, const std::string& prefix = "") {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) fail(prefix + key, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) fail(prefix + key, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (!it->is_number_unsigned()) fail(prefix + key, "expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) fail(prefix + key, "expected a number");
    } else {
      if (!it->is_string()) fail(prefix + key, "expected a string");
    }
    out = it->get<T>();
  } catch (const json::exception& e) {
    fail(prefix + key, e.what());
  }
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config: top level must be an object");
  reject_unknown(doc,
                 {"block_size", "sampling_ratio", "alpha", "patch_size", "batch_size", "epochs",
                  "iters_per_epoch", "momentum", "weight_decay", "decay_sampling",
                  "decay_reconstruction", "seed", "loss_divisor", "features", "residual",
                  "checkpoint_every", "lr_schedule", "augment"},
                 "");
  TrainConfig cfg;
  read(doc, "block_size", cfg.block_size);
  read(doc, "sampling_ratio", cfg.sampling_ratio);
  read(doc, "alpha", cfg.alpha);
  read(doc, "patch_size", cfg.patch_size);
  read(doc, "batch_size", cfg.batch_size);
  read(doc, "epochs", cfg.epochs);
  read(doc, "iters_per_epoch", cfg.iters_per_epoch);
  read(doc, "momentum", cfg.momentum);
  read(doc, "weight_decay", cfg.weight_decay);
  read(doc, "decay_sampling", cfg.decay_sampling);
  read(doc, "decay_reconstruction", cfg.decay_reconstruction);
  read(doc, "seed", cfg.seed);
  read(doc, "features", cfg.features);
  read(doc, "residual", cfg.residual);
  read(doc, "checkpoint_every", cfg.checkpoint_every);

  std::string divisor = "batch";
  read(doc, "loss_divisor", divisor);
  if (divisor == "batch")
    cfg.loss_divisor = LossDivisor::kBatch;
  else if (divisor == "batch_pixels")
    cfg.loss_divisor = LossDivisor::kBatchAndPixels;
  else
    fail("loss_divisor", "expected \"batch\" or \"batch_pixels\"");

  if (const auto it = doc.find("lr_schedule"); it != doc.end()) {
    if (!it->is_object()) fail("lr_schedule", "expected an object");
    const std::string p = "lr_schedule.";
    reject_unknown(*it,
                   {"phase1_end", "phase2_end", "phase1_rate", "phase2_start_rate",
                    "phase2_end_rate", "phase3_rate", "interpolation"},
                   p);
    LrSchedule& s = cfg.lr_schedule;
    read(*it, "phase1_end", s.phase1_end, p);
    read(*it, "phase2_end", s.phase2_end, p);
    read(*it, "phase1_rate", s.phase1_rate, p);
    read(*it, "phase2_start_rate", s.phase2_start_rate, p);
    read(*it, "phase2_end_rate", s.phase2_end_rate, p);
    read(*it, "phase3_rate", s.phase3_rate, p);
    std::string interp = "geometric";
    read(*it, "interpolation", interp, p);
    if (interp == "geometric")
      s.interpolation = LrInterpolation::kGeometric;
    else if (interp == "linear")
      s.interpolation = LrInterpolation::kLinear;
    else
      fail(p + "interpolation", "expected \"geometric\" or \"linear\"");
  }

  if (const auto it = doc.find("augment"); it != doc.end()) {
    if (!it->is_object()) fail("augment", "expected an object");
    const std::string p = "augment.";
    reject_unknown(*it, {"enabled", "scale_range", "hflip_prob"}, p);
    read(*it, "enabled", cfg.augment.enabled, p);
    read(*it, "hflip_prob", cfg.augment.hflip_prob, p);
    if (const auto r = it->find("scale_range"); r != it->end()) {
      if (!r->is_array() || r->size() != 2 || !(*r)[0].is_number() || !(*r)[1].is_number())
        fail(p + "scale_range", "expected [min, max]");
      cfg.augment.scale_min = (*r)[0].get<double>();
      cfg.augment.scale_max = (*r)[1].get<double>();
    }
  }

  cfg.validate();
  return cfg;
}

std::string train_config_json(const TrainConfig& cfg) {
  const LrSchedule& s = cfg.lr_schedule;
  json doc{{"block_size", cfg.block_size},
           {"sampling_ratio", cfg.sampling_ratio},
           {"alpha", cfg.alpha},
           {"patch_size", cfg.patch_size},
           {"batch_size", cfg.batch_size},
           {"epochs", cfg.epochs},
           {"iters_per_epoch", cfg.iters_per_epoch},
           {"momentum", cfg.momentum},
           {"weight_decay", cfg.weight_decay},
           {"decay_sampling", cfg.decay_sampling},
           {"decay_reconstruction", cfg.decay_reconstruction},
           {"seed", cfg.seed},
           {"loss_divisor", cfg.loss_divisor == LossDivisor::kBatch ? "batch" : "batch_pixels"},
           {"features", cfg.features},
           {"residual", cfg.residual},
           {"checkpoint_every", cfg.checkpoint_every},
           {"lr_schedule",
            {{"phase1_end", s.phase1_end},
             {"phase2_end", s.phase2_end},
             {"phase1_rate", s.phase1_rate},
             {"phase2_start_rate", s.phase2_start_rate},
             {"phase2_end_rate", s.phase2_end_rate},
             {"phase3_rate", s.phase3_rate},
             {"interpolation", s.interpolation == LrInterpolation::kGeometric ? "geometric" : "linear"}}},
           {"augment",
            {{"enabled", cfg.augment.enabled},
             {"scale_range", {cfg.augment.scale_min, cfg.augment.scale_max}},
             {"hflip_prob", cfg.augment.hflip_prob}}}};
  return doc.dump(2) + "\n";
}

}  // namespace dsmm
