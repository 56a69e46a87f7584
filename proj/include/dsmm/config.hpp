#pragma once

#include <string>

#include "dsmm/trainer.hpp"

namespace dsmm {

// JSON object mirroring TrainConfig. Missing keys keep their defaults;
// unknown keys and ill-typed values raise ValidationError naming the key.
//
//   {
//     "block_size": 32, "sampling_ratio": 0.1, "alpha": 0.2,
//     "patch_size": 96, "batch_size": 32, "epochs": 100,
//     "iters_per_epoch": 600, "momentum": 0.9, "weight_decay": 1e-4,
//     "decay_sampling": true, "decay_reconstruction": true, "seed": 0,
//     "loss_divisor": "batch" | "batch_pixels", "features": 64,
//     "residual": true, "checkpoint_every": 10,
//     "lr_schedule": {"phase1_end": 30, "phase2_end": 70,
//                     "phase1_rate": 1e-3, "phase2_start_rate": 1e-4,
//                     "phase2_end_rate": 1e-6, "phase3_rate": 1e-6,
//                     "interpolation": "geometric" | "linear"},
//     "augment": {"enabled": true, "scale_range": [0.8, 1.2],
//                 "hflip_prob": 0.5}
//   }
TrainConfig parse_train_config(const std::string& json_text);
std::string train_config_json(const TrainConfig& cfg);

}  // namespace dsmm
