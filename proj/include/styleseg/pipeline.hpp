/*
 * styleseg: MRI glioma segmentation with style-transfer augmentation
 *
 * Copyright 2026 styleseg contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "styleseg/unet.hpp"
#include "styleseg/volume.hpp"

namespace styleseg {

// Five-way case partition from a seeded shuffle plus round robin.
struct FoldSplit {
  int k = 5;
  uint64_t seed = 0;
  std::map<std::string, int> assignment;

  std::vector<std::string> validation_ids(int fold) const;
  std::vector<std::string> training_ids(int fold) const;
};

FoldSplit make_folds(const std::vector<std::string>& case_ids, uint64_t seed);

struct ExclusionOutcome {
  std::vector<std::string> kept;      // input order preserved
  std::vector<std::string> removed;
  std::vector<std::string> warnings;  // exclusion ids absent from the input
};

ExclusionOutcome exclude_outliers(const std::vector<std::string>& case_ids,
                                  const std::vector<std::string>& exclusions);

// Cases dropped from SSA training for quality problems.
const std::vector<std::string>& default_outlier_ids();

struct EpochRecord {
  int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double pseudo_dice = 0.0;
  double wall_seconds = 0.0;
};

// CSV with header epoch,lr,train_loss,val_loss,pseudo_dice,seconds.
// Formatting is fixed-precision so identical runs emit identical bytes.
std::string epoch_records_csv(const std::vector<EpochRecord>& records);
std::vector<EpochRecord> parse_epoch_records_csv(const std::string& text);

// First epoch adopts the raw value; afterwards 0.9 * prev + 0.1 * current.
double pseudo_dice_update(double prev_ema, double epoch_dice, bool first_epoch);

struct TrainOptions {
  int64_t epochs = 1;              // train until model.epoch reaches this
  int64_t batches_per_epoch = 50;
  int64_t val_batches_per_epoch = 10;
  double oversample_foreground = 0.5;  // chance a patch is centered on tumor
  bool wall_clock = false;  // measure seconds; off by default so CSVs are
                            // byte-reproducible (column reads 0.000)
  int64_t stop_after = -1;  // pause once model.epoch reaches this; -1 = never
};

struct TrainResult {
  nn::Model best;    // highest pseudo-Dice checkpoint (strictly greater wins)
  nn::Model latest;  // state after the last completed epoch
  std::vector<EpochRecord> records;  // one per epoch run in this call
  int64_t best_epoch = -1;
  double best_pseudo_dice = -1.0;
};

// Epoch loop: seeded patch sampling (tumor oversampling, clamped origins,
// zero padding for small volumes) driven by model.rng so a checkpoint resume
// continues the identical trajectory; Adam steps at the poly LR of
// model.sched; per-epoch validation on a fixed count of seeded patches with
// global foreground Dice accumulated into the pseudo-Dice EMA. Training and
// validation ids must be disjoint. Cases must be preprocessed.
TrainResult train_model(nn::Model model, const std::vector<CaseVolume>& train_cases,
                        const std::vector<CaseVolume>& val_cases,
                        const TrainOptions& opt);

// Resets optimizer moments and counters, rebuilds the schedule at one tenth
// of the pretraining initial LR, then trains on the given (typically target
// domain plus stylized) cases.
TrainResult finetune_model(const nn::Model& pretrained,
                           const std::vector<CaseVolume>& train_cases,
                           const std::vector<CaseVolume>& val_cases,
                           const TrainOptions& opt);

}  // namespace styleseg
