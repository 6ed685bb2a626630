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

#include "styleseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "styleseg/common.hpp"

namespace styleseg {

namespace {

constexpr uint64_t kFoldStream = 0xF01Dull;
constexpr uint64_t kValStream = 0x7A11ull;

// Per-case sampling context: channel pointers plus the voxel indices of
// tumor labels, so oversampled patches can center on foreground.
struct SampleSource {
  const CaseVolume* cs = nullptr;
  std::vector<int64_t> fg_voxels;
};

SampleSource make_source(const CaseVolume& cs) {
  SampleSource s;
  s.cs = &cs;
  if (cs.truth) {
    for (size_t i = 0; i < cs.truth->data.size(); ++i)
      if (cs.truth->data[i] != 0) s.fg_voxels.push_back(static_cast<int64_t>(i));
  }
  return s;
}

// Copies the patch window at `origin` into batch slot `b`, zero-padding
// whatever part of the window falls outside the volume.
void fill_patch(const CaseVolume& cs, const std::array<int64_t, 3>& origin,
                const std::array<int64_t, 3>& patch, int64_t b,
                Tensor<float>& x, Tensor<uint8_t>& target) {
  const auto dims = cs.channels[0].dims;
  for (int c = 0; c < 4; ++c) {
    const auto& ch = cs.channels[c];
    for (int64_t d = 0; d < patch[0]; ++d) {
      const int64_t sd = origin[0] + d;
      if (sd >= dims[0]) break;
      for (int64_t h = 0; h < patch[1]; ++h) {
        const int64_t sh = origin[1] + h;
        if (sh >= dims[1]) break;
        const int64_t w_avail = std::min(patch[2], dims[2] - origin[2]);
        const float* src = ch.data.data() + (sd * dims[1] + sh) * dims[2] + origin[2];
        float* dst = x.data.data() +
                     (((b * 4 + c) * patch[0] + d) * patch[1] + h) * patch[2];
        std::copy(src, src + w_avail, dst);
      }
    }
  }
  for (int64_t d = 0; d < patch[0]; ++d) {
    const int64_t sd = origin[0] + d;
    if (sd >= dims[0]) break;
    for (int64_t h = 0; h < patch[1]; ++h) {
      const int64_t sh = origin[1] + h;
      if (sh >= dims[1]) break;
      const int64_t w_avail = std::min(patch[2], dims[2] - origin[2]);
      const uint8_t* src =
          cs.truth->data.data() + (sd * dims[1] + sh) * dims[2] + origin[2];
      uint8_t* dst =
          target.data.data() +
          ((b * patch[0] + d) * patch[1] + h) * patch[2];
      std::copy(src, src + w_avail, dst);
    }
  }
}

// Draws one patch origin: either centered on a random tumor voxel or uniform
// over the clamped origin range.
std::array<int64_t, 3> draw_origin(const SampleSource& src,
                                   const std::array<int64_t, 3>& patch,
                                   double oversample, std::mt19937_64& g) {
  const auto dims = src.cs->channels[0].dims;
  std::array<int64_t, 3> origin{0, 0, 0};
  const bool want_fg =
      !src.fg_voxels.empty() && uniform_unit(g) < oversample;
  if (want_fg) {
    const int64_t pick = src.fg_voxels[static_cast<size_t>(
        uniform_below(g, src.fg_voxels.size()))];
    const int64_t cd = pick / (dims[1] * dims[2]);
    const int64_t chh = (pick / dims[2]) % dims[1];
    const int64_t cw = pick % dims[2];
    const int64_t center[3] = {cd, chh, cw};
    for (int a = 0; a < 3; ++a) {
      const int64_t hi = std::max<int64_t>(0, dims[a] - patch[a]);
      origin[a] = std::clamp<int64_t>(center[a] - patch[a] / 2, 0, hi);
    }
  } else {
    for (int a = 0; a < 3; ++a) {
      const int64_t hi = std::max<int64_t>(0, dims[a] - patch[a]);
      origin[a] = static_cast<int64_t>(
          uniform_below(g, static_cast<uint64_t>(hi + 1)));
    }
  }
  return origin;
}

void assemble_batch(const std::vector<SampleSource>& sources,
                    const nn::UNetConfig& cfg, double oversample,
                    std::mt19937_64& g, Tensor<float>& x,
                    Tensor<uint8_t>& target) {
  x.fill(0.0f);
  std::fill(target.data.begin(), target.data.end(), uint8_t{0});
  for (int64_t b = 0; b < cfg.batch_size; ++b) {
    const auto& src =
        sources[static_cast<size_t>(uniform_below(g, sources.size()))];
    const auto origin = draw_origin(src, cfg.patch, oversample, g);
    fill_patch(*src.cs, origin, cfg.patch, b, x, target);
  }
}

struct DiceCounts {
  // Global per-class TP/FP/FN over all validation patches of one epoch.
  std::array<int64_t, 16> tp{}, fp{}, fn{};
};

void accumulate_counts(const Tensor<float>& logits, const Tensor<uint8_t>& target,
                       int num_classes, DiceCounts& counts) {
  const int64_t B = logits.shape[0];
  const int64_t C = logits.shape[1];
  const int64_t M = logits.shape[2] * logits.shape[3] * logits.shape[4];
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < M; ++i) {
      int best = 0;
      float best_v = logits.data[(b * C + 0) * M + i];
      for (int c = 1; c < num_classes; ++c) {
        const float v = logits.data[(b * C + c) * M + i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      const int truth = target.data[b * M + i];
      if (best == truth) {
        ++counts.tp[static_cast<size_t>(best)];
      } else {
        ++counts.fp[static_cast<size_t>(best)];
        ++counts.fn[static_cast<size_t>(truth)];
      }
    }
}

double global_foreground_dice(const DiceCounts& counts, int num_classes) {
  double sum = 0.0;
  int present = 0;
  for (int c = 1; c < num_classes; ++c) {
    const int64_t denom = 2 * counts.tp[static_cast<size_t>(c)] +
                          counts.fp[static_cast<size_t>(c)] +
                          counts.fn[static_cast<size_t>(c)];
    if (denom == 0) continue;  // class absent in truth and prediction alike
    sum += 2.0 * static_cast<double>(counts.tp[static_cast<size_t>(c)]) /
           static_cast<double>(denom);
    ++present;
  }
  return present == 0 ? 0.0 : sum / present;
}

void check_cases(const std::vector<CaseVolume>& cases, const char* what) {
  if (cases.empty()) throw UsageError(std::string(what) + ": no cases");
  for (const auto& cs : cases) {
    cs.validate();
    if (!cs.truth)
      throw DataError(std::string(what) + ": case " + cs.id + " has no truth");
  }
}

}  // namespace

std::vector<std::string> FoldSplit::validation_ids(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment)
    if (f == fold) out.push_back(id);
  return out;
}

std::vector<std::string> FoldSplit::training_ids(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment)
    if (f != fold) out.push_back(id);
  return out;
}

FoldSplit make_folds(const std::vector<std::string>& case_ids, uint64_t seed) {
  if (case_ids.size() < 5)
    throw UsageError("make_folds: need at least 5 cases, got " +
                     std::to_string(case_ids.size()));
  std::vector<std::string> ids = case_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw DataError("make_folds: duplicate case id");
  auto g = seeded_engine(seed, kFoldStream);
  fisher_yates(ids, g);

  FoldSplit split;
  split.seed = seed;
  for (size_t i = 0; i < ids.size(); ++i)
    split.assignment[ids[i]] = static_cast<int>(i % 5);
  return split;
}

ExclusionOutcome exclude_outliers(const std::vector<std::string>& case_ids,
                                  const std::vector<std::string>& exclusions) {
  const std::set<std::string> drop(exclusions.begin(), exclusions.end());
  const std::set<std::string> have(case_ids.begin(), case_ids.end());
  ExclusionOutcome out;
  for (const auto& id : case_ids) {
    if (drop.count(id))
      out.removed.push_back(id);
    else
      out.kept.push_back(id);
  }
  for (const auto& id : exclusions)
    if (!have.count(id)) out.warnings.push_back(id);
  return out;
}

const std::vector<std::string>& default_outlier_ids() {
  static const std::vector<std::string> ids{"00041", "00051", "00084", "00097"};
  return ids;
}

std::string epoch_records_csv(const std::vector<EpochRecord>& records) {
  std::string out = "epoch,lr,train_loss,val_loss,pseudo_dice,seconds\n";
  char line[256];
  for (const auto& r : records) {
    std::snprintf(line, sizeof(line), "%lld,%.10g,%.10g,%.10g,%.10g,%.3f\n",
                  static_cast<long long>(r.epoch), r.lr, r.train_loss,
                  r.val_loss, r.pseudo_dice, r.wall_seconds);
    out += line;
  }
  return out;
}

std::vector<EpochRecord> parse_epoch_records_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) ||
      line != "epoch,lr,train_loss,val_loss,pseudo_dice,seconds")
    throw DataError("epoch CSV: missing or wrong header");
  std::vector<EpochRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    long long epoch = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf", &epoch, &r.lr,
                    &r.train_loss, &r.val_loss, &r.pseudo_dice,
                    &r.wall_seconds) != 6)
      throw DataError("epoch CSV: malformed row '" + line + "'");
    r.epoch = epoch;
    out.push_back(r);
  }
  return out;
}

double pseudo_dice_update(double prev_ema, double epoch_dice, bool first_epoch) {
  if (epoch_dice < 0.0 || epoch_dice > 1.0)
    throw NumericalError("pseudo_dice_update: dice outside [0,1]");
  return first_epoch ? epoch_dice : 0.9 * prev_ema + 0.1 * epoch_dice;
}

TrainResult train_model(nn::Model model, const std::vector<CaseVolume>& train_cases,
                        const std::vector<CaseVolume>& val_cases,
                        const TrainOptions& opt) {
  check_cases(train_cases, "train");
  check_cases(val_cases, "validation");
  {
    std::set<std::string> train_ids;
    for (const auto& cs : train_cases) train_ids.insert(cs.id);
    for (const auto& cs : val_cases)
      if (train_ids.count(cs.id))
        throw UsageError("train: case " + cs.id +
                         " appears in both training and validation");
  }
  if (opt.epochs > model.sched.max_epochs)
    throw UsageError("train: epochs exceed the schedule's max_epochs");
  if (opt.batches_per_epoch < 1 || opt.val_batches_per_epoch < 1)
    throw UsageError("train: batch counts must be positive");

  std::vector<SampleSource> train_src, val_src;
  for (const auto& cs : train_cases) train_src.push_back(make_source(cs));
  for (const auto& cs : val_cases) val_src.push_back(make_source(cs));

  const auto& cfg = model.cfg;
  Tensor<float> x({cfg.batch_size, 4, cfg.patch[0], cfg.patch[1], cfg.patch[2]});
  Tensor<uint8_t> target({cfg.batch_size, cfg.patch[0], cfg.patch[1], cfg.patch[2]});

  TrainResult result;
  result.best = model;  // placeholder until the first epoch completes

  // The EMA rides on the model so a run resumed from a checkpoint continues
  // the exact numeric trajectory of an uninterrupted one.
  double ema = model.pseudo_ema;
  while (model.epoch < opt.epochs) {
    if (opt.stop_after >= 0 && model.epoch >= opt.stop_after) break;
    const auto t0 = std::chrono::steady_clock::now();
    const int64_t epoch = model.epoch;
    const double lr = nn::poly_lr(model.sched, epoch);

    double train_loss = 0.0;
    for (int64_t b = 0; b < opt.batches_per_epoch; ++b) {
      assemble_batch(train_src, cfg, opt.oversample_foreground, model.rng, x,
                     target);
      try {
        const auto stats = nn::train_step(model, x, target, lr);
        train_loss += stats.total;
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + " batch " +
                             std::to_string(b) + ": " + e.what());
      }
    }
    train_loss /= static_cast<double>(opt.batches_per_epoch);

    // Validation pass: a fixed per-epoch set of seeded patches, independent
    // of the training RNG so resume alignment is trivial.
    auto vg = seeded_engine(cfg.seed ^ static_cast<uint64_t>(epoch), kValStream);
    double val_loss = 0.0;
    DiceCounts counts;
    for (int64_t b = 0; b < opt.val_batches_per_epoch; ++b) {
      assemble_batch(val_src, cfg, opt.oversample_foreground, vg, x, target);
      const auto logits = nn::unet_forward(
          model, x, static_cast<nn::ForwardCacheT<float>*>(nullptr));
      val_loss += nn::dice_ce_loss(cfg, logits, target).total;
      accumulate_counts(logits[0], target, cfg.num_classes, counts);
    }
    val_loss /= static_cast<double>(opt.val_batches_per_epoch);
    const double epoch_dice = global_foreground_dice(counts, cfg.num_classes);
    ema = pseudo_dice_update(ema, epoch_dice, epoch == 0);

    model.pseudo_ema = ema;
    model.epoch = epoch + 1;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = train_loss;
    rec.val_loss = val_loss;
    rec.pseudo_dice = ema;
    if (opt.wall_clock) {
      rec.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
    }
    result.records.push_back(rec);

    if (ema > result.best_pseudo_dice) {
      result.best_pseudo_dice = ema;
      result.best_epoch = epoch;
      result.best = model;
    }
  }

  result.latest = std::move(model);
  if (result.best_epoch < 0) result.best = result.latest;
  return result;
}

TrainResult finetune_model(const nn::Model& pretrained,
                           const std::vector<CaseVolume>& train_cases,
                           const std::vector<CaseVolume>& val_cases,
                           const TrainOptions& opt) {
  nn::Model model = pretrained;
  for (auto& t : model.m) t.fill(0.0f);
  for (auto& t : model.v) t.fill(0.0f);
  model.step = 0;
  model.epoch = 0;
  model.pseudo_ema = 0.0;
  model.sched.initial_lr = 0.1 * pretrained.sched.initial_lr;
  model.sched.max_epochs = std::max<int64_t>(opt.epochs, 1);
  if (opt.epochs == 0) {
    TrainResult r;
    r.best = model;
    r.latest = model;
    return r;
  }
  return train_model(std::move(model), train_cases, val_cases, opt);
}

}  // namespace styleseg
